"""``hydroseq`` command line: synth, ingest, train, eval, compare.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
training error.
"""
import csv
import functools
import json
import logging
import os
import sys

import click
import numpy as np

from . import dataset as ds
from . import pipeline
from .errors import ConfigError, DataError, NumericError
from .synth import generate_dataset

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON with n_catchments, n_days, seed.")
@click.option("--n-catchments", type=int, default=None)
@click.option("--n-days", type=int, default=None)
@click.option("--seed", type=int, default=None)
@_guard
def synth(out, config_path, n_catchments, n_days, seed):
    """Write a synthetic dataset in the CSV layout."""
    opts = {}
    if config_path:
        with open(config_path) as fh:
            try:
                opts = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        opts = opts.get("data", {}).get("synth", opts)
    for key, val in (("n_catchments", n_catchments), ("n_days", n_days), ("seed", seed)):
        if val is not None:
            opts[key] = val
    try:
        s = pipeline.SynthSpec.model_validate(opts)
    except Exception as exc:
        raise ConfigError(f"invalid synth settings: {exc}") from None
    if os.path.isdir(out) and os.listdir(out):
        raise ConfigError(f"refusing to overwrite non-empty directory {out}", field="out")
    ds.export(generate_dataset(s.n_catchments, s.n_days, s.seed), out)
    click.echo(f"wrote {s.n_catchments} catchments x {s.n_days} days to {out}")


@main.command()
@click.argument("root", type=click.Path(exists=True, file_okay=False))
@click.option("--validate", is_flag=True, help="Only check the layout; print a summary.")
@_guard
def ingest(root, validate):
    """Load a dataset directory and report its dimensions."""
    d = ds.load_dataset(root)
    n_missing = int(d.static.missing_mask.sum()) + sum(
        int(m.sum()) for m in d.series.missing_mask.values())
    click.echo(json.dumps({
        "n_catchments": d.n_catchments,
        "n_days": d.n_days,
        "start_date": d.series.start_date.isoformat(),
        "features": d.series.feature_names,
        "static_attributes": d.static.attribute_names,
        "missing_cells": n_missing,
        "valid": True,
    }, indent=2))


def _parse_axis(arg):
    name, _, raw = arg.partition("=")
    if not raw:
        raise ConfigError(f"matrix axis {arg!r} must look like name=v1,v2", field=name)
    values = []
    for tok in raw.split(","):
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)
    return name, values


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the model seed.")
@click.option("--matrix", is_flag=True, help="Run the tier x static grid.")
@click.option("--axis", "axes", multiple=True,
              help="Matrix axis name=v1,v2 (replaces the default grid). Repeatable.")
@click.option("--seeds", default=None, help="Comma-separated seeds for --matrix.")
@_guard
def train(config_path, out, seed, matrix, axes, seeds):
    """Train one configuration (or a run matrix) into OUT."""
    cfg = pipeline.load_config(config_path)
    if seed is not None:
        cfg = pipeline.parse_config({**cfg.model_dump(), "seed": seed})
    if matrix or axes or seeds:
        grid = dict(_parse_axis(a) for a in axes) or None
        seed_list = [int(s) for s in seeds.split(",")] if seeds else None
        summary = pipeline.run_matrix(cfg, out, grid, seed_list)
        click.echo(f"wrote {len(summary)} summary rows to {out}/matrix_summary.csv")
        return
    report = pipeline.run_training(cfg, out)
    for r in report.rows:
        if r.gauge_id == "ALL":
            click.echo(f"{r.target:>18} {r.split:>5} rmse={r.rmse:.6f} nnse={r.nnse:.4f}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", type=click.Path(exists=True, file_okay=False),
              help="Dataset directory (default: the run's configured data).")
@click.option("--split", "split", type=click.Choice(["train", "val", "all"]), default="all")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@_guard
def eval_cmd(checkpoint, data_path, split, out):
    """Evaluate a checkpoint and write metrics.csv."""
    splits = ("train", "val") if split == "all" else (split,)
    pipeline.run_eval(checkpoint, data_path, splits, out)
    click.echo(f"wrote {out}")


@main.command()
@click.argument("series_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("series_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guard
def compare(series_a, series_b, out):
    """Per-gauge Pearson correlation of two series files, plus the mean."""
    pairs = pipeline.compare_series(series_a, series_b)
    mean = float(np.mean([r for _, r in pairs]))
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gauge_id", "pearson_r"])
        for g, r in pairs:
            w.writerow([g, repr(r)])
        w.writerow(["MEAN", repr(mean)])
    finally:
        if out:
            fh.close()


if __name__ == "__main__":
    main()
