"""Config-driven runs: data preparation, training, evaluation and run matrices."""
import csv
import itertools
import json
import logging
import os
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import dataset as ds
from . import model as mdl
from .encodings import EncodingConfig, build_encoding_set
from .errors import AlignmentError, ConfigError, DomainError, SchemaError, ShapeError
from .evaluation import MetricsReport, evaluate
from .numerics import Rng
from .preprocess import (
    PcaModel, ScalerParams, apply_min_max, apply_pca, cube, fit_min_max, fit_pca,
    invert_min_max, signed_cube_root, split_by_location, split_by_time,
)
from .synth import generate_dataset

log = logging.getLogger(__name__)

# series that are predicted but never fed back as inputs
TARGET_ONLY = ("streamflow",)
CUBE_ROOT_SERIES = ("precipitation", "streamflow")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSpec(_Strict):
    n_catchments: int = Field(50, ge=1)
    n_days: int = Field(1460, ge=2)
    seed: int = Field(42, ge=0)


class DataSpec(_Strict):
    path: Optional[str] = None
    synth: Optional[SynthSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.synth is None):
            raise ValueError("give exactly one of data.path or data.synth")
        return self


class SplitSpec(_Strict):
    mode: Literal["location", "time"] = "location"
    ratio: float = Field(0.8, gt=0, lt=1)
    seed: int = Field(0, ge=0)


class RunConfig(_Strict):
    data: DataSpec = Field(default_factory=lambda: DataSpec(synth=SynthSpec()))
    features: list[str] = ["precipitation", "temperature_mean"]
    targets: list[str] = ["precipitation", "temperature_mean", "streamflow"]
    encoding_tier: Literal[1, 2, 3, 4] = 3
    include_static: bool = True
    use_pca: bool = False
    pca_threshold: float = Field(0.9, gt=0, le=1)
    transform: Literal["minmax", "minmax+cuberoot"] = "minmax"
    split: SplitSpec = Field(default_factory=SplitSpec)
    l_seq: int = Field(21, ge=1)
    lr: float = Field(0.001, gt=0)
    dropout: float = Field(0.2, ge=0, lt=1)
    successful_epochs: int = Field(120, ge=0)
    max_epochs: Optional[int] = Field(None, ge=0)
    encoder_size: int = Field(64, ge=1)
    hidden_size: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_series(self):
        if not self.features:
            raise ValueError("features must not be empty")
        if not self.targets:
            raise ValueError("targets must not be empty")
        leaked = [f for f in self.features if f in TARGET_ONLY]
        if leaked:
            raise ValueError(f"features may not include target-only series {leaked}")
        return self

    def train_config(self):
        return mdl.TrainConfig(
            successful_epochs=self.successful_epochs, lr=self.lr, l_seq=self.l_seq,
            encoder_size=self.encoder_size, hidden_size=self.hidden_size,
            dropout=self.dropout, max_epochs=self.max_epochs, seed=self.seed,
        )


def parse_config(doc):
    """Validate a config mapping; errors name the offending field."""
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigError(f"invalid config field {where!r}: {err['msg']}", field=where) from None


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc)


def load_data(cfg):
    if cfg.data.synth is not None:
        s = cfg.data.synth
        return generate_dataset(s.n_catchments, s.n_days, s.seed)
    return ds.load_dataset(cfg.data.path)


@dataclass
class Fitted:
    """Preprocessing state fitted on the training partition."""

    split: dict
    series_scalers: dict
    static_pca: Optional[PcaModel]
    static_scaler: Optional[ScalerParams]

    def to_dict(self):
        return {
            "split": self.split,
            "series_scalers": {k: v.to_dict() for k, v in self.series_scalers.items()},
            "static_pca": self.static_pca.to_dict() if self.static_pca else None,
            "static_scaler": self.static_scaler.to_dict() if self.static_scaler else None,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            doc["split"],
            {k: ScalerParams.from_dict(v) for k, v in doc["series_scalers"].items()},
            PcaModel.from_dict(doc["static_pca"]) if doc.get("static_pca") else None,
            ScalerParams.from_dict(doc["static_scaler"]) if doc.get("static_scaler") else None,
        )


@dataclass
class Prepared:
    train: mdl.WindowData
    val: mdl.WindowData
    train_gauges: list
    val_gauges: list
    input_names: list
    fitted: Fitted

    def inverse(self, cfg):
        """Callable mapping scaled target values back to physical units."""
        def inv(values, k):
            name = cfg.targets[k]
            x = invert_min_max(values, self.fitted.series_scalers[name])
            if cfg.transform == "minmax+cuberoot" and name in CUBE_ROOT_SERIES:
                x = cube(x)
            return x
        return inv


def _make_split(cfg, d):
    if cfg.split.mode == "location":
        return split_by_location(d.n_catchments, cfg.split.ratio, cfg.split.seed)
    return split_by_time(d.n_days, cfg.split.ratio, cfg.split.seed)


def prepare(cfg, d, fitted=None):
    """Turn a Dataset into model-ready train/validation tensors.

    Steps: mean-impute static and series holes, split, cube-root (optional)
    then min-max scale every series, optionally PCA-reduce and scale the
    static table, add encodings, and assemble the input tensor
    ``[features, static, per-catchment encodings, per-day encodings]``.
    Scalers and PCA are fitted on the training partition unless ``fitted``
    supplies them.
    """
    names = list(dict.fromkeys(cfg.features + cfg.targets))
    missing = [n for n in names if n not in d.series.values]
    if missing:
        raise ShapeError(f"dataset lacks series {missing}")
    if d.static.missing_mask.any():
        d = ds.impute_static_means(d)
    for n in names:
        if d.series.missing_mask.get(n, np.isnan(d.series.values[n])).any():
            d = ds.impute_series_mean(d, n)

    if fitted is None:
        split = _make_split(cfg, d).to_dict()
    else:
        split = fitted.split
    train_idx = np.asarray(split["train_indices"], dtype=int)
    val_idx = np.asarray(split["val_indices"], dtype=int)
    if len(val_idx) == 0 or len(train_idx) == 0:
        raise DomainError("split leaves an empty partition")
    by_location = split["mode"] == "location"
    if by_location and max(train_idx.max(), val_idx.max()) >= d.n_catchments:
        raise ShapeError("stored split does not fit this dataset")

    def train_part(a):
        return a[:, train_idx] if by_location else a[train_idx]

    series, scalers = {}, {}
    for n in names:
        x = d.series.values[n]
        if cfg.transform == "minmax+cuberoot" and n in CUBE_ROOT_SERIES:
            x = signed_cube_root(x)
        if fitted is None:
            scalers[n] = fit_min_max(train_part(x).reshape(-1))
        else:
            scalers[n] = fitted.series_scalers[n]
        series[n] = apply_min_max(x, scalers[n])

    D, G = d.n_days, d.n_catchments
    blocks, input_names = [np.stack([series[n] for n in cfg.features], axis=-1)], list(cfg.features)
    pca = static_scaler = None
    if cfg.include_static:
        static = d.static.values
        train_rows = static[train_idx] if by_location else static
        if cfg.use_pca:
            pca = fit_pca(train_rows, cfg.pca_threshold) if fitted is None else fitted.static_pca
            static = apply_pca(pca, static)
            train_rows = apply_pca(pca, train_rows)
            static_names = [f"pc{j + 1}" for j in range(static.shape[1])]
        else:
            static_names = list(d.static.attribute_names)
        static_scaler = fit_min_max(train_rows) if fitted is None else fitted.static_scaler
        if static_scaler.min.shape[0] != static.shape[1]:
            raise ShapeError("stored static scaler does not match static columns")
        static = apply_min_max(static, static_scaler)
        blocks.append(np.broadcast_to(static[None], (D, G, static.shape[1])))
        input_names += static_names

    enc = build_encoding_set(EncodingConfig(cfg.encoding_tier, cfg.include_static), D, G)
    if enc.per_catchment.shape[1]:
        blocks.append(np.broadcast_to(enc.per_catchment[None], (D, G, enc.per_catchment.shape[1])))
    if enc.per_day.shape[1]:
        blocks.append(np.broadcast_to(enc.per_day[:, None], (D, G, enc.per_day.shape[1])))
    input_names += enc.catchment_names + enc.day_names
    inputs = np.concatenate(blocks, axis=-1)
    targets = np.stack([series[n] for n in cfg.targets], axis=-1)

    ids = d.gauge_ids
    if by_location:
        tr = mdl.WindowData(inputs[:, train_idx], targets[:, train_idx])
        va = mdl.WindowData(inputs[:, val_idx], targets[:, val_idx])
        tr_g, va_g = [ids[j] for j in train_idx], [ids[j] for j in val_idx]
    else:
        n_train = len(train_idx)
        if n_train < cfg.l_seq + 1 or n_train - cfg.l_seq < 0:
            raise DomainError("time split leaves too few training days for l_seq")
        tr = mdl.WindowData(inputs[:n_train], targets[:n_train])
        # validation windows may look back into training days; targets stay in val
        va = mdl.WindowData(inputs[n_train - cfg.l_seq:], targets[n_train - cfg.l_seq:])
        tr_g = va_g = list(ids)
    for part, label in ((tr, "train"), (va, "val")):
        if part.inputs.shape[0] < cfg.l_seq + 1:
            raise DomainError(f"{label} partition is shorter than l_seq + 1 days")
    return Prepared(tr, va, tr_g, va_g, input_names, Fitted(split, scalers, pca, static_scaler))


def metrics_for(cfg, params, prep, splits=("train", "val")):
    report = MetricsReport()
    inv = prep.inverse(cfg)
    for label in splits:
        data = prep.train if label == "train" else prep.val
        gauges = prep.train_gauges if label == "train" else prep.val_gauges
        report.extend(evaluate(
            lambda d, l: mdl.predict_windows(params, d, l),
            data, cfg.l_seq, cfg.targets, gauges, label, inverse=inv,
        ))
    return report


def write_losses(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_rmse", "val_rmse", "successful"])
        for e in history.epochs:
            w.writerow([e.epoch, repr(e.train_rmse), repr(e.val_rmse), int(e.successful)])


def run_training(cfg, out_dir, dataset=None):
    """Train one configuration and write its run directory.

    Writes ``checkpoint.ckpt``, ``losses.csv``, ``metrics.csv``,
    ``preprocessing.json`` and ``resolved-config.json``. Returns the
    metrics report.
    """
    os.makedirs(out_dir, exist_ok=True)
    resolved = cfg.model_dump(mode="json")
    with open(os.path.join(out_dir, "resolved-config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
    d = dataset if dataset is not None else load_data(cfg)
    prep = prepare(cfg, d)
    log.info("training %s: %d inputs, %d train / %d val gauges",
             out_dir, len(prep.input_names), len(prep.train_gauges), len(prep.val_gauges))
    params, history = mdl.train(cfg.train_config(), prep.train, prep.val, rng=Rng(cfg.seed))
    write_losses(history, os.path.join(out_dir, "losses.csv"))
    with open(os.path.join(out_dir, "preprocessing.json"), "w") as fh:
        json.dump(prep.fitted.to_dict(), fh, indent=2)
    meta = {"config": resolved, "preprocessing": prep.fitted.to_dict(),
            "input_names": prep.input_names, "seed": cfg.seed}
    mdl.save_checkpoint(params, os.path.join(out_dir, "checkpoint.ckpt"), meta=meta)
    report = metrics_for(cfg, params, prep)
    report.to_csv(os.path.join(out_dir, "metrics.csv"))
    return report


def run_eval(checkpoint_path, data_path=None, splits=("train", "val"), out_path=None):
    """Re-evaluate a checkpoint; its header carries config and preprocessing."""
    params, header = mdl.read_checkpoint(checkpoint_path)
    meta = header.get("meta", {})
    if "config" not in meta:
        raise ConfigError("checkpoint carries no run configuration")
    cfg = parse_config(meta["config"])
    if data_path is not None:
        cfg = cfg.model_copy(update={"data": DataSpec(path=data_path)})
    fitted = Fitted.from_dict(meta["preprocessing"]) if meta.get("preprocessing") else None
    prep = prepare(cfg, load_data(cfg), fitted=fitted)
    n_in = prep.train.inputs.shape[-1]
    if n_in != params.n_inputs or len(cfg.targets) != params.n_targets:
        raise ShapeError(
            f"checkpoint expects {params.n_inputs} inputs / {params.n_targets} targets, "
            f"data provides {n_in} / {len(cfg.targets)}"
        )
    report = metrics_for(cfg, params, prep, splits)
    if out_path:
        report.to_csv(out_path)
    return report


TABLE_VIII_AXES = {"encoding_tier": [1, 2, 3, 4], "include_static": [False, True]}


def _run_name(combo, seed):
    parts = [f"{k}={v}" for k, v in combo.items()]
    if seed is not None:
        parts.append(f"seed={seed}")
    return "__".join(parts).replace("+", "p")


def run_matrix(base, out_dir, axes=None, seeds=None, dataset=None):
    """Run every combination of ``axes`` (default: tier x static) per seed.

    Each seed overrides both the model seed and the split seed. Writes one
    run directory per combination plus ``matrix.csv`` (aggregate rows of
    every run) and ``matrix_summary.csv`` (means over seeds). Returns the
    summary rows.
    """
    axes = axes or TABLE_VIII_AXES
    keys = list(axes)
    seed_list = list(seeds) if seeds else [None]
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for values in itertools.product(*(axes[k] for k in keys)):
        combo = dict(zip(keys, values))
        for seed in seed_list:
            update = dict(combo)
            if seed is not None:
                update["seed"] = seed
                update["split"] = base.split.model_copy(update={"seed": seed})
            cfg = parse_config({**base.model_dump(), **update,
                                "split": (update.get("split") or base.split).model_dump()})
            report = run_training(cfg, os.path.join(out_dir, _run_name(combo, seed)), dataset)
            for r in report.rows:
                if r.gauge_id == "ALL":
                    rows.append({**combo, "seed": seed, "target": r.target,
                                 "split": r.split, "rmse": r.rmse, "nnse": r.nnse})
    fields = keys + ["seed", "target", "split", "rmse", "nnse"]
    _write_dicts(os.path.join(out_dir, "matrix.csv"), fields, rows)

    summary = {}
    for r in rows:
        key = tuple(r[k] for k in keys) + (r["target"], r["split"])
        summary.setdefault(key, []).append(r)
    out = []
    for key, group in summary.items():
        rec = dict(zip(keys + ["target", "split"], key))
        rec["n_seeds"] = len(group)
        rec["rmse"] = float(np.mean([g["rmse"] for g in group]))
        rec["nnse"] = float(np.mean([g["nnse"] for g in group]))
        out.append(rec)
    _write_dicts(os.path.join(out_dir, "matrix_summary.csv"),
                 keys + ["target", "split", "n_seeds", "rmse", "nnse"], out)
    return out


def _write_dicts(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def compare_series(path_a, path_b):
    """Per-gauge Pearson correlation between two series CSV files.

    Only gauges and dates present in both files are compared. Returns a
    list of ``(gauge_id, r)`` pairs in file-A column order.
    """
    def read(path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "date":
            raise SchemaError(f"{path} must start with a date column")
        cols = rows[0][1:]
        data = {}
        for r in rows[1:]:
            data[r[0]] = [ds._parse_cell(c, path) for c in r[1:]]
        return cols, data

    cols_a, a = read(path_a)
    cols_b, b = read(path_b)
    dates = [t for t in a if t in b]
    gauges = [g for g in cols_a if g in cols_b]
    if len(dates) < 2 or not gauges:
        raise AlignmentError("files share fewer than two dates or no gauges")
    out = []
    for g in gauges:
        ia, ib = cols_a.index(g), cols_b.index(g)
        xa = np.array([a[t][ia] for t in dates])
        xb = np.array([b[t][ib] for t in dates])
        ok = ~(np.isnan(xa) | np.isnan(xb))
        out.append((g, ds.pearson_correlation(xa[ok], xb[ok])))
    return out
