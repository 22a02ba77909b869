"""CAMELS-style data model: per-catchment static attributes plus daily series.

On-disk layout (read by :func:`load_dataset`, written by :func:`export`)::

    <root>/static.csv            gauge_id,<attr>,<attr>,...
    <root>/series/<feature>.csv  date,<gauge_id>,<gauge_id>,...

Dates are ISO-8601 and must be consecutive days, identical across feature
files. Missing cells are empty or the literal ``NaN``; they are flagged in a
mask and kept as NaN until an explicit imputation step.
"""
import csv
import datetime as dt
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateInputError,
    DomainError,
    HarmonizationError,
    ImputationError,
    IngestionError,
    LookupFeatureError,
    SchemaError,
    ShapeError,
)

MISSING_TOKENS = {"", "nan", "NaN", "NAN"}

_MONTHS = {
    name: i + 1
    for i, names in enumerate(
        [
            ("jan", "january"), ("feb", "february"), ("mar", "march"),
            ("apr", "april"), ("may",), ("jun", "june"), ("jul", "july"),
            ("aug", "august"), ("sep", "sept", "september"),
            ("oct", "october"), ("nov", "november"), ("dec", "december"),
        ]
    )
    for name in names
}


@dataclass(frozen=True)
class Catchment:
    id: str
    source: str
    index: int


@dataclass(frozen=True)
class StaticTable:
    attribute_names: list
    values: np.ndarray
    missing_mask: np.ndarray

    def column(self, name):
        try:
            return self.values[:, self.attribute_names.index(name)]
        except ValueError:
            raise LookupFeatureError(f"unknown static attribute {name!r}") from None


@dataclass(frozen=True)
class SeriesTensor:
    """Daily series; ``values[feature]`` has shape ``(n_days, n_catchments)``."""

    feature_names: list
    n_days: int
    start_date: dt.date
    values: dict
    missing_mask: dict = field(default_factory=dict)

    def dates(self):
        return [self.start_date + dt.timedelta(days=t) for t in range(self.n_days)]

    def stack(self, names):
        """``(n_days, n_catchments, len(names))`` array of the named features."""
        missing = [n for n in names if n not in self.values]
        if missing:
            raise LookupFeatureError(f"unknown series feature(s): {missing}")
        return np.stack([self.values[n] for n in names], axis=-1)


@dataclass(frozen=True)
class Dataset:
    catchments: list
    static: StaticTable
    series: SeriesTensor

    def __post_init__(self):
        n = len(self.catchments)
        if self.static.values.shape[0] != n:
            raise ShapeError("static row count does not match catchment count")
        for name, arr in self.series.values.items():
            if arr.shape != (self.series.n_days, n):
                raise ShapeError(f"series {name!r} has shape {arr.shape}")

    @property
    def n_catchments(self):
        return len(self.catchments)

    @property
    def n_days(self):
        return self.series.n_days

    @property
    def gauge_ids(self):
        return [c.id for c in self.catchments]

    def subset(self, indices):
        """Dataset restricted to the given catchment indices (re-indexed)."""
        idx = np.asarray(indices, dtype=int)
        cats = [
            Catchment(self.catchments[j].id, self.catchments[j].source, k)
            for k, j in enumerate(idx)
        ]
        static = StaticTable(
            list(self.static.attribute_names),
            self.static.values[idx].copy(),
            self.static.missing_mask[idx].copy(),
        )
        series = replace(
            self.series,
            values={k: v[:, idx].copy() for k, v in self.series.values.items()},
            missing_mask={k: v[:, idx].copy() for k, v in self.series.missing_mask.items()},
        )
        return Dataset(cats, static, series)


def make_dataset(gauge_ids, attribute_names, static_values, feature_values,
                 start_date, source="synthetic"):
    """Build a Dataset from in-memory arrays, deriving the missing masks."""
    if len(set(gauge_ids)) != len(gauge_ids):
        raise SchemaError("duplicate catchment id")
    static_values = np.asarray(static_values, dtype=np.float64).reshape(len(gauge_ids), -1)
    cats = [Catchment(str(g), source, i) for i, g in enumerate(gauge_ids)]
    values = {k: np.asarray(v, dtype=np.float64) for k, v in feature_values.items()}
    n_days = next(iter(values.values())).shape[0] if values else 0
    series = SeriesTensor(
        list(values), n_days, start_date, values,
        {k: np.isnan(v) for k, v in values.items()},
    )
    static = StaticTable(list(attribute_names), static_values, np.isnan(static_values))
    return Dataset(cats, static, series)


def encode_month_ordinal(month):
    """Map month 1..12 onto [0, 1] as ``(month - 1) / 11``."""
    if isinstance(month, bool) or int(month) != month or not 1 <= month <= 12:
        raise DomainError(f"month must be an integer in 1..12, got {month!r}")
    return (int(month) - 1) / 11.0


def _parse_cell(text, where):
    text = text.strip()
    if text in MISSING_TOKENS:
        return math.nan
    try:
        return float(text)
    except ValueError:
        pass
    month = _MONTHS.get(text.lower())
    if month is None:
        raise SchemaError(f"non-numeric value {text!r} at {where}")
    return encode_month_ordinal(month)


def _read_rows(path):
    if not os.path.isfile(path):
        raise IngestionError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"empty file: {path}")
    return rows[0], rows[1:]


def load_dataset(root, manifest=None):
    """Read a dataset directory.

    Args:
        root: Directory holding ``static.csv`` and ``series/``.
        manifest: Optional dict with ``features`` (list of series names to
            load, default every ``series/*.csv`` in sorted order) and
            ``source`` (archive name, default the directory name).

    Raises:
        IngestionError: A required file is missing or malformed.
        AlignmentError: Dates are not consecutive or differ between features.
        SchemaError: Duplicate gauge ids, unknown gauges or bad cells.
    """
    manifest = manifest or {}
    source = manifest.get("source") or os.path.basename(os.path.normpath(root))
    header, rows = _read_rows(os.path.join(root, "static.csv"))
    if not header or header[0] != "gauge_id":
        raise SchemaError("static.csv must start with a gauge_id column")
    gauge_ids = [r[0] for r in rows]
    if len(set(gauge_ids)) != len(gauge_ids):
        dupes = sorted({g for g in gauge_ids if gauge_ids.count(g) > 1})
        raise SchemaError(f"duplicate catchment id(s): {dupes}")
    attrs = header[1:]
    static = np.empty((len(rows), len(attrs)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"static.csv row {i + 2} has {len(r)} cells")
        for j, cell in enumerate(r[1:]):
            static[i, j] = _parse_cell(cell, f"static.csv:{i + 2}:{attrs[j]}")

    series_dir = os.path.join(root, "series")
    features = manifest.get("features")
    if features is None:
        if not os.path.isdir(series_dir):
            raise IngestionError(f"missing directory: {series_dir}")
        features = sorted(f[:-4] for f in os.listdir(series_dir) if f.endswith(".csv"))
    if not features:
        raise IngestionError("no series files found")

    values, dates_ref = {}, None
    for feat in features:
        fhead, frows = _read_rows(os.path.join(series_dir, f"{feat}.csv"))
        if not fhead or fhead[0] != "date":
            raise SchemaError(f"{feat}.csv must start with a date column")
        cols = fhead[1:]
        unknown = set(cols) - set(gauge_ids)
        absent = set(gauge_ids) - set(cols)
        if unknown or absent or len(cols) != len(set(cols)):
            raise SchemaError(
                f"{feat}.csv gauges do not match static.csv "
                f"(unknown={sorted(unknown)}, absent={sorted(absent)})"
            )
        try:
            dates = [dt.date.fromisoformat(r[0]) for r in frows]
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{feat}.csv has a malformed date: {exc}") from None
        for a, b in zip(dates, dates[1:]):
            if (b - a).days != 1:
                raise AlignmentError(f"{feat}.csv: dates jump from {a} to {b}")
        if dates_ref is None:
            dates_ref = dates
        elif dates != dates_ref:
            raise AlignmentError(f"{feat}.csv dates differ from {features[0]}.csv")
        pos = [cols.index(g) for g in gauge_ids]
        arr = np.empty((len(frows), len(gauge_ids)))
        for t, r in enumerate(frows):
            if len(r) != len(fhead):
                raise SchemaError(f"{feat}.csv row {t + 2} has {len(r)} cells")
            for j, p in enumerate(pos):
                arr[t, j] = _parse_cell(r[p + 1], f"{feat}.csv:{t + 2}:{gauge_ids[j]}")
        values[feat] = arr

    if not dates_ref:
        raise IngestionError("series files contain no rows")
    return make_dataset(gauge_ids, attrs, static, values, dates_ref[0], source=source)


def _fmt(x):
    return "NaN" if math.isnan(x) else repr(float(x))


def export(dataset, root):
    """Write ``dataset`` in the canonical layout; floats use round-trip repr."""
    os.makedirs(os.path.join(root, "series"), exist_ok=True)
    with open(os.path.join(root, "static.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gauge_id", *dataset.static.attribute_names])
        for c, row in zip(dataset.catchments, dataset.static.values):
            w.writerow([c.id, *(_fmt(x) for x in row)])
    dates = dataset.series.dates()
    for feat in dataset.series.feature_names:
        with open(os.path.join(root, "series", f"{feat}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", *dataset.gauge_ids])
            for d, row in zip(dates, dataset.series.values[feat]):
                w.writerow([d.isoformat(), *(_fmt(x) for x in row)])


def intersect_static(datasets):
    """Concatenate datasets, keeping only static attributes present in all.

    The kept attributes are sorted by name. Catchments keep input-dataset
    order, then each source's own order.
    """
    if len(datasets) < 2:
        raise HarmonizationError("intersect_static needs at least two datasets")
    first = datasets[0]
    feats = set(first.series.feature_names)
    for d in datasets[1:]:
        if set(d.series.feature_names) != feats:
            raise HarmonizationError("series feature sets differ between datasets")
        if d.n_days != first.n_days or d.series.start_date != first.series.start_date:
            raise AlignmentError("datasets cover different calendar ranges")
    shared = set(first.static.attribute_names)
    for d in datasets[1:]:
        shared &= set(d.static.attribute_names)
    if not shared:
        raise HarmonizationError("datasets share no static attributes")
    names = sorted(shared)

    cats, vals, masks = [], [], []
    for d in datasets:
        cols = [d.static.attribute_names.index(n) for n in names]
        vals.append(d.static.values[:, cols])
        masks.append(d.static.missing_mask[:, cols])
        cats.extend(d.catchments)
    ids = [c.id for c in cats]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate catchment id across datasets")
    catchments = [Catchment(c.id, c.source, i) for i, c in enumerate(cats)]
    feat_names = list(first.series.feature_names)
    series = SeriesTensor(
        feat_names,
        first.n_days,
        first.series.start_date,
        {f: np.concatenate([d.series.values[f] for d in datasets], axis=1) for f in feat_names},
        {f: np.concatenate([d.series.missing_mask[f] for d in datasets], axis=1) for f in feat_names},
    )
    static = StaticTable(names, np.vstack(vals), np.vstack(masks))
    return Dataset(catchments, static, series)


def impute_static_means(d):
    values = d.static.values.copy()
    mask = d.static.missing_mask
    for j, name in enumerate(d.static.attribute_names):
        observed = ~mask[:, j]
        if not observed.any():
            raise ImputationError(f"static attribute {name!r} has no observed values")
        if observed.all():
            continue
        values[~observed, j] = values[observed, j].mean()
    static = StaticTable(list(d.static.attribute_names), values, np.zeros_like(mask))
    return Dataset(d.catchments, static, d.series)


def impute_series_mean(d, feature):
    """Fill holes in one series with the mean over every observed cell."""
    if feature not in d.series.values:
        raise LookupFeatureError(f"unknown series feature {feature!r}")
    arr = d.series.values[feature]
    mask = d.series.missing_mask.get(feature, np.isnan(arr))
    if not mask.any():
        return d
    if mask.all():
        raise ImputationError(f"series {feature!r} has no observed values")
    filled = arr.copy()
    filled[mask] = arr[~mask].mean()
    values = dict(d.series.values)
    masks = dict(d.series.missing_mask)
    values[feature] = filled
    masks[feature] = np.zeros_like(mask)
    return Dataset(d.catchments, d.static, replace(d.series, values=values, missing_mask=masks))


def pearson_correlation(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("pearson_correlation needs two equal-length 1-D series")
    if a.size < 2:
        raise DegenerateInputError("need at least two observations")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise DegenerateInputError("series has zero variance")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))
