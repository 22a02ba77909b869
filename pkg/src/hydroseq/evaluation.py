"""Goodness-of-fit metrics and per-gauge evaluation reports.

The normalized NSE used throughout is ``NNSE = 1 / (2 - NSE)``: it maps
NSE in (-inf, 1] onto (0, 1], equals 1 for a perfect fit and 0.5 for a
model that always predicts the observed mean.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError, ShapeError

METRICS_COLUMNS = ("target", "split", "gauge_id", "rmse", "nse", "nnse", "rmse_physical")


@dataclass(frozen=True)
class GaugeSeriesPair:
    observed: np.ndarray
    modeled: np.ndarray
    gauge_id: str = ""

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.float64)
        mod = np.asarray(self.modeled, dtype=np.float64)
        if obs.shape != mod.shape or obs.ndim != 1:
            raise ShapeError("observed and modeled series must be equal-length vectors")
        if obs.size < 2:
            raise ShapeError("need at least two time steps")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "modeled", mod)


def rmse(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {obs.shape}")
    if pred.size == 0:
        raise ShapeError("rmse of empty input")
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def nse(pair):
    obs, mod = pair.observed, pair.modeled
    denom = np.sum((obs - obs.mean()) ** 2)
    if denom == 0:
        raise DegenerateInputError(f"gauge {pair.gauge_id!r} has zero observed variance")
    return float(1.0 - np.sum((obs - mod) ** 2) / denom)


def nnse_from_nse(value):
    if value == -math.inf:
        return 0.0
    return 1.0 / (2.0 - value)


def nnse(pair):
    return nnse_from_nse(nse(pair))


@dataclass
class MetricsRow:
    target: str
    split: str
    gauge_id: str
    rmse: float
    nse: float
    nnse: float
    rmse_physical: float = math.nan


@dataclass
class MetricsReport:
    """Aggregate rows use ``gauge_id == "ALL"``; ``excluded`` lists gauges
    left out of the NNSE mean for zero observed variance."""

    rows: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    def aggregate(self, target, split):
        for r in self.rows:
            if r.target == target and r.split == split and r.gauge_id == "ALL":
                return r
        raise KeyError((target, split))

    def per_gauge(self, target, split):
        return [r for r in self.rows
                if r.target == target and r.split == split and r.gauge_id != "ALL"]

    def extend(self, other):
        self.rows.extend(other.rows)
        self.excluded.extend(other.excluded)
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_COLUMNS)
            for r in self.rows:
                w.writerow([r.target, r.split, r.gauge_id,
                            repr(r.rmse), repr(r.nse), repr(r.nnse), repr(r.rmse_physical)])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(MetricsRow(
                    rec["target"], rec["split"], rec["gauge_id"],
                    float(rec["rmse"]), float(rec["nse"]), float(rec["nnse"]),
                    float(rec.get("rmse_physical", "nan")),
                ))
        return cls(rows)


def evaluate_arrays(pred, obs, target_names, gauge_ids, split, inverse=None):
    """Build a report from ``(n_days, n_gauges, n_targets)`` arrays.

    Args:
        pred, obs: Predictions and observations on the scaled axis.
        target_names: One name per target channel.
        gauge_ids: One id per gauge column.
        split: Label written into every row (e.g. ``"train"``).
        inverse: Optional callable ``(values, target_index) -> physical``
            used for the ``rmse_physical`` column.
    """
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape or pred.ndim != 3:
        raise ShapeError(f"prediction shape {pred.shape} != observation shape {obs.shape}")
    if pred.shape[1] == 0:
        raise ContractError("cannot evaluate an empty split")
    report = MetricsReport()
    for k, target in enumerate(target_names):
        p, o = pred[:, :, k], obs[:, :, k]
        phys = (lambda a, b: rmse(inverse(a, k), inverse(b, k))) if inverse else None
        nses, nnses = [], []
        for g, gid in enumerate(gauge_ids):
            pair = GaugeSeriesPair(o[:, g], p[:, g], gid)
            try:
                e = nse(pair)
            except DegenerateInputError:
                report.excluded.append((target, split, gid))
                e = math.nan
                n = math.nan
            else:
                n = nnse_from_nse(e)
                nses.append(e)
                nnses.append(n)
            report.rows.append(MetricsRow(
                target, split, gid, rmse(p[:, g], o[:, g]), e, n,
                phys(p[:, g], o[:, g]) if phys else math.nan,
            ))
        report.rows.append(MetricsRow(
            target, split, "ALL", rmse(p, o),
            float(np.mean(nses)) if nses else math.nan,
            float(np.mean(nnses)) if nnses else math.nan,
            phys(p, o) if phys else math.nan,
        ))
    return report


def evaluate(predict, data, l_seq, target_names, gauge_ids, split, inverse=None):
    """Evaluate a predictor over every horizon-1 window of ``data``.

    ``predict`` maps ``(data, l_seq)`` to ``(n_windows, n_gauges,
    n_targets)`` predictions aligned with ``data.targets[l_seq:]``; pass
    ``lambda d, l: model.predict_windows(params, d, l)`` for a trained net.
    """
    if data.inputs.shape[1] == 0:
        raise ContractError("cannot evaluate an empty split")
    pred = predict(data, l_seq)
    obs = data.targets[l_seq:]
    return evaluate_arrays(pred, obs, target_names, gauge_ids, split, inverse)
