"""Feature transforms, PCA of static attributes and train/validation splits."""
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import Rng, sym_eigen

log = logging.getLogger(__name__)

# Tolerance on the cumulative explained-variance comparison; without it a
# threshold of 1.0 can miss by one ulp after summing the ratios.
PCA_THRESHOLD_TOL = 1e-12


@dataclass(frozen=True)
class ScalerParams:
    min: np.ndarray
    max: np.ndarray

    @property
    def degenerate(self):
        return self.max == self.min

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["min"], dtype=float), np.asarray(doc["max"], dtype=float))


def fit_min_max(values):
    """Per-feature extrema over the last axis of ``values``, NaNs ignored.

    A 1-D input is treated as a single feature.
    """
    arr = np.asarray(values, dtype=np.float64)
    flat = arr.reshape(-1, 1) if arr.ndim == 1 else arr.reshape(-1, arr.shape[-1])
    finite = np.isfinite(flat)
    if not finite.any(axis=0).all():
        raise DomainError("every feature needs at least one finite training value")
    lo = np.where(finite, flat, np.inf).min(axis=0)
    hi = np.where(finite, flat, -np.inf).max(axis=0)
    params = ScalerParams(lo, hi)
    if params.degenerate.any():
        log.warning("constant feature(s) at positions %s map to 0.0",
                    np.flatnonzero(params.degenerate).tolist())
    return params


def apply_min_max(x, p):
    x = np.asarray(x, dtype=np.float64)
    span = p.max - p.min
    safe = np.where(span == 0, 1.0, span)
    y = (x - p.min) / safe
    return np.where(span == 0, 0.0, y)


def invert_min_max(y, p):
    y = np.asarray(y, dtype=np.float64)
    return y * (p.max - p.min) + p.min


def signed_cube_root(x):
    return np.cbrt(np.asarray(x, dtype=np.float64))


def cube(y):
    y = np.asarray(y, dtype=np.float64)
    return y * y * y


@dataclass(frozen=True)
class PcaModel:
    """Fitted PCA on standardized columns.

    ``kept`` lists the input columns that survived the zero-variance filter;
    ``mean`` and ``scale`` are their training mean and standard deviation.
    """

    n_attributes: int
    kept: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def k(self):
        return self.components.shape[1]

    def to_dict(self):
        return {
            "n_attributes": self.n_attributes,
            "kept": self.kept.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, doc):
        comps = np.asarray(doc["components"], dtype=float)
        if comps.ndim == 1:
            comps = comps.reshape(len(doc["kept"]), -1)
        return cls(
            int(doc["n_attributes"]),
            np.asarray(doc["kept"], dtype=int),
            np.asarray(doc["mean"], dtype=float),
            np.asarray(doc["scale"], dtype=float),
            comps,
            np.asarray(doc["explained_variance_ratio"], dtype=float),
        )


def choose_k(ratios, threshold):
    """Smallest component count whose cumulative ratio reaches ``threshold``."""
    cum = np.cumsum(ratios)
    hits = np.flatnonzero(cum >= threshold - PCA_THRESHOLD_TOL)
    return int(hits[0]) + 1 if hits.size else len(ratios)


def fit_pca(values, threshold=0.9):
    """Fit PCA on a ``(n_rows, n_attributes)`` table.

    Columns are standardized (sample std) before the covariance is taken;
    constant columns are dropped with a warning.
    """
    if not 0 < threshold <= 1:
        raise DomainError(f"PCA threshold must lie in (0, 1], got {threshold}")
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("fit_pca needs a 2-D table with at least two rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    kept = np.flatnonzero(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    if kept.size < x.shape[1]:
        log.warning("dropping zero-variance static column(s) %s before PCA",
                    np.setdiff1d(np.arange(x.shape[1]), kept).tolist())
    if kept.size == 0:
        raise DomainError("no static column has nonzero variance")
    z = (x[:, kept] - mean[kept]) / std[kept]
    cov = z.T @ z / (x.shape[0] - 1)
    eigvals, eigvecs = sym_eigen(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    ratios = eigvals / eigvals.sum()
    k = choose_k(ratios, threshold)
    return PcaModel(
        x.shape[1], kept, mean[kept], std[kept],
        eigvecs[:, :k].copy(), ratios[:k].copy(),
    )


def apply_pca(m, rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != m.n_attributes:
        raise ShapeError(f"expected {m.n_attributes} columns, got shape {rows.shape}")
    return ((rows[:, m.kept] - m.mean) / m.scale) @ m.components


def reconstruct_pca(m, scores):
    """Map scores back onto the kept (non-constant) input columns."""
    return (np.asarray(scores) @ m.components.T) * m.scale + m.mean


@dataclass(frozen=True)
class SplitAssignment:
    mode: str
    train_indices: np.ndarray
    val_indices: np.ndarray
    seed: int = 0

    def to_dict(self):
        return {
            "mode": self.mode,
            "train_indices": self.train_indices.tolist(),
            "val_indices": self.val_indices.tolist(),
            "seed": self.seed,
        }


def _n_train(n, ratio):
    if not 0 < ratio < 1:
        raise DomainError(f"split ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise DomainError("need at least two items to split")
    # guard against 0.8 * 10 landing a hair above 8
    return min(n, math.ceil(ratio * n - 1e-9))


def split_by_location(n_catchments, ratio=0.8, seed=0):
    """Seeded shuffle of catchment indices; the first ceil(ratio*n) train.

    Both index arrays are returned sorted so catchment order is preserved.
    """
    n_train = _n_train(n_catchments, ratio)
    perm = Rng(seed, stream=0x5EED).permutation(n_catchments)
    return SplitAssignment(
        "location", np.sort(perm[:n_train]), np.sort(perm[n_train:]), int(seed)
    )


def split_by_time(n_days, ratio=0.8, seed=0):
    n_train = _n_train(n_days, ratio)
    idx = np.arange(n_days)
    return SplitAssignment("time", idx[:n_train], idx[n_train:], int(seed))


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2)
