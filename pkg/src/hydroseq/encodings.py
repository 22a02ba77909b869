"""Exogenous spatial and temporal encodings.

Five channel families are available: a linear ramp over catchments, a linear
ramp over days, an annual sine/cosine pair, sine/cosine pairs at short
periods, and Legendre polynomials of the rescaled day index. Four cumulative
tiers pick among them (tier 1 has no encodings at all).
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

ANNUAL_PERIOD = 365.25
EXTRA_PERIODS = (8, 16, 32, 64, 128)
LEGENDRE_DEGREES = (2, 3, 4)


@dataclass(frozen=True)
class EncodingConfig:
    tier: int = 3
    include_static: bool = True

    def __post_init__(self):
        if self.tier not in (1, 2, 3, 4):
            raise DomainError(f"encoding tier must be 1..4, got {self.tier}")


@dataclass(frozen=True)
class EncodingSet:
    per_day: np.ndarray
    per_catchment: np.ndarray
    day_names: list
    catchment_names: list

    @property
    def channel_names(self):
        return list(self.catchment_names) + list(self.day_names)


def linear_space(n_catchments):
    if n_catchments < 1:
        raise DomainError("need at least one catchment")
    if n_catchments == 1:
        return np.zeros(1)
    return np.arange(n_catchments) / (n_catchments - 1)


def linear_time(n_days):
    if n_days < 1:
        raise DomainError("need at least one day")
    if n_days == 1:
        return np.zeros(1)
    return np.arange(n_days) / (n_days - 1)


def fourier_time(n_days, period):
    """``(n_days, 2)`` array of sin and cos of ``2*pi*t/period``."""
    if period <= 0:
        raise DomainError("period must be positive")
    phase = 2.0 * np.pi * np.arange(n_days) / period
    return np.column_stack([np.sin(phase), np.cos(phase)])


def legendre(degree, u):
    """P_degree(u) by Bonnet's recurrence (n+1)P_{n+1} = (2n+1)uP_n - nP_{n-1}."""
    u = np.asarray(u, dtype=np.float64)
    p_prev, p = np.ones_like(u), u.copy()
    if degree == 0:
        return p_prev
    for n in range(1, degree):
        p_prev, p = p, ((2 * n + 1) * u * p - n * p_prev) / (n + 1)
    return p


def legendre_time(n_days, degree):
    if degree not in LEGENDRE_DEGREES:
        raise DomainError(f"unsupported Legendre degree {degree}")
    if n_days < 2:
        raise DomainError("legendre_time needs at least two days")
    u = 2.0 * np.arange(n_days) / (n_days - 1) - 1.0
    return legendre(degree, u)


def build_encoding_set(cfg, n_days, n_catchments):
    day_cols, day_names = [], []
    space_cols, space_names = [], []
    if cfg.tier >= 2:
        space_cols.append(linear_space(n_catchments))
        space_names.append("linear_space")
        day_cols.append(linear_time(n_days))
        day_names.append("linear_time")
    if cfg.tier >= 3:
        f = fourier_time(n_days, ANNUAL_PERIOD)
        day_cols += [f[:, 0], f[:, 1]]
        day_names += ["fourier_annual_sin", "fourier_annual_cos"]
    if cfg.tier >= 4:
        for period in EXTRA_PERIODS:
            f = fourier_time(n_days, period)
            day_cols += [f[:, 0], f[:, 1]]
            day_names += [f"fourier_{period}_sin", f"fourier_{period}_cos"]
        for deg in LEGENDRE_DEGREES:
            day_cols.append(legendre_time(n_days, deg))
            day_names.append(f"legendre_{deg}")
    per_day = np.column_stack(day_cols) if day_cols else np.zeros((n_days, 0))
    per_catch = np.column_stack(space_cols) if space_cols else np.zeros((n_catchments, 0))
    return EncodingSet(per_day, per_catch, day_names, space_names)
