"""Seeded synthetic catchments driven by a one-bucket water balance.

Each catchment keeps a single soil-moisture store ``SM`` and, per day::

    P_t  = max(0, rain_mean + rain_amplitude * sin(w t + phase) + eps_t)
    ET_t = max(0, et_mean + et_amplitude * sin(w t + phase - pi/4))
    Q_t  = k * SM_t
    SM_{t+1} = max(0, SM_t + P_t - ET_t - Q_t)

with ``w = 2 pi / 365.25`` and Gaussian ``eps_t``. Groundwater exchange is
zero, so runoff equals streamflow and, while no clamp fires,
``SM_T - SM_0 = sum(P - ET - Q)``.

The static attributes are uniform draws in [0, 1]; every process parameter
is a fixed linear function of them (see :func:`params_from_attributes`), so
a model that sees the static table can in principle recover each
catchment's behaviour.
"""
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import make_dataset
from .numerics import Rng

OMEGA = 2.0 * math.pi / 365.25
ET_PHASE_LAG = math.pi / 4
START_DATE = dt.date(1989, 10, 2)

STATIC_ATTRIBUTES = (
    "soil_conductivity",   # -> runoff coefficient k
    "humidity",            # -> rain_mean
    "seasonality",         # -> rain and temperature amplitude
    "wet_season_timing",   # -> rain_phase
    "aridity",             # -> et_mean, et_amplitude
    "elevation",           # -> temperature level
    "storminess",          # -> noise_scale
)
FEATURES = ("precipitation", "temperature_mean", "streamflow")


@dataclass(frozen=True)
class SynthCatchmentParams:
    runoff_coefficient: float
    rain_mean: float
    rain_amplitude: float
    rain_phase: float
    et_mean: float
    et_amplitude: float
    noise_scale: float
    initial_soil_moisture: float
    temp_mean: float = 10.0
    temp_amplitude: float = 8.0
    temp_phase: float = 0.0
    temp_noise: float = 1.5
    attributes: tuple = field(default=())

    def __post_init__(self):
        if not 0 < self.runoff_coefficient < 1:
            raise ValueError("runoff coefficient must lie in (0, 1)")
        for name in ("rain_mean", "rain_amplitude", "et_mean", "et_amplitude",
                     "noise_scale", "initial_soil_moisture"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class WaterBalanceState:
    soil_moisture: float
    gw_in: float = 0.0
    gw_out: float = 0.0


@dataclass(frozen=True)
class CatchmentSeries:
    """Daily output of one catchment; ``soil_moisture`` has ``n_days + 1`` entries."""

    precipitation: np.ndarray
    evapotranspiration: np.ndarray
    temperature_mean: np.ndarray
    streamflow: np.ndarray
    soil_moisture: np.ndarray
    clamped: np.ndarray


def params_from_attributes(a):
    """Linear map from the seven static attributes to process parameters."""
    a = np.asarray(a, dtype=np.float64)
    soil, humid, season, timing, arid, elev, storm = a
    rain_mean = 1.0 + 5.0 * humid
    return SynthCatchmentParams(
        runoff_coefficient=0.02 + 0.18 * soil,
        rain_mean=rain_mean,
        rain_amplitude=(0.2 + 0.7 * season) * rain_mean,
        rain_phase=2.0 * math.pi * timing,
        et_mean=(0.2 + 0.4 * arid) * rain_mean,
        et_amplitude=(0.1 + 0.3 * arid) * rain_mean,
        noise_scale=0.5 + 3.0 * storm,
        initial_soil_moisture=20.0 + 30.0 * humid,
        temp_mean=20.0 - 15.0 * elev,
        temp_amplitude=4.0 + 10.0 * season,
        temp_phase=2.0 * math.pi * timing + math.pi / 2,
        temp_noise=1.0 + 1.0 * storm,
        attributes=tuple(a.tolist()),
    )


def generate_catchment(p, n_days, seed):
    if n_days < 1:
        raise ValueError("n_days must be positive")
    rng = Rng(seed)
    t = np.arange(n_days)
    eps = rng.normal(0.0, 1.0, n_days) * p.noise_scale
    temp_eps = rng.normal(0.0, 1.0, n_days) * p.temp_noise
    rain_raw = p.rain_mean + p.rain_amplitude * np.sin(OMEGA * t + p.rain_phase) + eps
    precip = np.maximum(0.0, rain_raw)
    et_raw = p.et_mean + p.et_amplitude * np.sin(OMEGA * t + p.rain_phase - ET_PHASE_LAG)
    et = np.maximum(0.0, et_raw)
    temp = p.temp_mean + p.temp_amplitude * np.sin(OMEGA * t + p.temp_phase) + temp_eps

    k = p.runoff_coefficient
    sm = np.empty(n_days + 1)
    q = np.empty(n_days)
    clamped = (rain_raw < 0) | (et_raw < 0)
    sm[0] = p.initial_soil_moisture
    for d in range(n_days):
        q[d] = k * sm[d]
        nxt = sm[d] + precip[d] - et[d] - q[d]
        if nxt < 0:
            clamped[d] = True
            nxt = 0.0
        sm[d + 1] = nxt
    return CatchmentSeries(precip, et, temp, q, sm, clamped)


def generate_dataset(n_catchments, n_days, seed):
    """Dataset of ``n_catchments`` synthetic gauges with series P, T_mean, Q."""
    if n_catchments < 1 or n_days < 1:
        raise ValueError("counts must be positive")
    root = Rng(seed)
    attrs = root.uniform(0.0, 1.0, size=(n_catchments, len(STATIC_ATTRIBUTES)))
    cols = {f: np.empty((n_days, n_catchments)) for f in FEATURES}
    for j in range(n_catchments):
        series = generate_catchment(params_from_attributes(attrs[j]), n_days,
                                    seed=_catchment_seed(seed, j))
        cols["precipitation"][:, j] = series.precipitation
        cols["temperature_mean"][:, j] = series.temperature_mean
        cols["streamflow"][:, j] = series.streamflow
    ids = [f"syn{j:04d}" for j in range(n_catchments)]
    return make_dataset(ids, STATIC_ATTRIBUTES, attrs, cols, START_DATE, source="synthetic")


def _catchment_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1, np.uint64)[0])
