import numpy as np
import pytest

from hydroseq.encodings import (
    EncodingConfig, build_encoding_set, fourier_time, legendre, legendre_time,
    linear_space, linear_time,
)
from hydroseq.errors import DomainError


def test_linear_ramps():
    assert linear_space(3).tolist() == [0.0, 0.5, 1.0]
    assert linear_space(1).tolist() == [0.0]
    assert np.all(np.diff(linear_space(100)) > 0)
    assert linear_time(2).tolist() == [0.0, 1.0]
    assert linear_time(5)[2] == 0.5
    assert linear_time(1).tolist() == [0.0]


def test_fourier_examples():
    f = fourier_time(10, 8)
    assert f[0].tolist() == [0.0, 1.0]
    np.testing.assert_allclose(f[2], [1.0, 0.0], atol=1e-9)
    g = fourier_time(2000, 365.25)
    np.testing.assert_allclose(g[:, 0] ** 2 + g[:, 1] ** 2, 1.0, atol=1e-12)


def test_annual_fourier_repeats():
    g = fourier_time(1600, 365.25)
    # four years is 1461 days = 4 * 365.25 exactly
    np.testing.assert_allclose(g[1461], g[0], atol=1e-6)
    np.testing.assert_allclose(g[1461 + 37], g[37], atol=1e-6)


def closed_form(degree, u):
    return {
        2: (3 * u ** 2 - 1) / 2,
        3: (5 * u ** 3 - 3 * u) / 2,
        4: (35 * u ** 4 - 30 * u ** 2 + 3) / 8,
    }[degree]


@pytest.mark.parametrize("degree", [2, 3, 4])
def test_legendre_recurrence_matches_closed_form(degree):
    u = np.linspace(-1, 1, 101)
    np.testing.assert_allclose(legendre(degree, u), closed_form(degree, u), atol=1e-14)
    t = legendre_time(101, degree)
    np.testing.assert_allclose(t, closed_form(degree, u), atol=1e-14)


def test_legendre_values():
    assert legendre(2, np.array([-1.0, 1.0])).tolist() == [1.0, 1.0]
    assert legendre(2, np.array(0.0)) == -0.5
    u = np.linspace(0, 1, 50)
    np.testing.assert_allclose(legendre(3, -u), -legendre(3, u), atol=1e-15)
    with pytest.raises(DomainError):
        legendre_time(10, 5)


def test_tier_channel_counts():
    n1 = build_encoding_set(EncodingConfig(1), 50, 4)
    assert n1.per_day.shape == (50, 0) and n1.per_catchment.shape == (4, 0)
    n3 = build_encoding_set(EncodingConfig(3), 50, 4)
    assert n3.per_catchment.shape == (4, 1) and n3.per_day.shape == (50, 3)
    n4 = build_encoding_set(EncodingConfig(4), 50, 4)
    assert n4.per_catchment.shape == (4, 1) and n4.per_day.shape == (50, 16)
    assert len(n4.channel_names) == 17


def test_tiers_nested():
    prev = set()
    for tier in (1, 2, 3, 4):
        names = set(build_encoding_set(EncodingConfig(tier), 30, 3).channel_names)
        assert prev <= names
        prev = names
    with pytest.raises(DomainError):
        EncodingConfig(5)


@pytest.mark.parametrize("n_days", [2, 17, 7031, 10**6])
def test_channels_bounded(n_days):
    e = build_encoding_set(EncodingConfig(4), n_days, 5)
    assert np.all(np.abs(e.per_day) <= 1.0 + 1e-12)
    assert np.all(np.abs(e.per_catchment) <= 1.0)
