import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opocomb.model import (OpoParams, pump_ratio, steady_state, threshold_pump,
                           threshold_residual)


@pytest.mark.parametrize("k_a,k_p,chi,expected", [
    (2.0, 8.0, 1.0, 2.0),
    (1.0, 2.0, 1.0, 0.5),
    (1.0, 1.0, 0.5, 1 / math.sqrt(2)),
])
def test_threshold_pump_values(k_a, k_p, chi, expected):
    assert threshold_pump(OpoParams(k_a=k_a, k_p=k_p, chi=chi)) == pytest.approx(expected, rel=1e-12)


def test_single_pair_above_threshold():
    ss = steady_state(OpoParams(n=1, sigma=4.0))
    assert ss.alpha[0] ** 2 == pytest.approx(0.25, rel=1e-12)
    assert ss.pump_mean == 0.5


def test_equal_split_between_pairs():
    ss = steady_state(OpoParams(n=2, sigma=4.0))
    np.testing.assert_allclose(ss.alpha ** 2, [0.125, 0.125], rtol=1e-12)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_amplitudes_vanish_at_threshold(n):
    ss = steady_state(OpoParams.from_dimensionless(2.0, 1.0, n))
    assert np.all(ss.alpha == 0)
    assert np.all(ss.phases == 0)


def test_profile_sets_ratios_and_norm():
    p = OpoParams.from_dimensionless(1.5, 3.0, 3, profile=[1, 2, 0])
    ss = steady_state(p)
    assert ss.alpha[1] / ss.alpha[0] == pytest.approx(2.0)
    assert ss.alpha[2] == 0
    assert threshold_residual(p, ss) < 1e-12 * p.k_a * p.k_p
    assert p.profile_ratio(2, 1) == 2.0
    with pytest.raises(ValueError):
        p.profile_ratio(1, 3)


@pytest.mark.parametrize("kwargs", [
    dict(k_a=0.0), dict(k_p=-1.0), dict(chi=float("nan")), dict(n=0), dict(n=1.5),
    dict(sigma=0.99), dict(n=2, amplitude_profile=(1.0,)), dict(n=2, amplitude_profile=(0.0, 0.0)),
    dict(n=2, amplitude_profile=(1.0, -1.0)),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ValueError):
        OpoParams(**kwargs)


def test_json_round_trip_and_schema():
    p = OpoParams.from_dimensionless(2.0, 1.7, 2, profile=[1.0, 3.0], k_a=0.5, chi=2.0)
    assert OpoParams.from_json(p.to_json()) == p
    with pytest.raises(ValueError, match="unknown"):
        OpoParams.from_json({"kappa": 1, "sigma": 2, "n": 1, "gain": 3})
    with pytest.raises(ValueError, match="missing"):
        OpoParams.from_json({"kappa": 1, "n": 1})


def test_comb_frequencies_are_symmetric_about_half_pump():
    p = OpoParams(n=2, omega_p=10.0, fsr=1.0)
    f = p.comb_frequencies()
    assert f[1] + f[-1] == pytest.approx(10.0)
    assert f[2] - f[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        OpoParams(n=1).comb_frequencies()


params_strategy = st.builds(
    OpoParams,
    k_a=st.floats(0.01, 100), k_p=st.floats(0.01, 100), chi=st.floats(0.01, 10),
    n=st.integers(1, 12), sigma=st.floats(1.0, 100.0),
)


@settings(max_examples=200, deadline=None)
@given(params_strategy)
def test_threshold_relation_holds(p):
    ss = steady_state(p)
    assert threshold_residual(p, ss) < 1e-12 * p.k_a * p.k_p
    assert ss.pump_mean == p.k_a / (2 * p.chi)
    assert pump_ratio(ss.pump_in, p) == pytest.approx(p.sigma, rel=1e-12)
    assert np.all(ss.alpha >= 0)


@settings(max_examples=100, deadline=None)
@given(params_strategy, st.floats(0.01, 100))
def test_rate_scaling_leaves_sigma_invariant(p, c):
    # a change of time unit rescales every rate, the coupling included
    drive = steady_state(p).pump_in
    scaled = OpoParams(k_a=c * p.k_a, k_p=c * p.k_p, chi=c * p.chi, n=p.n, sigma=p.sigma)
    assert pump_ratio(math.sqrt(c) * drive, scaled) == pytest.approx(p.sigma, rel=1e-12)
    # with the coupling held fixed the threshold grows as c**1.5 instead
    fixed = OpoParams(k_a=c * p.k_a, k_p=c * p.k_p, chi=p.chi, n=p.n, sigma=p.sigma)
    assert threshold_pump(fixed) == pytest.approx(c ** 1.5 * threshold_pump(p), rel=1e-12)
