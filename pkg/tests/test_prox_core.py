import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgepath.prox_core import (
    NoRoot,
    ThresholdParams,
    half_threshold_closed,
    hard_threshold,
    scalar_threshold,
    soft_threshold,
    solve_root,
    threshold_constants,
    threshold_scalar,
    vector_threshold,
)
from oracles import bisect_root, grid_min, scalar_objective

Q_SET = [0.1, 1 / 3, 0.5, 2 / 3, 0.9, 1.0]
# root of theta + 0.5 theta^(-1/2) = 3 on (1, 3), from plain bisection
ROOT_HALF_3 = bisect_root(lambda t: t + 0.5 * t ** -0.5 - 3.0, 1.0, 3.0)


# ---- threshold_constants

def test_constants_half_unit():
    c = threshold_constants(0.5, 1.0)
    assert c.c_q == pytest.approx(1.5, rel=1e-14)
    assert c.t_q_lam == pytest.approx(1.5, rel=1e-14)
    assert c.theta_q_lam == pytest.approx(1.0, rel=1e-14)


def test_constants_half_lam8():
    assert threshold_constants(0.5, 8.0).t_q_lam == pytest.approx(6.0, rel=1e-13)


def test_constants_two_thirds_forms_agree():
    q = 2 / 3
    theta = (2 / 3) ** 0.75
    expected = theta + q * theta ** (q - 1)
    c = threshold_constants(q, 1.0)
    assert c.theta_q_lam == pytest.approx(theta, rel=1e-14)
    assert c.t_q_lam == pytest.approx(expected, rel=1e-12)
    assert c.c_q * 1.0 ** (1 / (2 - q)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("q,lam", [(0.0, 1.0), (1.0, 1.0), (1.2, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_constants_reject(q, lam):
    with pytest.raises(ValueError):
        threshold_constants(q, lam)


@given(st.floats(0.01, 0.99), st.floats(1e-3, 1e3))
def test_constants_threshold_exceeds_jump(q, lam):
    c = threshold_constants(q, lam)
    assert c.t_q_lam > c.theta_q_lam > 0.0


# ---- solve_root

def test_root_half_example():
    r = solve_root(0.5, 1.0, 3.0)
    assert r == pytest.approx(ROOT_HALF_3, abs=1e-12)
    assert r == pytest.approx(2.6953, abs=5e-4)
    assert abs(r + 0.5 * r ** -0.5 - 3.0) <= 1e-12 * 4


def test_root_boundary_is_no_root():
    with pytest.raises(NoRoot):
        solve_root(0.5, 1.0, 1.5)


@pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
def test_root_zero_penalty_limit(q):
    assert solve_root(q, 1e-12, 5.0) == pytest.approx(5.0, rel=1e-9)


@given(st.sampled_from([0.1, 1 / 3, 0.5, 2 / 3, 0.9]), st.floats(0.01, 10.0), st.floats(1.0001, 50.0))
def test_root_residual_and_branch(q, lam, factor):
    c = threshold_constants(q, lam)
    z = c.t_q_lam * factor
    r = solve_root(q, lam, z)
    assert c.theta_q_lam < r < z
    assert abs(r + lam * q * r ** (q - 1) - z) <= 1e-12 * (1 + z)


# ---- scalar_threshold

def test_scalar_examples():
    assert scalar_threshold(ThresholdParams(0.5, 1.0), 1.4) == 0.0
    assert scalar_threshold(ThresholdParams(1.0, 1.0), 2.0) == 1.0
    assert scalar_threshold(ThresholdParams(1.0, 1.0), 0.5) == 0.0
    assert scalar_threshold(ThresholdParams(0.5, 1.0), 3.0) == pytest.approx(ROOT_HALF_3, abs=1e-12)


def test_scalar_weight_multiplies():
    assert scalar_threshold(ThresholdParams(1.0, 0.5, 2.0), 2.0) == 1.0


def test_scalar_zero_input():
    for q in Q_SET:
        assert scalar_threshold(ThresholdParams(q, 1.0), 0.0) == 0.0
        assert scalar_threshold(ThresholdParams(q, 1.0), 5e-324) == 0.0


@pytest.mark.parametrize("q", [0.1, 1 / 3, 0.5, 2 / 3, 0.9])
def test_tie_goes_to_zero(q):
    t = threshold_constants(q, 1.0).t_q_lam
    assert threshold_scalar(q, 1.0, t) == 0.0
    assert threshold_scalar(q, 1.0, -t) == 0.0


@pytest.mark.parametrize("bad", [dict(q=0.0, lam=1.0), dict(q=1.5, lam=1.0), dict(q=0.5, lam=-1.0),
                                 dict(q=0.5, lam=1.0, w=0.0), dict(q=0.5, lam=math.nan)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        ThresholdParams(**bad)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(Q_SET), st.floats(0.01, 5.0), st.floats(-10.0, 10.0))
def test_scalar_oracle_optimal(q, lam_w, z):
    t = threshold_scalar(q, lam_w, z)
    assert scalar_objective(q, lam_w, z, t) <= grid_min(q, lam_w, z) + 1e-9


@given(st.sampled_from(Q_SET), st.floats(0.0, 5.0), st.floats(-100.0, 100.0))
def test_odd_symmetry_exact(q, lam_w, z):
    assert threshold_scalar(q, lam_w, -z) == -threshold_scalar(q, lam_w, z)


@given(st.sampled_from(Q_SET[:-1]), st.floats(0.01, 5.0), st.floats(-50.0, 50.0))
def test_dead_zone(q, lam_w, z):
    t = abs(threshold_scalar(q, lam_w, z))
    assert t == 0.0 or t >= threshold_constants(q, lam_w).theta_q_lam * (1 - 1e-12)


@given(st.sampled_from(Q_SET), st.floats(0.0, 5.0), st.floats(-100.0, 100.0))
def test_shrinkage_bound(q, lam_w, z):
    assert abs(threshold_scalar(q, lam_w, z)) <= abs(z)


def test_bisector_approach():
    z = 1e3
    assert z - threshold_scalar(0.5, 1.0, z) < 0.02


def test_soft_limit():
    gaps = [abs(threshold_scalar(0.999, 1.0, z) - float(soft_threshold(1.0, z)))
            for z in (3, -3, 5, -5, 10, -10)]
    assert max(gaps) < 0.02


def test_hard_limit_operator():
    assert np.array_equal(hard_threshold(0.5, [0.9, 1.1, -2.0]), [0.0, 1.1, -2.0])


# ---- half_threshold_closed

def test_half_closed_examples():
    expected = 2 * (1 + math.cos(2 * math.pi / 3 - (2 / 3) * math.acos(1 / 4)))
    assert half_threshold_closed(1.0, 3.0) == pytest.approx(expected, rel=1e-14)
    assert half_threshold_closed(1.0, 3.0) == pytest.approx(ROOT_HALF_3, abs=1e-12)
    assert half_threshold_closed(1.0, -3.0) == -half_threshold_closed(1.0, 3.0)
    assert half_threshold_closed(1.0, 1.5) == 0.0


def test_half_closed_matches_root_solver():
    rng = np.random.default_rng(11)
    lw = rng.uniform(0.01, 5.0, 1000)
    z = rng.uniform(-20.0, 20.0, 1000)
    for a, b in zip(lw, z):
        t = threshold_constants(0.5, a).t_q_lam
        closed = half_threshold_closed(a, b)
        if abs(b) <= t:
            assert closed == 0.0
        else:
            assert closed == pytest.approx(math.copysign(solve_root(0.5, a, abs(b)), b), abs=1e-10)


# ---- vector_threshold

def test_vector_examples():
    assert np.array_equal(vector_threshold([2.0, 0.5], 1.0, [1.0, 1.0]), [1.0, 0.0])
    out = vector_threshold([1.4, 3.0], 0.5, [1.0, 1.0])
    assert out[0] == 0.0 and out[1] == pytest.approx(ROOT_HALF_3, abs=1e-12)
    z = np.array([0.3, -4.0, 7.0])
    assert np.array_equal(vector_threshold(z, 0.5, 0.0), z)


def test_vector_mixed_q_matches_scalar():
    rng = np.random.default_rng(5)
    z = rng.uniform(-6, 6, 200)
    q = rng.choice(Q_SET, 200)
    lw = rng.uniform(0, 3, 200)
    out = vector_threshold(z, q, lw)
    ref = [threshold_scalar(a, b, c) for a, b, c in zip(q, lw, z)]
    assert np.allclose(out, ref, rtol=0, atol=1e-14)


def test_vector_dimension_mismatch():
    with pytest.raises(ValueError):
        vector_threshold([1.0, 2.0], 0.5, [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        vector_threshold([1.0, 2.0], [0.5], [1.0, 1.0])
