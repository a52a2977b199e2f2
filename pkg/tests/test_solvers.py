import csv

import numpy as np
import pytest

from bridgepath.losses import GroupedVector, QuadraticLSALoss, SmoothLossModel
from bridgepath.path import lambda_max
from bridgepath.penalty import PenaltySpec
from bridgepath.solvers import (
    NonFinite,
    _stop,
    SolverConfig,
    apg_solve,
    cd_solve,
    objective_value,
    palm_solve,
    solve,
    solver_steps,
    update_map,
)
from oracles import lasso_kkt_residual, random_blocks, random_spd

TIGHT = SolverConfig(tol_rel=1e-12, max_iter=100_000)
SOLVERS = [apg_solve, palm_solve, cd_solve]


def identity_problem(lam=1.0, q=1.0, sizes=(2,)):
    loss = QuadraticLSALoss(np.eye(2), [3.0, 0.5], sizes)
    return loss, PenaltySpec.uniform(sizes, q, lam=lam)


def random_problem(seed, q=1.0, p=None):
    rng = np.random.default_rng(seed)
    p = p or int(rng.integers(3, 20))
    sizes = random_blocks(rng, p)
    loss = QuadraticLSALoss(random_spd(rng, p), rng.normal(size=p) * 2, sizes)
    pen = PenaltySpec.uniform(sizes, q, weights=rng.uniform(0.5, 2.0, p))
    lam = lambda_max(loss, pen) * rng.uniform(0.05, 0.6)
    return loss, pen.with_lam(lam)


def assert_monotone(trace):
    d = np.diff(trace)
    assert np.all(d <= 1e-12 * np.maximum(1.0, np.abs(trace[1:])))


# ---- objective_value

def test_objective_examples():
    loss, pen = identity_problem()
    x = np.array([2.0, 0.0])
    assert objective_value(loss, pen, x) == pytest.approx(2.625, abs=1e-15)
    assert objective_value(loss, pen.with_lam(0.0), x) == loss.value(x)
    assert objective_value(loss, pen, np.zeros(2)) == loss.value(np.zeros(2))
    assert objective_value(loss, pen, GroupedVector(x)) == pytest.approx(2.625, abs=1e-15)


def test_objective_dimension_mismatch():
    loss, pen = identity_problem()
    with pytest.raises(ValueError):
        objective_value(loss, pen, np.zeros(3))


# ---- config

@pytest.mark.parametrize("kw", [dict(step_safety=1.0), dict(step_safety=0.0), dict(tol_rel=0.0),
                                dict(max_iter=0), dict(apg_variant="other")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


# ---- identity examples

@pytest.mark.parametrize("fn", SOLVERS)
def test_identity_soft_threshold(fn):
    loss, pen = identity_problem()
    res = fn(loss, pen, None, TIGHT)
    assert res.converged
    assert np.allclose(res.theta.flat, [2.0, 0.0], atol=1e-10)
    assert res.theta.flat[1] == 0.0
    assert res.objective == pytest.approx(objective_value(loss, pen, res.theta), abs=1e-15)


def test_palm_single_block_and_two_block_same_fixed_point():
    for sizes in [(2,), (1, 1)]:
        loss, pen = identity_problem(sizes=sizes)
        assert np.allclose(palm_solve(loss, pen, None, TIGHT).theta.flat, [2.0, 0.0], atol=1e-10)


@pytest.mark.parametrize("fn", SOLVERS)
def test_above_lambda_max_gives_zero(fn):
    loss, pen = identity_problem()
    lm = lambda_max(loss, pen)
    assert lm == pytest.approx(3.0)
    res = fn(loss, pen.with_lam(lm * 1.0001), np.zeros(2), TIGHT)
    assert np.array_equal(res.theta.flat, [0.0, 0.0])


def test_cd_identity_first_sweep_and_limit():
    # with steps alpha/g_kk < 1/g_kk a single sweep lands at the damped point
    loss, pen = identity_problem()
    one = update_map(loss, pen, np.zeros(2), "cd")
    assert np.allclose(one, [0.9 * 3.0 - 0.9, 0.0])
    assert np.allclose(cd_solve(loss, pen, None, TIGHT).theta.flat, [2.0, 0.0], atol=1e-10)


@pytest.mark.parametrize("fn", SOLVERS)
def test_zero_penalty_reaches_theta_tilde(fn):
    rng = np.random.default_rng(2)
    loss = QuadraticLSALoss(random_spd(rng, 5), rng.normal(size=5), (2, 3))
    pen = PenaltySpec.uniform((2, 3), 0.5, lam=0.0)
    res = fn(loss, pen, None, TIGHT)
    assert np.allclose(res.theta.flat, loss.theta_tilde, atol=1e-7)


def test_palm_block_diagonal_is_separable():
    rng = np.random.default_rng(5)
    G1, G2 = random_spd(rng, 3), random_spd(rng, 2)
    G = np.zeros((5, 5))
    G[:3, :3], G[3:, 3:] = G1, G2
    tt = rng.normal(size=5) * 2
    pen = PenaltySpec.uniform((3, 2), 1.0, lam=0.3)
    joint = palm_solve(QuadraticLSALoss(G, tt, (3, 2)), pen, None, TIGHT).theta.flat
    a = palm_solve(QuadraticLSALoss(G1, tt[:3]), PenaltySpec.uniform((3,), 1.0, lam=0.3), None, TIGHT)
    b = palm_solve(QuadraticLSALoss(G2, tt[3:]), PenaltySpec.uniform((2,), 1.0, lam=0.3), None, TIGHT)
    assert np.allclose(joint, np.concatenate([a.theta.flat, b.theta.flat]), atol=1e-9)


# ---- convex random instances

@pytest.mark.parametrize("seed", range(8))
def test_kkt_and_agreement_q1(seed):
    loss, pen = random_problem(seed)
    lw = pen.lam_w()
    objs = []
    for fn in SOLVERS:
        res = fn(loss, pen, None, TIGHT)
        assert lasso_kkt_residual(loss.G, loss.theta_tilde, lw, res.theta.flat) <= 1e-6
        assert_monotone(res.objective_trace)
        objs.append(res.objective)
    assert max(objs) - min(objs) <= 1e-6


@pytest.mark.parametrize("variant", ["reference", "literal"])
def test_apg_variants_monotone_and_converge(variant):
    loss, pen = random_problem(11)
    cfg = SolverConfig(tol_rel=1e-12, max_iter=100_000, apg_variant=variant)
    res = apg_solve(loss, pen, None, cfg)
    assert res.converged
    assert_monotone(res.objective_trace)
    assert lasso_kkt_residual(loss.G, loss.theta_tilde, pen.lam_w(), res.theta.flat) <= 1e-6


def test_apg_rate_envelope():
    for seed in range(5):
        loss, pen = random_problem(30 + seed)
        ref = apg_solve(loss, pen, None, TIGHT)
        res = apg_solve(loss, pen, None, SolverConfig(tol_rel=1e-12, max_iter=200))
        Lam = np.linalg.eigvalsh(loss.G)[-1]
        t = np.arange(res.objective_trace.size)
        bound = 2 * Lam * np.sum(ref.theta.flat ** 2) / (0.9 * (t + 1) ** 2)
        assert np.all(res.objective_trace - ref.objective <= bound + 1e-12)


# ---- nonconvex

@pytest.mark.parametrize("fn", SOLVERS)
@pytest.mark.parametrize("q", [0.5, 2 / 3])
def test_bridge_fixed_point_and_descent(fn, q):
    loss, pen = random_problem(7, q=q)
    res = fn(loss, pen, None, SolverConfig(tol_rel=1e-10, max_iter=100_000))
    assert res.converged
    assert_monotone(res.objective_trace)
    algo = {apg_solve: "apg", palm_solve: "palm", cd_solve: "cd"}[fn]
    again = update_map(loss, pen, res.theta, algo)
    scale = max(1.0, np.max(np.abs(res.theta.flat)))
    assert np.max(np.abs(again - res.theta.flat)) <= 1e-6 * scale
    assert res.objective <= objective_value(loss, pen, np.zeros(loss.dim))


def test_mixed_q_blocks():
    loss, pen = random_problem(12, p=6)
    sizes = loss.block_sizes
    mixed = PenaltySpec.uniform(sizes, [1.0 if i % 2 else 0.5 for i in range(len(sizes))],
                                lam=pen.lam, weights=pen.weights)
    for fn in SOLVERS:
        res = fn(loss, mixed, None, TIGHT)
        assert_monotone(res.objective_trace)


# ---- results and traces

def test_trace_csv(tmp_path):
    loss, pen = identity_problem()
    res = apg_solve(loss, pen)
    out = tmp_path / "trace.csv"
    res.write_trace_csv(out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["iter", "objective", "max_abs_change"]
    assert len(rows) == res.iterations + 2
    assert float(rows[-1][1]) == res.objective_trace[-1]


def test_solve_dispatch_and_unknown():
    loss, pen = identity_problem()
    assert solve(loss, pen, algorithm="palm").algorithm == "palm"
    with pytest.raises(ValueError):
        solve(loss, pen, algorithm="newton")
    with pytest.raises(ValueError):
        update_map(loss, pen, np.zeros(2), "newton")
    with pytest.raises(ValueError):
        solver_steps(loss, "newton")


def test_block_mismatch_and_bad_init():
    loss, _ = identity_problem()
    with pytest.raises(ValueError):
        apg_solve(loss, PenaltySpec.uniform((1, 1), 1.0, lam=1.0))
    with pytest.raises(ValueError):
        apg_solve(loss, PenaltySpec.uniform((2,), 1.0, lam=1.0), np.zeros(3))


def test_max_iter_reports_not_converged():
    loss, pen = random_problem(3)
    res = palm_solve(loss, pen, None, SolverConfig(max_iter=1))
    assert res.iterations == 1 and not res.converged


class _NanLoss(SmoothLossModel):
    def value(self, x):
        return float("nan") if np.any(np.abs(x) > 0.5) else 0.5 * float(np.sum((x - 2.0) ** 2))

    def grad(self, x):
        return x - 2.0


@pytest.mark.parametrize("algo", ["apg", "palm", "cd"])
def test_non_finite_raises(algo):
    loss = _NanLoss((2,), lipschitz=1.0)
    with pytest.raises(NonFinite):
        solve(loss, PenaltySpec.uniform((2,), 1.0, lam=0.01), None, SolverConfig(), algo)


def test_domain_box_warning():
    loss, pen = identity_problem(lam=0.1)
    with pytest.warns(RuntimeWarning, match="domain"):
        apg_solve(loss, pen, None, SolverConfig(domain_box=(-1.0, 1.0)))


def test_steps():
    loss = QuadraticLSALoss(np.diag([4.0, 2.0, 1.0]), np.zeros(3), (1, 2))
    assert np.allclose(solver_steps(loss, "apg"), 0.9 / 4.0, rtol=1e-5)
    assert np.allclose(solver_steps(loss, "palm"), [0.9 / 4, 0.9 / 2, 0.9 / 2], rtol=1e-5)
    assert np.allclose(solver_steps(loss, "cd"), [0.9 / 4, 0.9 / 2, 0.9])


def test_stop_rule_accepts_rounding_flip_at_zero():
    # an iterate flipping between 0 and a few ulps must count as converged
    x = np.zeros(3)
    assert _stop(x, 4 * np.finfo(float).eps, 10.0, 10.0, 10.0, 1e-8)
    assert not _stop(x, 1e-6, 10.0, 10.0, 10.0, 1e-8)
    assert not _stop(np.ones(3), 1e-6, 10.0, 10.0, 10.0, 1e-8)
