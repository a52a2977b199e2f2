import json

import numpy as np
import pytest

from bridgepath.losses import QuadraticLSALoss
from bridgepath.path import lambda_max, make_grid, path_diagnostics, solve_path
from bridgepath.penalty import PenaltySpec
from bridgepath.solvers import SolverConfig, objective_value, solve, update_map
from oracles import bridge_fixture, random_blocks, random_spd

TIGHT = SolverConfig(tol_rel=1e-12, max_iter=100_000)


# ---- lambda_max

def test_lambda_max_identity_lasso():
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0])
    assert lambda_max(loss, PenaltySpec.uniform((2,), 1.0)) == pytest.approx(3.0, rel=1e-15)


def test_lambda_max_half_unit_case():
    loss = QuadraticLSALoss([[1.0]], [1.5])
    assert lambda_max(loss, PenaltySpec.uniform((1,), 0.5)) == pytest.approx(1.0, rel=1e-5)


def test_lambda_max_weights_divide():
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0])
    pen = PenaltySpec.uniform((2,), 1.0, weights=[3.0, 0.5])
    assert lambda_max(loss, pen) == pytest.approx(4.0)


@pytest.mark.parametrize("algo", ["apg", "palm", "cd"])
@pytest.mark.parametrize("seed", range(10))
def test_lambda_max_zero_fixed_point(algo, seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 15))
    sizes = random_blocks(rng, p)
    qs = [float(rng.choice([1.0, 0.5, 0.3, 0.8])) for _ in sizes]
    loss = QuadraticLSALoss(random_spd(rng, p), rng.normal(size=p) * 3, sizes)
    pen = PenaltySpec.uniform(sizes, qs, weights=rng.uniform(0.2, 3.0, p))
    lm = lambda_max(loss, pen, algo)
    assert np.array_equal(update_map(loss, pen.with_lam(lm * (1 + 1e-9)), np.zeros(p), algo), np.zeros(p))


def test_lambda_max_mixed_blocks_half_is_nonzero():
    rng = np.random.default_rng(21)
    loss = QuadraticLSALoss(random_spd(rng, 6), rng.normal(size=6) * 3, (3, 3))
    pen = PenaltySpec.uniform((3, 3), [1.0, 0.5])
    lm = lambda_max(loss, pen)
    assert np.all(update_map(loss, pen.with_lam(1.001 * lm), np.zeros(6)) == 0.0)
    assert np.any(update_map(loss, pen.with_lam(0.5 * lm), np.zeros(6)) != 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_lambda_max_tight_for_lasso(seed):
    rng = np.random.default_rng(50 + seed)
    p = int(rng.integers(2, 12))
    sizes = random_blocks(rng, p)
    loss = QuadraticLSALoss(random_spd(rng, p), rng.normal(size=p), sizes)
    pen = PenaltySpec.uniform(sizes, 1.0)
    lm = lambda_max(loss, pen)
    assert np.any(solve(loss, pen.with_lam(0.999 * lm), None, TIGHT).theta.flat != 0.0)


def test_lambda_max_rejects_block_mismatch_and_algo():
    loss = QuadraticLSALoss(np.eye(2), [1.0, 1.0])
    with pytest.raises(ValueError):
        lambda_max(loss, PenaltySpec.uniform((1, 1), 1.0))
    with pytest.raises(ValueError):
        lambda_max(loss, PenaltySpec.uniform((2,), 0.5), "newton")


# ---- make_grid

def test_grid_examples():
    assert np.allclose(make_grid(1.0, 3, 0.01), [1.0, 0.1, 0.01], rtol=1e-14)
    assert np.allclose(make_grid(2.0, 2, 0.25), [2.0, 0.5], rtol=1e-14)
    g = make_grid(3.0, 100, 1e-3)
    assert g[0] == 3.0 and g[-1] == pytest.approx(0.003, rel=1e-12) and g.size == 100
    assert np.all(np.diff(g) < 0)


@pytest.mark.parametrize("args", [(1.0, 1, 0.1), (1.0, 2.5, 0.1), (1.0, 3, 0.0), (1.0, 3, 1.0), (0.0, 3, 0.1)])
def test_grid_invalid(args):
    with pytest.raises(ValueError):
        make_grid(*args)


# ---- solve_path

def test_path_single_point_zero():
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0])
    pen = PenaltySpec.uniform((2,), 0.5)
    lm = lambda_max(loss, pen)
    path = solve_path(loss, pen, [lm])
    assert np.array_equal(path.coef, np.zeros((1, 2)))
    assert path.lambda_max == lm


def test_path_identity_lasso_is_soft_threshold():
    tt = np.array([3.0, -2.0, 0.7, 0.0])
    loss = QuadraticLSALoss(np.eye(4), tt)
    pen = PenaltySpec.uniform((4,), 1.0)
    grid = make_grid(lambda_max(loss, pen), 20, 0.01)
    path = solve_path(loss, pen, grid, cfg=TIGHT)
    expected = np.sign(tt) * np.maximum(np.abs(tt)[None, :] - grid[:, None], 0.0)
    assert np.allclose(path.coef, expected, atol=1e-9)
    assert path_diagnostics(path).n_jumps == 0


def test_path_first_point_zero_and_warm_start_consistency():
    rng = np.random.default_rng(4)
    loss = QuadraticLSALoss(random_spd(rng, 8), rng.normal(size=8) * 2, (4, 4))
    pen = PenaltySpec.uniform((4, 4), 1.0)
    grid = make_grid(lambda_max(loss, pen), 15, 0.01)
    path = solve_path(loss, pen, grid, cfg=TIGHT)
    assert path.lambdas[0] == path.lambda_max
    assert np.array_equal(path.coef[0], np.zeros(8))
    for k in (3, 9, 14):
        cold = solve(loss, pen.with_lam(grid[k]), None, TIGHT)
        assert cold.objective == pytest.approx(path.results[k].objective, abs=1e-8)


def test_bridge_fixture_jumps():
    G, tt, sizes = bridge_fixture()
    loss = QuadraticLSALoss(G, tt, sizes)
    for q, expect_jump in [(0.5, True), (1.0, False)]:
        pen = PenaltySpec.uniform(sizes, q)
        path = solve_path(loss, pen, make_grid(lambda_max(loss, pen), 100, 1e-3))
        rep = path_diagnostics(path)
        assert (rep.n_jumps >= 1) is expect_jump
        for j in rep.jumps:
            assert j["gap"] > j["floor"] / 2


def test_path_grid_validation():
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0])
    pen = PenaltySpec.uniform((2,), 1.0)
    with pytest.raises(ValueError):
        solve_path(loss, pen, [])
    with pytest.raises(ValueError):
        solve_path(loss, pen, [1.0, 2.0])


def test_path_failure_recorded_and_skipped():
    class Flaky(QuadraticLSALoss):
        def value(self, x):
            v = super().value(x)
            return float("nan") if abs(x[0]) > 1.5 else v

        def value_and_grad(self, x):
            return self.value(x), self.grad(x)

    loss = Flaky(np.eye(2), [3.0, -2.0])
    pen = PenaltySpec.uniform((2,), 1.0)
    grid = [3.0, 2.0, 1.0, 0.5]
    path = solve_path(loss, pen, grid, cfg=TIGHT)
    assert path.failed == [2, 3]
    assert np.all(np.isnan(path.coef[2]))
    d = path.to_dict()
    assert d["path"][2]["error"].startswith("NonFinite") and d["path"][2]["objective"] is None
    assert d["path"][1]["error"] is None


def test_path_outputs(tmp_path):
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0], (1, 1))
    pen = PenaltySpec.uniform((1, 1), 0.5)
    path = solve_path(loss, pen, make_grid(lambda_max(loss, pen), 5, 0.1))
    path.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "lambda,objective,iterations,converged,theta_1,theta_2"
    assert len(lines) == 6
    path.write_json(tmp_path / "p.json")
    data = json.loads((tmp_path / "p.json").read_text())
    assert data["block_sizes"] == [1, 1]
    assert len(data["path"][0]["blocks"]) == 2
    for k, row in enumerate(data["path"]):
        assert row["objective"] == pytest.approx(objective_value(loss, pen.with_lam(path.lambdas[k]), path.coef[k]))


def test_diagnostics_all_zero_prefix():
    loss = QuadraticLSALoss(np.eye(2), [3.0, -2.0])
    pen = PenaltySpec.uniform((2,), 1.0)
    path = solve_path(loss, pen, [10.0, 8.0, 5.0])
    rep = path_diagnostics(path)
    assert rep.zero_prefix == 3
    assert rep.sparsity.tolist() == [0, 0, 0]
    assert rep.to_dict()["n_jumps"] == 0
