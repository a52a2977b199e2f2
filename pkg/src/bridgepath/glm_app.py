"""Penalized Gaussian linear regression study: bridge vs one-step LLA vs LASSO.

Data follow ``y = X theta0 + eps`` with AR(1)-correlated columns
(``corr(x_i, x_j) = rho**|i-j|``) and a sparse ``theta0``. Every estimator is
fitted through the least-squares-approximation loss
``0.5 (theta - ols)' X'X (theta - ols)``, which differs from half the residual
sum of squares only by a constant. Penalty levels are handled in normalized
form ``lam / lam_max`` so that grids transfer between folds.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import parallel_map
from .losses import QuadraticLSALoss
from .path import PathResult, lambda_max, make_grid, solve_path
from .penalty import WEIGHT_CAP, PenaltySpec
from .solvers import SolverConfig

log = logging.getLogger(__name__)

__all__ = [
    "RegressionProblem",
    "ExperimentConfig",
    "CVResult",
    "ReplicateResult",
    "gen_design",
    "gen_sparse_coef",
    "make_problem",
    "ols",
    "lla_weights",
    "estimator_penalty",
    "fit_regression_path",
    "cross_validate",
    "run_replicate",
    "run_study",
    "summarize",
    "ESTIMATORS",
]

ESTIMATORS = ("bridge", "lla", "lasso")
RIDGE_JITTER = 1e-8


@dataclass
class RegressionProblem:
    X: np.ndarray
    y: np.ndarray
    theta0: np.ndarray
    sigma: float
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation settings. Defaults reproduce the full-size regression study.

    CV uses the minimum rule over ``folds`` folds. ``weights_mode`` applies to
    the bridge fit only: ``"unit"`` (plain bridge) or ``"adaptive"``
    (``1/|ols_j|**gamma``).
    """

    n_train: int = 1000
    n_test: int = 1000
    p: int = 500
    n_zero: int = 346
    sigma: float = 10.0
    rho: float = 0.5
    q: float = 0.5
    coef_range: float = 10.0
    min_mag: float = 0.5
    folds: int = 5
    grid_size: int = 100
    grid_ratio: float = 1e-3
    weights_mode: str = "unit"
    gamma: float = 1.0
    algorithm: str = "apg"
    tol_rel: float = 1e-8
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_zero < self.p:
            raise ValueError(f"n_zero must satisfy 0 <= n_zero < p, got {self.n_zero}, p={self.p}")
        if self.n_train < self.p:
            raise ValueError("n_train must be >= p so the least-squares fit exists")
        if not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.weights_mode not in ("unit", "adaptive"):
            raise ValueError(f"unknown weights_mode {self.weights_mode!r}")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol_rel=self.tol_rel, max_iter=self.max_iter)

    def rel_grid(self) -> np.ndarray:
        return make_grid(1.0, self.grid_size, self.grid_ratio)


def gen_design(n, p, rho, seed=None) -> np.ndarray:
    """Rows are stationary AR(1) Gaussian vectors with unit variances."""
    if not abs(rho) < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = xi[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * xi[:, j]
    return X


def gen_sparse_coef(p, n_zero, value_range=10.0, min_mag=0.5, seed=None) -> np.ndarray:
    """Exactly ``n_zero`` zeros at random positions; the rest uniform in
    ``[-value_range, -min_mag] U [min_mag, value_range]``."""
    if not 0 <= n_zero < p:
        raise ValueError(f"n_zero must satisfy 0 <= n_zero < p, got {n_zero}, p={p}")
    if not 0.0 <= min_mag <= value_range:
        raise ValueError("need 0 <= min_mag <= value_range")
    rng = np.random.default_rng(seed)
    theta = np.zeros(p)
    idx = rng.permutation(p)[: p - n_zero]
    mags = rng.uniform(min_mag, value_range, size=idx.size)
    signs = rng.choice([-1.0, 1.0], size=idx.size)
    theta[np.sort(idx)] = mags * signs
    return theta


def make_problem(cfg: ExperimentConfig, seed=None) -> RegressionProblem:
    seed = cfg.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    s_coef, s_train, s_test, s_noise = ss.spawn(4)
    theta0 = gen_sparse_coef(cfg.p, cfg.n_zero, cfg.coef_range, cfg.min_mag, s_coef)
    X = gen_design(cfg.n_train, cfg.p, cfg.rho, s_train)
    Xt = gen_design(cfg.n_test, cfg.p, cfg.rho, s_test)
    rng = np.random.default_rng(s_noise)
    y = X @ theta0 + cfg.sigma * rng.standard_normal(cfg.n_train)
    yt = Xt @ theta0 + cfg.sigma * rng.standard_normal(cfg.n_test)
    return RegressionProblem(X, y, theta0, cfg.sigma, Xt, yt)


def ols(X, y):
    """Least-squares fit and Gram matrix; retries with a ridge jitter if singular."""
    G = X.T @ X
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        warnings.warn("singular design; adding ridge jitter 1e-8 * I", RuntimeWarning, stacklevel=2)
        G = G + RIDGE_JITTER * np.eye(G.shape[0])
    theta = np.linalg.solve(G, X.T @ y)
    return theta, G


def lla_weights(theta_tilde, q, floor=1.0 / WEIGHT_CAP) -> np.ndarray:
    """``1 / max(|theta_tilde_j|**(1-q), floor)``; zeros map to ``1/floor``."""
    t = np.abs(np.asarray(theta_tilde, dtype=float)) ** (1.0 - q)
    return np.minimum(1.0 / np.maximum(t, floor), WEIGHT_CAP)


def _adaptive_weights(theta_tilde, gamma):
    t = np.maximum(np.abs(theta_tilde), 1e-10) ** gamma
    return np.minimum(1.0 / t, WEIGHT_CAP)


def estimator_penalty(estimator, theta_tilde, cfg: ExperimentConfig) -> PenaltySpec:
    p = theta_tilde.size
    if estimator == "bridge":
        w = None if cfg.weights_mode == "unit" else _adaptive_weights(theta_tilde, cfg.gamma)
        return PenaltySpec.uniform((p,), cfg.q, weights=w)
    if estimator == "lla":
        return PenaltySpec.uniform((p,), 1.0, weights=lla_weights(theta_tilde, cfg.q))
    if estimator == "lasso":
        return PenaltySpec.uniform((p,), 1.0)
    raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def _lsa(X, y):
    theta, G = ols(X, y)
    return QuadraticLSALoss(G, theta), theta


def fit_regression_path(X, y, estimator, cfg: ExperimentConfig, rel_grid=None) -> PathResult:
    """Path of ``estimator`` on ``(X, y)`` over ``rel_grid * lam_max``."""
    loss, theta = _lsa(X, y)
    pen = estimator_penalty(estimator, theta, cfg)
    lm = lambda_max(loss, pen, cfg.algorithm)
    rel = cfg.rel_grid() if rel_grid is None else np.asarray(rel_grid, dtype=float)
    return solve_path(loss, pen, lm * rel, cfg.algorithm, cfg.solver_config(), lam_max=lm)


def prediction_mse(coef, X, y) -> np.ndarray:
    """Mean squared prediction error for each row of ``coef``."""
    coef = np.atleast_2d(coef)
    resid = y[:, None] - X @ coef.T
    return np.mean(resid * resid, axis=0)


@dataclass
class CVResult:
    rel_grid: np.ndarray
    cv_mse: np.ndarray
    cv_se: np.ndarray
    best_index: int

    @property
    def best_rel_lambda(self) -> float:
        return float(self.rel_grid[self.best_index])


def fold_indices(n, folds, seed) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fold_error(args):
    X, y, train, val, estimator, cfg, rel = args
    path = fit_regression_path(X[train], y[train], estimator, cfg, rel)
    return prediction_mse(path.coef, X[val], y[val])


def cross_validate(problem: RegressionProblem, estimator, cfg: ExperimentConfig,
                   rel_grid=None, seed=None, threads=1) -> CVResult:
    """K-fold CV over the normalized grid; picks the minimum mean error."""
    rel = cfg.rel_grid() if rel_grid is None else np.asarray(rel_grid, dtype=float)
    seed = cfg.seed if seed is None else seed
    parts = fold_indices(problem.n, cfg.folds, seed)
    jobs = []
    for k, val in enumerate(parts):
        train = np.concatenate([parts[j] for j in range(cfg.folds) if j != k])
        jobs.append((problem.X, problem.y, train, val, estimator, cfg, rel))
    errs = np.vstack(parallel_map(_fold_error, jobs, threads))
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(cfg.folds)
    return CVResult(rel, mean, se, int(np.argmin(mean)))


@dataclass
class ReplicateResult:
    seed: int
    rel_grid: np.ndarray
    cv: dict = field(default_factory=dict)             # estimator -> CVResult
    test_curve: dict = field(default_factory=dict)     # estimator -> (K,) test MSE
    test_mse: dict = field(default_factory=dict)       # estimator -> MSE at the CV choice
    null_mse: float = float("nan")
    paths: dict = field(default_factory=dict)          # estimator -> PathResult


def run_replicate(cfg: ExperimentConfig, seed=None, estimators=ESTIMATORS, keep_paths=False) -> ReplicateResult:
    seed = cfg.seed if seed is None else int(seed)
    prob = make_problem(cfg, seed)
    rel = cfg.rel_grid()
    out = ReplicateResult(seed=seed, rel_grid=rel)
    out.null_mse = float(np.mean(prob.y_test ** 2))
    for est in estimators:
        cv = cross_validate(prob, est, cfg, rel, seed=seed + 7919)
        path = fit_regression_path(prob.X, prob.y, est, cfg, rel)
        curve = prediction_mse(path.coef, prob.X_test, prob.y_test)
        out.cv[est] = cv
        out.test_curve[est] = curve
        out.test_mse[est] = float(curve[cv.best_index])
        if keep_paths:
            out.paths[est] = path
    return out


def _replicate_job(args):
    cfg, seed, estimators = args
    return run_replicate(cfg, seed, estimators)


def run_study(cfg: ExperimentConfig, replicates=1, estimators=ESTIMATORS, threads=1) -> list[ReplicateResult]:
    """Independent replicates with seeds ``cfg.seed + r``."""
    jobs = [(cfg, cfg.seed + r, tuple(estimators)) for r in range(replicates)]
    return parallel_map(_replicate_job, jobs, threads)


def summarize(results: list[ReplicateResult], cfg: ExperimentConfig) -> dict:
    """Table-style summary: mean CV-selected test MSE per estimator."""
    ests = list(results[0].test_mse)
    table = {e: float(np.mean([r.test_mse[e] for r in results])) for e in ests}
    per_rep = [
        {"seed": r.seed, "test_mse": r.test_mse, "null_mse": r.null_mse,
         "chosen_rel_lambda": {e: r.cv[e].best_rel_lambda for e in ests}}
        for r in results
    ]
    wins = None
    if "bridge" in ests and "lasso" in ests:
        wins = float(np.mean([r.test_mse["bridge"] <= r.test_mse["lasso"] for r in results]))
    return {
        "config": asdict(cfg),
        "replicates": len(results),
        "test_mse": table,
        "bridge_le_lasso_fraction": wins,
        "per_replicate": per_rep,
    }
