"""Sparse estimation of a linear multivariate diffusion from discrete samples.

The model is ``dX = -A X dt + B dW`` with ``B`` upper triangular. The minus
sign makes the process ergodic for ``A`` with positive-real-part spectrum.
The parameter vector is ``theta = (vec(A) row-major, upper triangle of B
row-major)``, of length ``d**2 + d(d+1)/2``.

Pipeline per replicate: Euler-Maruyama simulation, closed-form quasi
maximum likelihood fit, finite-difference Hessian, least-squares
approximation loss, adaptive weights, and bridge/LASSO paths over a
normalized grid ``lam / lam_max``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from ._parallel import parallel_map
from .losses import QuadraticLSALoss, SmoothLossModel
from .path import lambda_max, make_grid, solve_path
from .penalty import WEIGHT_CAP, PenaltySpec
from .solvers import ALGORITHMS, SolverConfig

log = logging.getLogger(__name__)

__all__ = [
    "LinearSdeModel",
    "SamplingScheme",
    "QuasiLikelihoodLoss",
    "QmleResult",
    "SingularCovariance",
    "StudyMetrics",
    "SdeStudyConfig",
    "SdeStudyResult",
    "PENALTY_VALUE",
    "n_params",
    "pack_theta",
    "unpack_theta",
    "rates_matrix",
    "euler_maruyama",
    "quasi_neg_loglik",
    "quasi_grad",
    "qmle_fit",
    "fd_hessian",
    "hessian_at",
    "adaptive_weights_sde",
    "selection_metrics",
    "run_replicate",
    "run_monte_carlo_study",
    "lambda_max_growth",
    "default_rel_grid",
    "exact_selection_test",
    "ReplicateOutcome",
]

PENALTY_VALUE = 1e100
BURN_IN_FRACTION = 0.1
WEIGHT_FLOOR = 1e-10
FD_REL_STEP = 1e-5
EIG_FLOOR = 1e-8
ESTIMATORS = ("bridge", "lasso")


class SingularCovariance(ValueError):
    """The estimated diffusion covariance (or regressor Gram matrix) is singular."""


def n_params(d: int) -> int:
    return d * d + d * (d + 1) // 2


def pack_theta(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    d = A.shape[0]
    return np.concatenate([A.ravel(), B[np.triu_indices(d)]])


def unpack_theta(theta, d: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_params(d),):
        raise ValueError(f"theta has shape {theta.shape}, expected ({n_params(d)},)")
    A = theta[: d * d].reshape(d, d).copy()
    B = np.zeros((d, d))
    B[np.triu_indices(d)] = theta[d * d:]
    return A, B


def _dim_from_params(p: int) -> int:
    d = int(round((-1 + math.sqrt(1 + 6 * p)) / 3))
    if n_params(d) != p:
        raise ValueError(f"{p} is not a valid parameter count d^2 + d(d+1)/2")
    return d


@dataclass(frozen=True, eq=False)
class LinearSdeModel:
    """Drift matrix ``A`` (drift is ``-A x``) and upper-triangular ``B``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape != A.shape:
            raise ValueError("A and B must be square matrices of the same size")
        if np.any(np.tril(B, -1) != 0.0):
            raise ValueError("B must be upper triangular")
        if np.any(np.diag(B) < 0.0):
            raise ValueError("diag(B) must be non-negative")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def benchmark(cls) -> LinearSdeModel:
        """The d = 4 benchmark: ``A`` bidiagonal (4, -1.8), ``B = 4 I``."""
        A = 4.0 * np.eye(4) + np.diag([-1.8, -1.8, -1.8], k=1)
        return cls(A, 4.0 * np.eye(4))

    @classmethod
    def from_theta(cls, theta, d=None) -> LinearSdeModel:
        d = _dim_from_params(np.asarray(theta).size) if d is None else d
        return cls(*unpack_theta(theta, d))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return pack_theta(self.A, self.B)

    @property
    def block_sizes(self) -> tuple[int, int]:
        return (self.d * self.d, self.d * (self.d + 1) // 2)

    def drift(self, x) -> np.ndarray:
        return -(np.asarray(x) @ self.A.T)

    def is_stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.A).real > 0.0))


@dataclass(frozen=True)
class SamplingScheme:
    n: int
    delta: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.delta > 0.0:
            raise ValueError(f"delta must be > 0, got {self.delta}")

    @property
    def T(self) -> float:
        return self.n * self.delta

    @classmethod
    def preset(cls, n: int) -> SamplingScheme:
        presets = {1000: 0.015, 10000: 0.003}
        if n not in presets:
            raise ValueError(f"no preset for n={n}; available: {sorted(presets)}")
        return cls(n, presets[n])

    @classmethod
    def growth(cls, n: int, T0=15.0, n0=1000) -> SamplingScheme:
        """Horizon ``T = T0 * (n/n0)**log10(2)``: passes through both presets."""
        T = T0 * (n / n0) ** math.log10(2.0)
        return cls(n, T / n)


def rates_matrix(d: int, scheme: SamplingScheme) -> np.ndarray:
    """Diagonal of ``diag((n delta)^{-1/2} I_{d^2}, n^{-1/2} I_{d(d+1)/2})``."""
    p1, p2 = d * d, d * (d + 1) // 2
    return np.concatenate([
        np.full(p1, 1.0 / math.sqrt(scheme.n * scheme.delta)),
        np.full(p2, 1.0 / math.sqrt(scheme.n)),
    ])


def euler_maruyama(model: LinearSdeModel, scheme: SamplingScheme, x0=None, seed=None,
                   burn_in=BURN_IN_FRACTION) -> np.ndarray:
    """``n + 1`` states of the Euler scheme, after discarding a burn-in.

    ``floor(burn_in * n)`` extra steps are simulated first and dropped, so the
    returned path starts near stationarity. ``x0`` defaults to the origin.
    """
    d = model.d
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float).ravel()
    if x.shape != (d,):
        raise ValueError(f"x0 must have length {d}")
    if not 0.0 <= burn_in < 1.0:
        raise ValueError(f"burn_in must lie in [0, 1), got {burn_in}")
    n_burn = int(math.floor(burn_in * scheme.n))
    total = scheme.n + n_burn
    rng = np.random.default_rng(seed)
    dt = scheme.delta
    # x_{k+1} = M x_k + noise_k with M = I - dt A
    M = np.eye(d) - dt * model.A
    noise = rng.standard_normal((total, d)) @ (math.sqrt(dt) * model.B.T)
    out = np.empty((total + 1, d))
    out[0] = x
    Mt = M.T
    for k in range(total):
        x = x @ Mt + noise[k]
        out[k + 1] = x
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.all(np.isfinite(out), axis=1)))
        raise FloatingPointError(f"simulation produced a non-finite state at step {bad}")
    return out[n_burn:]


class QuasiLikelihoodLoss(SmoothLossModel):
    """Gaussian negative quasi-log-likelihood of the Euler transition density.

    Evaluated from the sufficient statistics ``D = sum dX dX'``,
    ``C = sum dX X'`` and ``K = sum X X'`` (``X`` at the left endpoints).
    Points with a non-positive diagonal of ``B`` lie outside the parameter
    space and get the constant :data:`PENALTY_VALUE` (zero gradient).
    """

    def __init__(self, states, delta):
        X = np.asarray(states, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 2:
            raise ValueError("need at least two states")
        if not delta > 0.0:
            raise ValueError(f"delta must be > 0, got {delta}")
        self.d = X.shape[1]
        super().__init__((self.d * self.d, self.d * (self.d + 1) // 2))
        dX = np.diff(X, axis=0)
        Xl = X[:-1]
        self.n = dX.shape[0]
        self.delta = float(delta)
        self.D = dX.T @ dX
        self.C = dX.T @ Xl
        self.K = Xl.T @ Xl
        self._iu = np.triu_indices(self.d)

    def _unpack(self, theta):
        return unpack_theta(self._flat(theta), self.d)

    def residual_scatter(self, A) -> np.ndarray:
        """``S(A) = sum_i R_i R_i'`` with ``R_i = dX_i + delta A X_{i-1}``."""
        dt = self.delta
        CA = self.C @ A.T
        return self.D + dt * (CA + CA.T) + dt * dt * (A @ self.K @ A.T)

    def _inside(self, B):
        diag = np.diag(B)
        return bool(np.all(diag > 0.0) and np.all(np.isfinite(B)))

    def value(self, theta) -> float:
        A, B = self._unpack(theta)
        if not self._inside(B) or not np.all(np.isfinite(A)):
            return PENALTY_VALUE
        S = self.residual_scatter(A)
        # tr(Sigma^{-1} S) = ||B^{-1} S^{1/2}||_F^2, computed as tr(B^{-1} S B^{-T})
        Y = scipy.linalg.solve_triangular(B, S, lower=False)
        Z = scipy.linalg.solve_triangular(B, Y.T, lower=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(B))))
        return 0.5 * self.n * logdet + float(np.trace(Z)) / (2.0 * self.delta)

    def grad(self, theta) -> np.ndarray:
        A, B = self._unpack(theta)
        if not self._inside(B) or not np.all(np.isfinite(A)):
            return np.zeros(self.dim)
        Binv = scipy.linalg.solve_triangular(B, np.eye(self.d), lower=False)
        Sinv = Binv.T @ Binv
        S = self.residual_scatter(A)
        gA = Sinv @ (self.C + self.delta * A @ self.K)
        Q = 0.5 * self.n * Sinv - (Sinv @ S @ Sinv) / (2.0 * self.delta)
        gB = 2.0 * Q @ B
        return np.concatenate([gA.ravel(), gB[self._iu]])


def quasi_neg_loglik(theta, states, delta) -> float:
    return QuasiLikelihoodLoss(states, delta).value(theta)


def quasi_grad(theta, states, delta) -> np.ndarray:
    return QuasiLikelihoodLoss(states, delta).grad(theta)


@dataclass
class QmleResult:
    theta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    value: float


def _upper_factor(Sigma) -> np.ndarray:
    """Upper-triangular ``U`` with positive diagonal and ``U U' = Sigma``."""
    J = np.eye(Sigma.shape[0])[::-1]
    L = np.linalg.cholesky(J @ Sigma @ J)
    return J @ L @ J


def _check_pd(M, what, rel=1e-12):
    M = 0.5 * (M + M.T)
    ev = np.linalg.eigvalsh(M)
    if not np.all(np.isfinite(ev)) or ev[-1] <= 0.0 or ev[0] <= rel * ev[-1]:
        raise SingularCovariance(f"{what} is singular or not positive definite")
    return M


def qmle_fit(states, delta, method="joint") -> QmleResult:
    """Quasi maximum likelihood estimate in closed form.

    The drift estimate ``A = -C K^{-1} / delta`` minimizes the quadratic
    drift part for every ``Sigma``. With ``method="joint"`` the covariance
    is ``S(A) / (n delta)``, which makes ``(A, Sigma)`` the exact joint
    minimizer. ``method="two_stage"`` instead takes the raw increment
    covariance ``D / (n delta)``. ``B`` is the upper-triangular factor of
    ``Sigma``.
    """
    loss = states if isinstance(states, QuasiLikelihoodLoss) else QuasiLikelihoodLoss(states, delta)
    _check_pd(loss.K, "state Gram matrix")
    A = -scipy.linalg.solve(loss.K, loss.C.T, assume_a="pos").T / loss.delta
    if method == "joint":
        Sigma = loss.residual_scatter(A) / (loss.n * loss.delta)
    elif method == "two_stage":
        Sigma = loss.D / (loss.n * loss.delta)
    else:
        raise ValueError(f"unknown method {method!r}")
    Sigma = _check_pd(Sigma, "estimated diffusion covariance")
    B = _upper_factor(Sigma)
    theta = pack_theta(A, B)
    return QmleResult(theta=theta, A=A, B=B, Sigma=Sigma, value=loss.value(theta))


def fd_hessian(grad_fn, theta, rel_step=FD_REL_STEP) -> np.ndarray:
    """Central differences of ``grad_fn``; step ``rel_step * (1 + |theta_j|)``.

    Returns the raw (unsymmetrized) matrix whose column ``j`` differentiates
    along coordinate ``j``.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    H = np.empty((p, p))
    for j in range(p):
        h = rel_step * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        H[:, j] = (np.asarray(grad_fn(tp)) - np.asarray(grad_fn(tm))) / (2.0 * h)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("finite-difference Hessian is not finite")
    return H


def hessian_at(theta, loss_or_grad, rel_step=FD_REL_STEP, eig_floor=EIG_FLOOR) -> np.ndarray:
    """Symmetrized finite-difference Hessian with an eigenvalue floor.

    Eigenvalues below ``eig_floor * max_eigenvalue`` are raised to that
    level so the result is symmetric positive definite.
    """
    grad_fn = loss_or_grad.grad if isinstance(loss_or_grad, SmoothLossModel) else loss_or_grad
    H = fd_hessian(grad_fn, theta, rel_step)
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    top = float(w[-1])
    if not top > 0.0:
        raise FloatingPointError("Hessian has no positive eigenvalue")
    w = np.maximum(w, eig_floor * top)
    H = (V * w) @ V.T
    return 0.5 * (H + H.T)


def adaptive_weights_sde(theta_tilde, d, delta1=4.0, delta2=4.0, w0=(1.0, 1.0)) -> np.ndarray:
    """``w0_k / max(|theta_tilde_j|, 1e-10)**delta_k`` for drift (k=1) and diffusion (k=2) entries."""
    t = np.abs(np.asarray(theta_tilde, dtype=float))
    p1 = d * d
    if t.size != n_params(d):
        raise ValueError(f"theta_tilde has {t.size} entries, expected {n_params(d)}")
    expo = np.concatenate([np.full(p1, float(delta1)), np.full(t.size - p1, float(delta2))])
    base = np.concatenate([np.full(p1, float(w0[0])), np.full(t.size - p1, float(w0[1]))])
    return np.minimum(base / np.maximum(t, WEIGHT_FLOOR) ** expo, WEIGHT_CAP)


def selection_metrics(estimate, theta0) -> tuple[bool, int]:
    """Exact zero-pattern match and the Hamming distance between supports."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(theta0, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    mism = int(np.count_nonzero((est != 0.0) != (tru != 0.0)))
    return mism == 0, mism


@dataclass(frozen=True)
class StudyMetrics:
    mse_rel: float
    p0: float
    p0_approx: float

    def __post_init__(self):
        if not (0.0 <= self.p0 <= self.p0_approx <= 1.0):
            raise ValueError("need 0 <= p0 <= p0_approx <= 1")
        if self.mse_rel < 0.0:
            raise ValueError("mse_rel must be >= 0")


TABLE_POINTS = (0.7, 0.5, 0.25)


def default_rel_grid(K=81, ratio=1e-8, extra=TABLE_POINTS) -> np.ndarray:
    """Geometric normalized grid from 1 to ``ratio`` merged with ``extra`` points.

    The informative range of ``lam / lam_max`` for the adaptive weights
    ``1/|theta_tilde|**4`` lies several decades below 1, hence the small
    default ratio; the table points are added so they are always on the grid.
    """
    g = make_grid(1.0, K, ratio)
    g = np.concatenate([g, np.asarray(extra, dtype=float)])
    return np.unique(np.round(g, 15))[::-1]


@dataclass(frozen=True)
class SdeStudyConfig:
    """Monte Carlo settings.

    The main paths use ``algorithm``. When ``compare_algorithms`` is set,
    the first ``compare_reps`` replicates (all when ``None``) are also solved
    with every solver on the same absolute grid to compare iteration counts.
    """

    n: int = 1000
    delta: float = 0.015
    reps: int = 100
    q: tuple = (0.5, 0.5)
    delta1: float = 4.0
    delta2: float = 4.0
    grid_size: int = 81
    grid_ratio: float = 1e-8
    algorithm: str = "apg"
    compare_algorithms: bool = True
    compare_reps: int | None = 20
    tol_rel: float = 1e-8
    max_iter: int = 10_000
    burn_in: float = BURN_IN_FRACTION
    seed: int = 0

    def __post_init__(self):
        SamplingScheme(self.n, self.delta)
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if len(self.q) != 2 or any(not 0.0 < v <= 1.0 for v in self.q):
            raise ValueError(f"q must be two exponents in (0, 1], got {self.q}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.grid_size < 2 or not 0.0 < self.grid_ratio < 1.0:
            raise ValueError("need grid_size >= 2 and 0 < grid_ratio < 1")
        if self.delta1 <= 0.0 or self.delta2 <= 0.0:
            raise ValueError("weight exponents must be > 0")

    @property
    def scheme(self) -> SamplingScheme:
        return SamplingScheme(self.n, self.delta)

    def rel_grid(self) -> np.ndarray:
        return default_rel_grid(self.grid_size, self.grid_ratio)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol_rel=self.tol_rel, max_iter=self.max_iter)

    def compares(self, rep) -> bool:
        return self.compare_algorithms and (self.compare_reps is None or rep < self.compare_reps)


@dataclass
class ReplicateOutcome:
    seed: int
    theta_tilde: np.ndarray
    qmle_mse_rel: float
    lam_max: dict = field(default_factory=dict)       # estimator -> float
    mse_rel: dict = field(default_factory=dict)       # estimator -> (K,)
    mismatch: dict = field(default_factory=dict)      # estimator -> (K,) int
    err_norm: dict = field(default_factory=dict)      # estimator -> (K,) ||theta_hat - theta0||
    iterations: dict = field(default_factory=dict)    # (estimator, algorithm) -> (K,)
    traces: list = field(default_factory=list)        # objective traces (kept on request)


def _lsa_problem(model, scheme, seed, burn_in, q, delta1, delta2):
    states = euler_maruyama(model, scheme, seed=seed, burn_in=burn_in)
    ql = QuasiLikelihoodLoss(states, scheme.delta)
    fit = qmle_fit(ql, scheme.delta)
    G = hessian_at(fit.theta, ql)
    loss = QuadraticLSALoss(G, fit.theta, ql.block_sizes)
    w = adaptive_weights_sde(fit.theta, model.d, delta1, delta2)
    return fit, loss, w


def _penalties(cfg, w, sizes):
    return {
        "bridge": PenaltySpec(tuple(cfg.q), w, sizes),
        "lasso": PenaltySpec((1.0, 1.0), w, sizes),
    }


def run_replicate(cfg: SdeStudyConfig, rep: int, model: LinearSdeModel | None = None,
                  keep_traces=False) -> ReplicateOutcome:
    model = model or LinearSdeModel.benchmark()
    seed = cfg.seed + rep
    theta0 = model.theta
    denom = float(theta0 @ theta0)
    fit, loss, w = _lsa_problem(model, cfg.scheme, seed, cfg.burn_in, cfg.q, cfg.delta1, cfg.delta2)
    out = ReplicateOutcome(seed=seed, theta_tilde=fit.theta,
                           qmle_mse_rel=float(np.sum((fit.theta - theta0) ** 2)) / denom)
    rel = cfg.rel_grid()
    scfg = cfg.solver_config()
    algos = ALGORITHMS if cfg.compares(rep) else (cfg.algorithm,)
    for est, pen in _penalties(cfg, w, loss.block_sizes).items():
        lm = lambda_max(loss, pen, cfg.algorithm)
        grid = lm * rel
        out.lam_max[est] = lm
        for algo in (cfg.algorithm,) + tuple(a for a in algos if a != cfg.algorithm):
            path = solve_path(loss, pen, grid, algo, scfg, lam_max=lm)
            out.iterations[(est, algo)] = np.array(
                [r.iterations if r is not None else -1 for r in path.results])
            if keep_traces:
                out.traces.extend((est, algo, r.objective_trace) for r in path.results if r is not None)
            if algo != cfg.algorithm:
                continue
            coef = path.coef
            diff = coef - theta0
            out.mse_rel[est] = np.sum(diff * diff, axis=1) / denom
            out.err_norm[est] = np.sqrt(np.sum(diff * diff, axis=1))
            out.mismatch[est] = np.count_nonzero((coef != 0.0) != (theta0 != 0.0), axis=1)
    return out


def _replicate_job(args):
    cfg, rep, model, keep = args
    try:
        return run_replicate(cfg, rep, model, keep)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("replicate %d failed: %s", rep, exc)
        return f"{type(exc).__name__}: {exc}"


@dataclass
class SdeStudyResult:
    config: SdeStudyConfig
    rel_grid: np.ndarray
    outcomes: list[ReplicateOutcome]
    failures: dict = field(default_factory=dict)      # replicate index -> message

    @property
    def estimators(self) -> tuple[str, ...]:
        return ESTIMATORS

    def qmle_mse_rel(self) -> float:
        return float(np.mean([o.qmle_mse_rel for o in self.outcomes]))

    def metrics(self, est) -> list[StudyMetrics]:
        """Aggregated metrics per grid point for ``est``."""
        mse = np.vstack([o.mse_rel[est] for o in self.outcomes]).mean(axis=0)
        mism = np.vstack([o.mismatch[est] for o in self.outcomes])
        p0 = (mism == 0).mean(axis=0)
        p0a = (mism <= 1).mean(axis=0)
        return [StudyMetrics(float(a), float(b), float(c)) for a, b, c in zip(mse, p0, p0a)]

    def index_of(self, rel_lambda) -> int:
        k = int(np.argmin(np.abs(self.rel_grid - rel_lambda)))
        if abs(self.rel_grid[k] - rel_lambda) > 1e-9:
            raise KeyError(f"rel_lambda {rel_lambda} is not on the grid")
        return k

    def best_mse_rel(self, est) -> float:
        """Mean over replicates of the smallest relative error along each path."""
        return float(np.mean([o.mse_rel[est].min() for o in self.outcomes]))

    def best_rel_lambdas(self, est) -> np.ndarray:
        return np.array([self.rel_grid[int(np.argmin(o.mse_rel[est]))] for o in self.outcomes])

    def opt_index(self, est) -> int:
        """Grid point with the smallest mean relative error."""
        return int(np.argmin([m.mse_rel for m in self.metrics(est)]))

    def exact_flags(self, est, rel_lambda) -> np.ndarray:
        k = self.index_of(rel_lambda)
        return np.array([o.mismatch[est][k] == 0 for o in self.outcomes])

    def mean_iterations(self, est, algo) -> np.ndarray:
        """Mean iterations per grid point over replicates that ran ``algo``."""
        rows = [o.iterations[(est, algo)] for o in self.outcomes if (est, algo) in o.iterations]
        if not rows:
            raise KeyError(f"no iteration counts recorded for {est}/{algo}")
        it = np.vstack(rows).astype(float)
        it[it < 0] = np.nan
        return np.nanmean(it, axis=0)

    def lam_max_median(self, est="bridge") -> float:
        return float(np.median([o.lam_max[est] for o in self.outcomes]))

    def table(self) -> dict:
        """Table-style summary at ``0.25``, the best mean point and ``0.7``."""
        out = {"qmle": {"mse_rel": self.qmle_mse_rel()}}
        for est in ESTIMATORS:
            ms = self.metrics(est)
            kopt = self.opt_index(est)
            cols = {}
            for name, k in (("0.25", self._safe_index(0.25)), ("opt", kopt), ("0.7", self._safe_index(0.7))):
                if k is None:
                    continue
                cols[name] = {"rel_lambda": float(self.rel_grid[k]), **asdict(ms[k])}
            cols["best_per_replicate_mse_rel"] = self.best_mse_rel(est)
            out[est] = cols
        return out

    def _safe_index(self, rel_lambda):
        try:
            return self.index_of(rel_lambda)
        except KeyError:
            return None


def run_monte_carlo_study(cfg: SdeStudyConfig, model: LinearSdeModel | None = None, threads=1,
                          keep_traces=False) -> SdeStudyResult:
    """Replicates with seeds ``cfg.seed + r``; failed replicates are excluded and counted."""
    model = model or LinearSdeModel.benchmark()
    jobs = [(cfg, r, model, keep_traces) for r in range(cfg.reps)]
    results = parallel_map(_replicate_job, jobs, threads)
    outcomes, failures = [], {}
    for r, res in enumerate(results):
        if isinstance(res, str):
            failures[r] = res
        else:
            outcomes.append(res)
    if not outcomes:
        raise RuntimeError(f"all {cfg.reps} replicates failed")
    return SdeStudyResult(config=cfg, rel_grid=cfg.rel_grid(), outcomes=outcomes, failures=failures)


def _lam_max_job(args):
    model, scheme, seed, burn_in, q, delta1, delta2, algorithm = args
    fit, loss, w = _lsa_problem(model, scheme, seed, burn_in, q, delta1, delta2)
    pen = PenaltySpec(tuple(q), w, loss.block_sizes)
    return lambda_max(loss, pen, algorithm)


def lambda_max_growth(ns=(500, 1000, 5000), reps=20, seed=0, q=(0.5, 0.5), delta1=4.0, delta2=4.0,
                      model=None, algorithm="apg", threads=1) -> dict[int, np.ndarray]:
    """``lam_max`` per replicate for each ``n`` under :meth:`SamplingScheme.growth`."""
    model = model or LinearSdeModel.benchmark()
    out = {}
    for n in ns:
        scheme = SamplingScheme.growth(n)
        jobs = [(model, scheme, seed + r, BURN_IN_FRACTION, q, delta1, delta2, algorithm)
                for r in range(reps)]
        out[int(n)] = np.array(parallel_map(_lam_max_job, jobs, threads))
    return out


def exact_selection_test(bridge_exact, lasso_exact) -> float:
    """One-sided exact binomial (sign) test on discordant replicate pairs.

    Returns the p-value for "bridge selects exactly more often than LASSO".
    """
    b = np.asarray(bridge_exact, dtype=bool)
    l = np.asarray(lasso_exact, dtype=bool)
    wins = int(np.count_nonzero(b & ~l))
    losses = int(np.count_nonzero(~b & l))
    if wins + losses == 0:
        return 1.0
    return float(scipy.stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
