"""Iterative solvers for ``loss(theta) + lam * sum_i ||theta^i||_{q_i, w^i}^{q_i}``.

* :func:`apg_solve` -- monotone accelerated proximal gradient. Each step
  computes an extrapolated proximal step and a plain proximal step from the
  current iterate, and keeps whichever has the lower objective.
* :func:`palm_solve` -- proximal alternating linearized minimization, one
  proximal gradient step per block with step ``alpha / L_i``.
* :func:`cd_solve` -- the same with one-coordinate blocks, step ``alpha / g_kk``.

All three use constant steps.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .losses import GroupedVector, QuadraticLSALoss, SmoothLossModel
from .penalty import PenaltySpec
from .prox_core import threshold_scalar

__all__ = [
    "NonFinite",
    "SolverConfig",
    "SolverResult",
    "objective_value",
    "apg_solve",
    "palm_solve",
    "cd_solve",
    "solve",
    "update_map",
    "solver_steps",
    "ALGORITHMS",
]

ALGORITHMS = ("apg", "palm", "cd")
STOP_FLOOR_EPS = 64.0


class NonFinite(FloatingPointError):
    """The objective or gradient evaluated to NaN or infinity."""


@dataclass(frozen=True)
class SolverConfig:
    """Step safety factor ``alpha``, stopping rule and APG extrapolation variant.

    ``apg_variant="reference"`` extrapolates with ``(zeta^t - theta^t)``;
    ``"literal"`` uses ``(zeta^t - theta^{t-1})`` instead. ``domain_box`` is
    an optional ``(lower, upper)`` pair; a warning is emitted when an iterate
    leaves it.
    """

    step_safety: float = 0.9
    tol_rel: float = 1e-8
    max_iter: int = 10_000
    apg_variant: str = "reference"
    domain_box: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.step_safety < 1.0:
            raise ValueError(f"step_safety must lie in (0, 1), got {self.step_safety}")
        if not self.tol_rel > 0.0:
            raise ValueError(f"tol_rel must be > 0, got {self.tol_rel}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.apg_variant not in ("reference", "literal"):
            raise ValueError(f"unknown apg_variant {self.apg_variant!r}")


@dataclass
class SolverResult:
    theta: GroupedVector
    iterations: int
    objective: float
    converged: bool
    objective_trace: np.ndarray
    change_trace: np.ndarray
    algorithm: str = "apg"
    steps: np.ndarray = field(default=None, repr=False)

    def write_trace_csv(self, path):
        """Write ``iter, objective, max_abs_change`` rows (iteration 0 is the start)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "max_abs_change"])
            for t, obj in enumerate(self.objective_trace):
                chg = self.change_trace[t - 1] if t > 0 else 0.0
                w.writerow([t, f"{obj:.17g}", f"{chg:.17g}"])


def objective_value(loss: SmoothLossModel, penalty: PenaltySpec, theta) -> float:
    x = theta.flat if isinstance(theta, GroupedVector) else np.asarray(theta, dtype=float)
    return loss.value(x) + penalty.value(x)


def solver_steps(loss: SmoothLossModel, algorithm: str, step_safety=0.9) -> np.ndarray:
    """Per-coordinate step sizes used by ``algorithm``."""
    if algorithm == "apg":
        return np.full(loss.dim, step_safety / loss.lipschitz())
    if algorithm == "palm":
        out = np.empty(loss.dim)
        for i in range(loss.m):
            out[loss.block_slice(i)] = step_safety / loss.block_lipschitz(i)
        return out
    if algorithm == "cd":
        return step_safety / np.asarray(loss.coord_lipschitz(), dtype=float)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def _init_flat(loss, init):
    if init is None:
        return np.zeros(loss.dim)
    x = init.flat if isinstance(init, GroupedVector) else np.asarray(init, dtype=float)
    if x.shape != (loss.dim,):
        raise ValueError(f"dimension mismatch: init has shape {x.shape}, expected ({loss.dim},)")
    return np.array(x, dtype=float)


def _check_penalty(loss, penalty):
    if penalty.block_sizes != loss.block_sizes:
        raise ValueError(
            f"penalty block sizes {penalty.block_sizes} differ from loss {loss.block_sizes}"
        )


def _finite(value, what):
    if not math.isfinite(value):
        raise NonFinite(f"{what} is not finite ({value!r})")
    return value


def _stop(x_new, change, f_old, f_new, f_init, tol):
    scale = float(np.max(np.abs(x_new))) if x_new.size else 0.0
    # the absolute floor stops rounding-level flips between 0 and ~1e-15
    # from defeating the relative test when the iterate is (nearly) zero
    floor = STOP_FLOOR_EPS * np.finfo(float).eps * max(1.0, scale)
    small_step = change <= max(tol * scale, floor)
    small_obj = abs(f_old - f_new) <= tol * (abs(f_new) + 1e-10 * abs(f_init))
    return small_step and small_obj


class _BoxWatch:
    def __init__(self, box):
        self.box = box
        self.warned = False

    def check(self, x):
        if self.box is None or self.warned:
            return
        lo, hi = self.box
        if np.any(x < lo) or np.any(x > hi):
            warnings.warn("iterate left the declared domain box", RuntimeWarning, stacklevel=3)
            self.warned = True


def _result(loss, x, it, f, converged, trace, changes, algorithm, steps):
    return SolverResult(
        theta=GroupedVector(x, loss.block_sizes),
        iterations=it,
        objective=f,
        converged=converged,
        objective_trace=np.asarray(trace),
        change_trace=np.asarray(changes),
        algorithm=algorithm,
        steps=steps,
    )


def apg_solve(loss, penalty, init=None, cfg: SolverConfig | None = None) -> SolverResult:
    """Monotone accelerated proximal gradient.

    The momentum sequence starts at ``c_0 = 0, c_1 = 1`` with ``zeta^1`` equal
    to the starting point, so the first extrapolated point is the start
    itself. Convergence requires the relative sup-norm change of the iterate,
    the plain proximal step residual and the relative objective change all
    to fall below ``cfg.tol_rel``.
    """
    cfg = cfg or SolverConfig()
    _check_penalty(loss, penalty)
    s = cfg.step_safety / loss.lipschitz()
    u = s
    x = _init_flat(loss, init)
    x_prev = x.copy()
    zeta = x.copy()
    c_prev, c = 0.0, 1.0
    f_loss, g_x = loss.value_and_grad(x)
    f_x = _finite(f_loss + penalty.value(x), "objective")
    f_init = f_x
    trace, changes = [f_x], []
    box = _BoxWatch(cfg.domain_box)
    literal = cfg.apg_variant == "literal"
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        anchor = x_prev if literal else x
        eta = x + (c_prev / c) * (zeta - anchor) + ((c_prev - 1.0) / c) * (x - x_prev)
        g_eta = loss.grad(eta)
        if not (np.all(np.isfinite(g_eta)) and np.all(np.isfinite(g_x))):
            raise NonFinite("gradient is not finite")
        zeta = penalty.prox(eta - s * g_eta, s)
        v = penalty.prox(x - u * g_x, u)
        fl_z, g_z = loss.value_and_grad(zeta)
        fl_v, g_v = loss.value_and_grad(v)
        f_z = fl_z + penalty.value(zeta)
        f_v = _finite(fl_v + penalty.value(v), "objective")
        c_prev, c = c, (1.0 + math.sqrt(1.0 + 4.0 * c * c)) / 2.0
        if f_z <= f_v:
            x_new, f_new, g_x = zeta, f_z, g_z
        else:
            x_new, f_new, g_x = v, f_v, g_v
        change = float(np.max(np.abs(x_new - x)))
        residual = float(np.max(np.abs(v - x)))
        x_prev, x = x, x_new.copy()
        box.check(x)
        trace.append(f_new)
        changes.append(change)
        if _stop(x, max(change, residual), f_x, f_new, f_init, cfg.tol_rel):
            f_x = f_new
            converged = True
            break
        f_x = f_new
    return _result(loss, x, it, f_x, converged, trace, changes, "apg", np.full(loss.dim, s))


def _palm_cycle(loss, penalty, x, steps_blocks):
    for i in range(loss.m):
        sl = loss.block_slice(i)
        g = loss.block_grad(x, i)
        if not np.all(np.isfinite(g)):
            raise NonFinite("gradient is not finite")
        s = steps_blocks[i]
        x[sl] = penalty.prox_block(x[sl] - s * g, s, i)
    return x


def palm_solve(loss, penalty, init=None, cfg: SolverConfig | None = None) -> SolverResult:
    """Blockwise proximal alternating linearized minimization.

    Blocks are visited in ascending order each cycle; one iteration is one
    full cycle. Stopping rule as in :func:`apg_solve`, on the per-cycle change.
    """
    cfg = cfg or SolverConfig()
    _check_penalty(loss, penalty)
    steps_blocks = [cfg.step_safety / loss.block_lipschitz(i) for i in range(loss.m)]
    x = _init_flat(loss, init)
    f_x = _finite(objective_value(loss, penalty, x), "objective")
    f_init = f_x
    trace, changes = [f_x], []
    box = _BoxWatch(cfg.domain_box)
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        x_old = x.copy()
        x = _palm_cycle(loss, penalty, x, steps_blocks)
        f_new = _finite(objective_value(loss, penalty, x), "objective")
        change = float(np.max(np.abs(x - x_old)))
        box.check(x)
        trace.append(f_new)
        changes.append(change)
        if _stop(x, change, f_x, f_new, f_init, cfg.tol_rel):
            f_x = f_new
            converged = True
            break
        f_x = f_new
    steps = np.repeat(steps_blocks, loss.block_sizes)
    return _result(loss, x, it, f_x, converged, trace, changes, "palm", steps)


def _cd_sweep(loss, penalty, x, steps, resid=None):
    q = penalty.q_flat
    lw = penalty.lam_w(steps)
    if resid is not None:
        # quadratic fast path: resid tracks G (x - theta_tilde)
        G = loss.G
        for k in range(x.size):
            xk = x[k]
            new = threshold_scalar(q[k], lw[k], xk - steps[k] * resid[k])
            if new != xk:
                resid += (new - xk) * G[:, k]
                x[k] = new
        return x
    for k in range(x.size):
        g = loss.coord_grad(x, k)
        if not math.isfinite(g):
            raise NonFinite("gradient is not finite")
        x[k] = threshold_scalar(q[k], lw[k], x[k] - steps[k] * g)
    return x


def cd_solve(loss, penalty, init=None, cfg: SolverConfig | None = None) -> SolverResult:
    """Coordinatewise proximal gradient (PALM with one-coordinate blocks).

    One iteration is one full sweep over the coordinates in index order.
    """
    cfg = cfg or SolverConfig()
    _check_penalty(loss, penalty)
    steps = solver_steps(loss, "cd", cfg.step_safety)
    if not np.all(np.isfinite(steps) & (steps > 0.0)):
        raise ValueError("coordinate Lipschitz bounds must be positive")
    x = _init_flat(loss, init)
    quad = isinstance(loss, QuadraticLSALoss)
    f_x = _finite(objective_value(loss, penalty, x), "objective")
    f_init = f_x
    trace, changes = [f_x], []
    box = _BoxWatch(cfg.domain_box)
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        x_old = x.copy()
        resid = loss.grad(x) if quad else None
        x = _cd_sweep(loss, penalty, x, steps, resid)
        f_new = _finite(objective_value(loss, penalty, x), "objective")
        change = float(np.max(np.abs(x - x_old)))
        box.check(x)
        trace.append(f_new)
        changes.append(change)
        if _stop(x, change, f_x, f_new, f_init, cfg.tol_rel):
            f_x = f_new
            converged = True
            break
        f_x = f_new
    return _result(loss, x, it, f_x, converged, trace, changes, "cd", steps)


_SOLVERS = {"apg": apg_solve, "palm": palm_solve, "cd": cd_solve}


def solve(loss, penalty, init=None, cfg=None, algorithm="apg") -> SolverResult:
    try:
        fn = _SOLVERS[algorithm]
    except KeyError:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}") from None
    return fn(loss, penalty, init, cfg)


def update_map(loss, penalty, theta, algorithm="apg", step_safety=0.9) -> np.ndarray:
    """One application of the solver's update map to ``theta``.

    ``apg``: a single proximal gradient step with ``s = alpha / L``.
    ``palm``: one block cycle. ``cd``: one coordinate sweep.
    """
    x = _init_flat(loss, theta)
    if algorithm == "apg":
        s = step_safety / loss.lipschitz()
        return penalty.prox(x - s * loss.grad(x), s)
    if algorithm == "palm":
        steps_blocks = [step_safety / loss.block_lipschitz(i) for i in range(loss.m)]
        return _palm_cycle(loss, penalty, x, steps_blocks)
    if algorithm == "cd":
        steps = solver_steps(loss, "cd", step_safety)
        return _cd_sweep(loss, penalty, x, steps)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
