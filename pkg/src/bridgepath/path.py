"""Regularization paths: lambda_max, grids, warm-started driver, diagnostics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .losses import GroupedVector, SmoothLossModel
from .penalty import PenaltySpec
from .prox_core import _c_q, _theta_q
from .solvers import ALGORITHMS, SolverConfig, SolverResult, solve, solver_steps

__all__ = [
    "PenaltySpec",
    "PathResult",
    "PathReport",
    "lambda_max",
    "make_grid",
    "solve_path",
    "path_diagnostics",
    "DEFAULT_GRID_SIZE",
    "DEFAULT_GRID_RATIO",
]

log = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 100
DEFAULT_GRID_RATIO = 1e-3


def lambda_max(loss: SmoothLossModel, penalty: PenaltySpec, algorithm="apg") -> float:
    """Smallest ``lam`` for which the zero vector is a fixed point of the update.

    For ``q = 1`` blocks the contribution is ``|grad_j(0)| / w_j``. For
    ``q < 1`` blocks it is ``(|grad_j(0)| / c_q)**(2-q) * L**(q-1) / w_j``
    with ``L`` the global Lipschitz bound (``apg``), the smallest block bound
    (``palm``) or the smallest coordinate bound (``cd``). The ``q < 1`` value
    is sufficient, not necessarily tight.
    """
    if penalty.block_sizes != loss.block_sizes:
        raise ValueError("penalty and loss block structures differ")
    g0 = np.abs(loss.grad(np.zeros(loss.dim)))
    w = penalty.weights
    q = penalty.q_flat
    out = np.empty_like(g0)
    lasso = q == 1.0
    out[lasso] = g0[lasso] / w[lasso]
    if not lasso.all():
        if algorithm == "apg":
            L = loss.lipschitz()
        elif algorithm == "palm":
            L = min(loss.block_lipschitz(i) for i in range(loss.m))
        elif algorithm == "cd":
            L = float(np.min(loss.coord_lipschitz()))
        else:
            raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
        qb = q[~lasso]
        out[~lasso] = (g0[~lasso] / _c_q(qb)) ** (2.0 - qb) * L ** (qb - 1.0) / w[~lasso]
    return float(np.max(out))


def make_grid(lam_max: float, K: int = DEFAULT_GRID_SIZE, ratio: float = DEFAULT_GRID_RATIO) -> np.ndarray:
    """Geometric grid ``lam_max * ratio**(k/(K-1))``, ``k = 0..K-1``."""
    if int(K) != K or K < 2:
        raise ValueError(f"grid size K must be an integer >= 2, got {K}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"grid ratio must lie in (0, 1), got {ratio}")
    if not lam_max > 0.0:
        raise ValueError(f"lam_max must be > 0, got {lam_max}")
    k = np.arange(int(K))
    grid = lam_max * ratio ** (k / (K - 1))
    grid[0] = lam_max
    return grid


@dataclass
class PathResult:
    lambdas: np.ndarray
    estimates: list[GroupedVector]
    results: list[SolverResult | None]
    lambda_max: float
    penalty: PenaltySpec
    algorithm: str = "apg"
    steps: np.ndarray = field(default=None, repr=False)
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def coef(self) -> np.ndarray:
        """Estimates stacked as a ``(K, p)`` array."""
        return np.vstack([e.flat for e in self.estimates])

    @property
    def failed(self) -> list[int]:
        return sorted(self.errors)

    def rows(self):
        for k, lam in enumerate(self.lambdas):
            r = self.results[k]
            yield {
                "lambda": float(lam),
                "objective": float(r.objective) if r else float("nan"),
                "iterations": int(r.iterations) if r else 0,
                "converged": bool(r.converged) if r else False,
                "theta": self.estimates[k].flat,
            }

    def write_csv(self, path):
        p = self.estimates[0].dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "objective", "iterations", "converged"]
                       + [f"theta_{j + 1}" for j in range(p)])
            for row in self.rows():
                w.writerow([f"{row['lambda']:.17g}", f"{row['objective']:.17g}", row["iterations"],
                            int(row["converged"])] + [f"{v:.17g}" for v in row["theta"]])

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "lambda_max": self.lambda_max,
            "block_sizes": list(self.penalty.block_sizes),
            "q": list(self.penalty.q),
            "path": [
                {
                    "lambda": row["lambda"],
                    "objective": row["objective"] if k not in self.errors else None,
                    "iterations": row["iterations"],
                    "converged": row["converged"],
                    "blocks": [b.tolist() for b in self.estimates[k].blocks],
                    "error": self.errors.get(k),
                }
                for k, row in enumerate(self.rows())
            ],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def solve_path(loss, penalty_template: PenaltySpec, grid, algorithm="apg",
               cfg: SolverConfig | None = None, lam_max=None) -> PathResult:
    """Solve along a descending grid with warm starts.

    The first point starts from zero; later points start from the last
    successful estimate. A solver failure at one ``lam`` is recorded in
    ``errors`` and the path continues.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(grid) >= 0.0):
        raise ValueError("lambda grid must be strictly decreasing")
    cfg = cfg or SolverConfig()
    if lam_max is None:
        lam_max = lambda_max(loss, penalty_template, algorithm)
    steps = solver_steps(loss, algorithm, cfg.step_safety)
    warm = np.zeros(loss.dim)
    estimates, results, errors = [], [], {}
    for k, lam in enumerate(grid):
        pen = penalty_template.with_lam(lam)
        try:
            res = solve(loss, pen, warm, cfg, algorithm)
        except (FloatingPointError, ValueError, ArithmeticError) as exc:
            log.warning("path point %d (lambda=%g) failed: %s", k, lam, exc)
            errors[k] = f"{type(exc).__name__}: {exc}"
            estimates.append(GroupedVector(np.full(loss.dim, np.nan), loss.block_sizes))
            results.append(None)
            continue
        estimates.append(res.theta)
        results.append(res)
        warm = res.theta.flat.copy()
    return PathResult(
        lambdas=grid, estimates=estimates, results=results, lambda_max=float(lam_max),
        penalty=penalty_template, algorithm=algorithm, steps=steps, errors=errors,
    )


@dataclass
class PathReport:
    support: np.ndarray            # (K, p) bool
    sparsity: np.ndarray           # nonzeros per lambda
    jumps: list[dict]
    zero_prefix: int

    @property
    def n_jumps(self) -> int:
        return len(self.jumps)

    def to_dict(self) -> dict:
        return {
            "sparsity": self.sparsity.tolist(),
            "zero_prefix": self.zero_prefix,
            "n_jumps": self.n_jumps,
            "jumps": self.jumps,
        }


def path_diagnostics(path: PathResult) -> PathReport:
    """Support pattern, jump locations and length of the all-zero prefix.

    A jump is a coordinate switching between zero and nonzero between
    adjacent grid points with magnitude above half the minimal nonzero
    magnitude ``theta_{q, lam*s*w}`` of the thresholding operator at the
    nonzero side. Only coordinates with ``q < 1`` have such a floor; soft
    thresholding is continuous, so ``q = 1`` coordinates never jump.
    """
    coef = path.coef
    support = np.where(np.isnan(coef), False, coef != 0.0)
    sparsity = support.sum(axis=1)
    zero_prefix = 0
    for row in support:
        if row.any():
            break
        zero_prefix += 1
    pen = path.penalty
    q = pen.q_flat
    steps = path.steps if path.steps is not None else np.ones(coef.shape[1])
    jumps = []
    for k in range(1, len(path.lambdas)):
        if k in path.errors or (k - 1) in path.errors:
            continue
        switched = support[k] != support[k - 1]
        for j in np.flatnonzero(switched & (q < 1.0)):
            nz = k if support[k, j] else k - 1
            lam = path.lambdas[nz]
            floor = _theta_q(q[j], lam * steps[j] * pen.weights[j])
            gap = abs(coef[k, j] - coef[k - 1, j])
            if gap > floor / 2.0:
                jumps.append({
                    "index": int(j),
                    "between": [int(k - 1), int(k)],
                    "lambda": [float(path.lambdas[k - 1]), float(path.lambdas[k])],
                    "kind": "enter" if support[k, j] else "leave",
                    "gap": float(gap),
                    "floor": float(floor),
                })
    return PathReport(support=support, sparsity=sparsity, jumps=jumps, zero_prefix=zero_prefix)
