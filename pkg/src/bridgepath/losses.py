"""Smooth losses with value, gradient, block gradient and Lipschitz bounds."""

from __future__ import annotations

import json
import warnings

import numpy as np
import scipy.linalg

__all__ = [
    "GroupedVector",
    "BlockMatrixView",
    "SmoothLossModel",
    "QuadraticLSALoss",
    "RegressionLoss",
    "power_iteration",
    "loss_value",
    "loss_grad",
    "loss_block_grad",
    "global_lipschitz",
    "block_lipschitz",
]

POWER_MAXITER = 10_000
POWER_RTOL = 1e-8
LIPSCHITZ_INFLATE = 1.0 + 1e-6


class GroupedVector:
    """A flat parameter vector partitioned into ``m`` contiguous blocks.

    Block views share memory with ``flat``.
    """

    __slots__ = ("flat", "sizes", "_offsets")

    def __init__(self, flat, sizes=None):
        flat = np.array(flat, dtype=float).ravel()
        if sizes is None:
            sizes = (flat.size,)
        sizes = tuple(int(s) for s in sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {sizes}")
        if sum(sizes) != flat.size:
            raise ValueError(f"block sizes {sizes} do not add up to length {flat.size}")
        self.flat = flat
        self.sizes = sizes
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])

    @classmethod
    def from_blocks(cls, blocks):
        blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks]
        return cls(np.concatenate(blocks), [b.size for b in blocks])

    @classmethod
    def zeros(cls, sizes):
        return cls(np.zeros(sum(sizes)), sizes)

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def dim(self) -> int:
        return self.flat.size

    def slice(self, i) -> slice:
        if not 0 <= i < self.m:
            raise IndexError(f"block index {i} out of range for {self.m} blocks")
        return slice(int(self._offsets[i]), int(self._offsets[i + 1]))

    def block(self, i) -> np.ndarray:
        return self.flat[self.slice(i)]

    @property
    def blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(self.m)]

    def copy(self) -> GroupedVector:
        return GroupedVector(self.flat.copy(), self.sizes)

    def __len__(self):
        return self.flat.size

    def __eq__(self, other):
        if not isinstance(other, GroupedVector):
            return NotImplemented
        return self.sizes == other.sizes and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"GroupedVector({self.flat.tolist()!r}, sizes={self.sizes})"


def block_slices(sizes) -> list[slice]:
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [slice(offsets[i], offsets[i + 1]) for i in range(len(sizes))]


def power_iteration(G, *, rtol=POWER_RTOL, maxiter=POWER_MAXITER, inflate=True):
    """Largest eigenvalue of a symmetric PSD matrix, as a valid upper bound.

    Starts from a fixed, slightly perturbed all-ones vector so results are
    reproducible. The Rayleigh quotient is inflated by ``1 + 1e-6`` unless
    ``inflate`` is false. If the iteration does not settle within ``maxiter``
    steps the row-sum bound ``max_k sum_l |g_kl|`` is returned instead.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    factor = LIPSCHITZ_INFLATE if inflate else 1.0
    if n == 1:
        return float(abs(G[0, 0])) * factor
    # a plain ones vector is orthogonal to e.g. (1, -1) eigenvectors
    v = 1.0 + 0.1 * np.sin(np.arange(1, n + 1))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        gv = G @ v
        new = float(v @ gv)
        nrm = np.linalg.norm(gv)
        if nrm == 0.0:
            return 0.0
        v = gv / nrm
        if abs(new - est) <= rtol * abs(new):
            return new * factor
        est = new
    warnings.warn("power iteration did not converge; using row-sum bound", RuntimeWarning)
    return float(np.max(np.sum(np.abs(G), axis=1)))


class SmoothLossModel:
    """Contract for the smooth part of the objective.

    Subclasses implement ``value`` and ``grad`` on flat arrays. Block and
    coordinate gradients default to slicing the full gradient; override them
    when a cheaper partial evaluation exists. Lipschitz bounds default to the
    ``lipschitz`` value passed at construction.
    """

    block_sizes: tuple[int, ...]

    def __init__(self, block_sizes, lipschitz=None, block_lipschitz=None):
        self.block_sizes = tuple(int(s) for s in block_sizes)
        self._slices = block_slices(self.block_sizes)
        self._lipschitz = lipschitz
        self._block_lipschitz = block_lipschitz

    @property
    def dim(self) -> int:
        return sum(self.block_sizes)

    @property
    def m(self) -> int:
        return len(self.block_sizes)

    def _flat(self, theta):
        x = theta.flat if isinstance(theta, GroupedVector) else np.asarray(theta, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: expected ({self.dim},), got {x.shape}")
        return x

    def block_slice(self, i) -> slice:
        if not 0 <= i < self.m:
            raise IndexError(f"block index {i} out of range for {self.m} blocks")
        return self._slices[i]

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        return self.value(x), self.grad(x)

    def block_grad(self, x, i) -> np.ndarray:
        return self.grad(x)[self.block_slice(i)]

    def coord_grad(self, x, k) -> float:
        return float(self.grad(x)[k])

    def lipschitz(self) -> float:
        if self._lipschitz is None:
            raise ValueError("no Lipschitz bound available for this loss")
        return float(self._lipschitz)

    def block_lipschitz(self, i) -> float:
        self.block_slice(i)
        if self._block_lipschitz is None:
            return self.lipschitz()
        return float(self._block_lipschitz[i])

    def coord_lipschitz(self) -> np.ndarray:
        """Per-coordinate Lipschitz bounds of the partial derivatives."""
        out = np.empty(self.dim)
        for i, sl in enumerate(self._slices):
            out[sl] = self.block_lipschitz(i)
        return out


class BlockMatrixView:
    """Row blocks, single rows, principal submatrices and diagonals of ``G``.

    Block indices are 0-based.
    """

    def __init__(self, G, block_sizes):
        self.G = np.asarray(G)
        self.slices = block_slices(block_sizes)

    def rows(self, i) -> np.ndarray:
        return self.G[self.slices[i], :]

    def row(self, i, j) -> np.ndarray:
        sl = self.slices[i]
        if not 0 <= j < sl.stop - sl.start:
            raise IndexError(f"row {j} out of range for block {i}")
        return self.G[sl.start + j, :]

    def principal(self, i) -> np.ndarray:
        sl = self.slices[i]
        return self.G[sl, sl]

    def diag(self, i) -> np.ndarray:
        return np.diag(self.G)[self.slices[i]]


class QuadraticLSALoss(SmoothLossModel):
    """``0.5 * (x - theta_tilde)' G (x - theta_tilde)`` with ``G`` symmetric PD."""

    def __init__(self, G, theta_tilde, block_sizes=None):
        G = np.array(G, dtype=float)
        tt = theta_tilde.flat if isinstance(theta_tilde, GroupedVector) else theta_tilde
        tt = np.array(tt, dtype=float).ravel()
        if block_sizes is None:
            block_sizes = theta_tilde.sizes if isinstance(theta_tilde, GroupedVector) else (tt.size,)
        if G.shape != (tt.size, tt.size):
            raise ValueError(f"G has shape {G.shape}, expected {(tt.size, tt.size)}")
        scale = max(np.max(np.abs(G)), 1.0)
        if np.max(np.abs(G - G.T)) > 1e-10 * scale:
            raise ValueError("G is not symmetric")
        try:
            self._chol = scipy.linalg.cholesky(G, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("G is not positive definite") from exc
        super().__init__(block_sizes)
        if self.dim != tt.size:
            raise ValueError(f"block sizes {self.block_sizes} do not match dimension {tt.size}")
        G.setflags(write=False)
        tt.setflags(write=False)
        self.G = G
        self.theta_tilde = tt
        self.view = BlockMatrixView(G, self.block_sizes)
        self._L = None
        self._Li = None

    def value(self, x) -> float:
        d = self._flat(x) - self.theta_tilde
        return 0.5 * float(d @ self.G @ d)

    def grad(self, x) -> np.ndarray:
        return self.G @ (self._flat(x) - self.theta_tilde)

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        d = self._flat(x) - self.theta_tilde
        g = self.G @ d
        return 0.5 * float(d @ g), g

    def block_grad(self, x, i) -> np.ndarray:
        return self.view.rows(i) @ (self._flat(x) - self.theta_tilde)

    def coord_grad(self, x, k) -> float:
        return float(self.G[k] @ (self._flat(x) - self.theta_tilde))

    def lipschitz(self) -> float:
        if self._L is None:
            self._L = power_iteration(self.G)
        return self._L

    def block_lipschitz(self, i) -> float:
        self.block_slice(i)
        if self._Li is None:
            self._Li = [power_iteration(self.view.principal(k)) for k in range(self.m)]
        return self._Li[i]

    def coord_lipschitz(self) -> np.ndarray:
        return np.diag(self.G).copy()

    def to_dict(self) -> dict:
        return {
            "G": self.G.tolist(),
            "theta_tilde": self.theta_tilde.tolist(),
            "block_sizes": list(self.block_sizes),
        }

    @classmethod
    def from_dict(cls, d) -> QuadraticLSALoss:
        return cls(np.array(d["G"], dtype=float), np.array(d["theta_tilde"], dtype=float),
                   d.get("block_sizes"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s) -> QuadraticLSALoss:
        return cls.from_dict(json.loads(s))


class RegressionLoss(SmoothLossModel):
    """Half residual sum of squares ``0.5 * ||y - X x||^2``."""

    def __init__(self, X, y, block_sizes=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("X and y have inconsistent numbers of rows")
        super().__init__(block_sizes or (X.shape[1],))
        self.X, self.y = X, y
        self._gram = X.T @ X
        self._Xty = X.T @ y
        self._yy = 0.5 * float(y @ y)
        self._L = None

    def value(self, x) -> float:
        r = self.y - self.X @ self._flat(x)
        return 0.5 * float(r @ r)

    def grad(self, x) -> np.ndarray:
        return self._gram @ self._flat(x) - self._Xty

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        # 0.5 ||y||^2 - x'X'y + 0.5 x'X'X x, via the cached Gram matrix
        x = self._flat(x)
        gx = self._gram @ x
        val = self._yy - float(x @ self._Xty) + 0.5 * float(x @ gx)
        return val, gx - self._Xty

    def block_grad(self, x, i) -> np.ndarray:
        sl = self.block_slice(i)
        return self._gram[sl] @ self._flat(x) - self._Xty[sl]

    def coord_grad(self, x, k) -> float:
        return float(self._gram[k] @ self._flat(x) - self._Xty[k])

    def lipschitz(self) -> float:
        if self._L is None:
            self._L = power_iteration(self._gram)
        return self._L

    def block_lipschitz(self, i) -> float:
        sl = self.block_slice(i)
        return power_iteration(self._gram[sl, sl])

    def coord_lipschitz(self) -> np.ndarray:
        return np.diag(self._gram).copy()


# functional aliases


def loss_value(loss: SmoothLossModel, theta) -> float:
    return loss.value(theta)


def loss_grad(loss: SmoothLossModel, theta) -> GroupedVector:
    return GroupedVector(loss.grad(theta), loss.block_sizes)


def loss_block_grad(loss: SmoothLossModel, theta, i) -> np.ndarray:
    return loss.block_grad(theta, i)


def global_lipschitz(loss: SmoothLossModel) -> float:
    return loss.lipschitz()


def block_lipschitz(loss: SmoothLossModel, i) -> float:
    return loss.block_lipschitz(i)
