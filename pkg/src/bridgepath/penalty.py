"""Grouped weighted l^q penalty ``lam * sum_i sum_j w^i_j |theta^i_j|^{q_i}``."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .losses import block_slices
from .prox_core import threshold_same_q, vector_threshold

__all__ = ["PenaltySpec", "WEIGHT_CAP", "LAMW_CAP"]

# caps keep arithmetic finite for coordinates whose initial estimate is ~0
WEIGHT_CAP = 1e12
LAMW_CAP = 1e12


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Per-block exponents, per-coordinate weights and the global scale ``lam``.

    ``weights`` is stored flat; ``block_sizes`` gives the partition.
    """

    q: tuple[float, ...]
    weights: np.ndarray = field(repr=False)
    block_sizes: tuple[int, ...]
    lam: float = 0.0

    def __post_init__(self):
        q = tuple(float(v) for v in np.atleast_1d(self.q))
        sizes = tuple(int(s) for s in self.block_sizes)
        w = np.array(self.weights, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lam", float(self.lam))
        if len(q) != len(sizes):
            raise ValueError(f"{len(q)} exponents for {len(sizes)} blocks")
        if any(not (0.0 < v <= 1.0) for v in q):
            raise ValueError(f"every q must lie in (0, 1], got {q}")
        if w.size != sum(sizes):
            raise ValueError(f"{w.size} weights for dimension {sum(sizes)}")
        if not (np.all(np.isfinite(w)) and np.all(w > 0.0)):
            raise ValueError("weights must be finite and strictly positive")
        if not (self.lam >= 0.0 and np.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam!r}")
        qf = np.repeat(np.array(q), sizes)
        qf.setflags(write=False)
        object.__setattr__(self, "_q_flat", qf)
        object.__setattr__(self, "_q_single", q[0] if len(set(q)) == 1 else None)
        object.__setattr__(self, "_lamw", np.minimum(self.lam * w, LAMW_CAP))

    @classmethod
    def uniform(cls, block_sizes, q, lam=0.0, weights=None) -> PenaltySpec:
        """Same exponent (or one per block) with unit weights unless given."""
        sizes = tuple(int(s) for s in block_sizes)
        qs = np.broadcast_to(np.atleast_1d(np.asarray(q, dtype=float)), (len(sizes),))
        w = np.ones(sum(sizes)) if weights is None else weights
        return cls(tuple(qs), w, sizes, lam)

    @property
    def dim(self) -> int:
        return int(self.weights.size)

    @property
    def q_flat(self) -> np.ndarray:
        return self._q_flat

    @property
    def slices(self) -> list[slice]:
        return block_slices(self.block_sizes)

    def with_lam(self, lam) -> PenaltySpec:
        return replace(self, lam=lam)

    def lam_w(self, step=1.0) -> np.ndarray:
        """Threshold scale ``step * min(lam * w, LAMW_CAP)`` per coordinate."""
        return self._lamw * step

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: expected ({self.dim},), got {x.shape}")
        if self.lam == 0.0:
            return 0.0
        q = self._q_single
        if q == 1.0:
            return float(self._lamw @ np.abs(x))
        if q == 0.5:
            return float(self._lamw @ np.sqrt(np.abs(x)))
        return float(self._lamw @ np.abs(x) ** (self._q_flat if q is None else q))

    def prox(self, z, step) -> np.ndarray:
        """Proximal map of ``step * penalty``; ``step`` may be per-coordinate."""
        if self._q_single is not None:
            return threshold_same_q(self._q_single, self._lamw * step, z)
        return vector_threshold(z, self._q_flat, self._lamw * step)

    def prox_block(self, z, step, i) -> np.ndarray:
        return threshold_same_q(self.q[i], self._lamw[self.slices[i]] * step, z)

    def to_dict(self) -> dict:
        return {
            "q": list(self.q),
            "weights": self.weights.tolist(),
            "block_sizes": list(self.block_sizes),
            "lam": self.lam,
        }

    @classmethod
    def from_dict(cls, d) -> PenaltySpec:
        sizes = d["block_sizes"]
        w = d.get("weights")
        if w is None:
            w = np.ones(sum(sizes))
        return cls(tuple(d["q"]), np.asarray(w, dtype=float), tuple(sizes), d.get("lam", 0.0))
