"""Adaptive q-thresholding operators.

The scalar operator ``T^q_lam(z)`` is the proximal map of ``lam * |.|^q``::

    T^q_lam(z) = argmin_theta 0.5 * (z - theta)**2 + lam * |theta|**q

For ``0 < q < 1`` it has a dead zone ``|z| <= t`` and jumps to a magnitude
of at least ``theta_{q,lam}`` outside of it. Ties at ``|z| == t`` resolve to 0.
``q == 1`` is soft thresholding and ``q == 1/2`` has a closed form; every
other exponent goes through a safeguarded Newton solve of the stationarity
equation ``theta + lam * q * theta**(q - 1) = |z|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoRoot",
    "ThresholdParams",
    "ThresholdConstants",
    "threshold_constants",
    "solve_root",
    "scalar_threshold",
    "threshold_scalar",
    "half_threshold_closed",
    "soft_threshold",
    "hard_threshold",
    "vector_threshold",
]

_ROOT_MAXITER = 100


class NoRoot(ValueError):
    """Raised when ``|z|`` does not exceed the threshold, so no nonzero branch exists."""


def _check_q(q, *, allow_one=True):
    upper_ok = q <= 1.0 if allow_one else q < 1.0
    if not (q > 0.0 and upper_ok and math.isfinite(q)):
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise ValueError(f"exponent q must lie in {bound}, got {q!r}")


@dataclass(frozen=True)
class ThresholdParams:
    """Exponent, penalty scale and positive weight of one scalar threshold."""

    q: float
    lam: float
    w: float = 1.0

    def __post_init__(self):
        _check_q(self.q)
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam!r}")
        if not (self.w > 0.0 and math.isfinite(self.w)):
            raise ValueError(f"weight w must be finite and > 0, got {self.w!r}")

    @property
    def effective(self) -> float:
        return self.lam * self.w


@dataclass(frozen=True)
class ThresholdConstants:
    theta_q_lam: float
    t_q_lam: float
    c_q: float


def _c_q(q):
    return (2.0 * (1.0 - q)) ** (1.0 / (2.0 - q)) * (1.0 + q / (2.0 * (1.0 - q)))


def _theta_q(q, lam):
    return (2.0 * lam * (1.0 - q)) ** (1.0 / (2.0 - q))


def threshold_constants(q: float, lam: float) -> ThresholdConstants:
    """Jump magnitude, threshold location and ``c_q`` for ``0 < q < 1``.

    ``t_q_lam`` is computed from ``theta_q_lam`` and cross-checked against
    the rewritten form ``c_q * lam**(1/(2-q))``.
    """
    _check_q(q, allow_one=False)
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"lam must be finite and > 0, got {lam!r}")
    theta = _theta_q(q, lam)
    t = theta + lam * q * theta ** (q - 1.0)
    c = _c_q(q)
    t_alt = c * lam ** (1.0 / (2.0 - q))
    if not math.isclose(t, t_alt, rel_tol=1e-12):
        raise ArithmeticError(f"threshold forms disagree: {t!r} vs {t_alt!r}")
    return ThresholdConstants(theta_q_lam=theta, t_q_lam=t, c_q=c)


def _root_vec(q, lam, z_abs):
    """Larger root of ``theta + lam*q*theta**(q-1) = z_abs``, vectorized.

    Assumes every ``z_abs > t_{q,lam}``. The left-hand side is increasing and
    convex on ``(theta_{q,lam}, z_abs)``, so Newton started at the right end
    of the bracket descends monotonically; steps leaving the bracket fall back
    to bisection.
    """
    z_abs = np.asarray(z_abs, dtype=float)
    lq = np.broadcast_to(np.asarray(lam, dtype=float), z_abs.shape) * q
    lo = _theta_q(q, lq / q)
    hi = z_abs.copy()
    theta = z_abs.copy()
    active = np.arange(theta.size)
    eps = 4.0 * np.finfo(float).eps
    for _ in range(_ROOT_MAXITER):
        th, c = theta[active], lq[active]
        f = th + c * th ** (q - 1.0) - z_abs[active]
        fp = 1.0 + c * (q - 1.0) * th ** (q - 2.0)
        right = f >= 0.0
        hi[active] = np.where(right, th, hi[active])
        lo[active] = np.where(right, lo[active], th)
        new = th - f / fp
        a, b = lo[active], hi[active]
        bad = ~((new > a) & (new <= b))
        new = np.where(bad, 0.5 * (a + b), new)
        theta[active] = new
        active = active[np.abs(new - th) > eps * th]
        if active.size == 0:
            break
    return theta


def solve_root(q: float, lam: float, z_abs: float) -> float:
    """Nonzero branch ``theta*`` of the thresholding operator at ``|z| = z_abs``.

    Raises
    ------
    NoRoot
        If ``z_abs <= t_{q,lam}`` (including the tie).
    """
    c = threshold_constants(q, lam)
    if not z_abs > c.t_q_lam:
        raise NoRoot(f"|z|={z_abs!r} does not exceed threshold t={c.t_q_lam!r}")
    return float(_root_vec(q, np.array([lam]), np.array([float(z_abs)]))[0])


def soft_threshold(lam_w, z):
    """``sgn(z) * max(|z| - lam_w, 0)``, elementwise."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - lam_w, 0.0)


def hard_threshold(lam, z):
    """Limit operator as ``q -> 0``; keeps ``z`` where ``|z| > sqrt(2*lam)``.

    Exposed for comparisons only, the estimators restrict ``q`` to ``(0, 1]``.
    """
    z = np.asarray(z, dtype=float)
    return np.where(np.abs(z) > np.sqrt(2.0 * np.asarray(lam, dtype=float)), z, 0.0)


def _half_vec(lam_w, z):
    z = np.asarray(z, dtype=float)
    lam_w = np.broadcast_to(np.asarray(lam_w, dtype=float), z.shape)
    az = np.abs(z)
    keep = az > 1.5 * lam_w ** (2.0 / 3.0)
    out = np.zeros_like(z)
    if keep.any():
        zk, lk, ak = z[keep], lam_w[keep], az[keep]
        phi = np.arccos(lk / 4.0 * (ak / 3.0) ** -1.5)
        mag = (2.0 / 3.0) * ak * (1.0 + np.cos(2.0 * np.pi / 3.0 - (2.0 / 3.0) * phi))
        # the nonzero branch never drops below the jump size lam_w**(2/3)
        mag = np.maximum(mag, lk ** (2.0 / 3.0))
        out[keep] = np.where(zk < 0.0, -mag, mag)
    return out


def half_threshold_closed(lam_w: float, z: float) -> float:
    """Closed-form ``T^{1/2}_{lam_w}(z)`` via the trigonometric cubic solution."""
    if not lam_w > 0.0:
        raise ValueError(f"lam_w must be > 0, got {lam_w!r}")
    return float(_half_vec(lam_w, np.array([float(z)]))[0])


def _general_vec(q, lam_w, z):
    z = np.asarray(z, dtype=float)
    lam_w = np.broadcast_to(np.asarray(lam_w, dtype=float), z.shape)
    az = np.abs(z)
    pos = lam_w > 0.0
    out = np.where(pos, 0.0, z)
    t = np.zeros_like(z)
    t[pos] = _c_q(q) * lam_w[pos] ** (1.0 / (2.0 - q))
    keep = pos & (az > t)
    if keep.any():
        mag = _root_vec(q, lam_w[keep], az[keep])
        out[keep] = np.where(z[keep] < 0.0, -mag, mag)
    return out


def threshold_same_q(q, lam_w, z):
    """Vector threshold with one exponent ``q`` for all coordinates (no validation)."""
    if q == 1.0:
        return soft_threshold(lam_w, z)
    if q == 0.5:
        z = np.asarray(z, dtype=float)
        lam_w = np.broadcast_to(np.asarray(lam_w, dtype=float), z.shape)
        pos = lam_w > 0.0
        if pos.all():
            return _half_vec(lam_w, z)
        out = z.copy()
        out[pos] = _half_vec(lam_w[pos], z[pos])
        return out
    return _general_vec(q, lam_w, z)


def _scalar_root(q, lw, az):
    lq = lw * q
    lo = _theta_q(q, lw)
    hi = th = az
    for _ in range(_ROOT_MAXITER):
        f = th + lq * th ** (q - 1.0) - az
        if f >= 0.0:
            hi = th
        else:
            lo = th
        new = th - f / (1.0 + lq * (q - 1.0) * th ** (q - 2.0))
        if not lo < new <= hi:
            new = 0.5 * (lo + hi)
        if abs(new - th) <= 4.0 * 2.220446049250313e-16 * th:
            return new
        th = new
    return th


def threshold_scalar(q: float, lam_w: float, z: float) -> float:
    """Scalar ``T^q_{lam_w}(z)`` in plain floating point (no array overhead)."""
    if z == 0.0 or lam_w <= 0.0:
        return z
    az = abs(z)
    if q == 1.0:
        mag = az - lam_w
        if mag <= 0.0:
            return 0.0
    elif q == 0.5:
        jump = lam_w ** (2.0 / 3.0)
        if az <= 1.5 * jump:
            return 0.0
        phi = math.acos(lam_w / 4.0 * (az / 3.0) ** -1.5)
        mag = max((2.0 / 3.0) * az * (1.0 + math.cos(2.0 * math.pi / 3.0 - (2.0 / 3.0) * phi)), jump)
    else:
        if az <= _c_q(q) * lam_w ** (1.0 / (2.0 - q)):
            return 0.0
        mag = _scalar_root(q, lam_w, az)
    return -mag if z < 0.0 else mag


def scalar_threshold(p: ThresholdParams, z: float) -> float:
    """Apply ``T^q_{lam*w}`` to a single value."""
    return threshold_scalar(float(p.q), p.effective, float(z))


def vector_threshold(z, q, lam_w):
    """Coordinatewise adaptive q-thresholding.

    Parameters
    ----------
    z : array_like, shape (p,)
    q : float or array_like, shape (p,)
        Exponent per coordinate, each in (0, 1].
    lam_w : float or array_like, shape (p,)
        Effective penalty ``lam * w`` per coordinate (>= 0). Zero means identity.
    """
    z = np.asarray(z, dtype=float)
    lam_w = np.asarray(lam_w, dtype=float)
    q = np.asarray(q, dtype=float)
    if lam_w.ndim and lam_w.shape != z.shape:
        raise ValueError(f"dimension mismatch: z {z.shape} vs lam_w {lam_w.shape}")
    if q.ndim and q.shape != z.shape:
        raise ValueError(f"dimension mismatch: z {z.shape} vs q {q.shape}")
    if np.any(lam_w < 0.0):
        raise ValueError("lam_w must be non-negative")
    if q.ndim == 0:
        _check_q(float(q))
        return threshold_same_q(float(q), lam_w, z)
    lam_w = np.broadcast_to(lam_w, z.shape)
    out = np.empty_like(z)
    for qv in np.unique(q):
        _check_q(float(qv))
        sel = q == qv
        out[sel] = threshold_same_q(float(qv), lam_w[sel], z[sel])
    return out
