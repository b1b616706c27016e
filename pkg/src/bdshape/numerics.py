"""Dense matrix routines shared by every other module.

All functions are pure and operate on ``numpy`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateProjectionError,
    NoTransmissionError,
    PreconditionError,
)

# Singular values below RANK_RTOL * sigma_max count as zero for every rank decision.
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class PowerAllocation:
    """Water-filling result: per-mode power ``levels`` and the water level ``mu``."""

    levels: np.ndarray
    water_level: float

    @property
    def total(self) -> float:
        return float(np.sum(self.levels))


def svdvals(m: np.ndarray) -> np.ndarray:
    """Singular values in descending order (empty matrices give an empty array)."""
    m = np.asarray(m)
    if m.size == 0:
        return np.zeros(0)
    return scipy.linalg.svdvals(m)


def numerical_rank(m_or_sv: np.ndarray, rtol: float = RANK_RTOL, scale: float | None = None) -> int:
    """Rank with the global relative tolerance; accepts a matrix or its singular values.

    The threshold is ``rtol`` times the largest singular value, or times
    ``scale`` when that is larger. Pass ``scale`` when the matrix is a product
    whose exact value may be zero, so that roundoff is not counted as rank.
    """
    arr = np.asarray(m_or_sv)
    sv = arr if arr.ndim == 1 else svdvals(arr)
    ref = max(sv[0] if sv.size else 0.0, scale or 0.0)
    if ref == 0.0:
        return 0
    return int(np.sum(sv > rtol * ref))


def pad(values: np.ndarray, length: int) -> np.ndarray:
    """Zero-pad (or truncate) a 1-D array to ``length``."""
    values = np.asarray(values, dtype=float)
    out = np.zeros(length)
    k = min(length, values.size)
    out[:k] = values[:k]
    return out


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])) <= atol)


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary (QR of a complex Gaussian with phase fix)."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def crandn(shape, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _require_square(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError(f"{name} must be a square matrix, got shape {m.shape}")


def expm_skew(a: np.ndarray, mu: float = 1.0) -> np.ndarray:
    """Return ``exp(mu * a)`` for a skew-Hermitian ``a``.

    ``1j * a`` is Hermitian, so ``a = V diag(-1j * w) V^H`` with real ``w`` and the
    exponential only rotates eigenvalues around the unit circle. The result is
    unitary to roundoff.
    """
    a = np.asarray(a, dtype=complex)
    _require_square(a, "a")
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.eye(a.shape[0], dtype=complex)
    if np.linalg.norm(a + a.conj().T) > 1e-10 * norm:
        raise PreconditionError("expm_skew expects a skew-Hermitian matrix")
    h = 1j * a
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * mu * w)) @ v.conj().T


def skew_exponential(a: np.ndarray):
    """Return ``mu -> exp(mu * a)`` for a skew-Hermitian ``a``, diagonalising ``a`` once.

    Line searches evaluate the same geodesic at many step sizes. Reusing one
    eigendecomposition keeps every evaluation exactly unitary, whereas repeated
    squaring doubles the roundoff with every doubling of the step.
    """
    a = np.asarray(a, dtype=complex)
    _require_square(a, "a")
    norm = np.linalg.norm(a)
    if norm == 0.0:
        eye = np.eye(a.shape[0], dtype=complex)
        return lambda mu: eye.copy()
    if np.linalg.norm(a + a.conj().T) > 1e-10 * norm:
        raise PreconditionError("skew_exponential expects a skew-Hermitian matrix")
    h = 1j * a
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    vh = v.conj().T
    return lambda mu: (v * np.exp(-1j * mu * w)) @ vh


def nearest_unitary(m: np.ndarray) -> np.ndarray:
    """Unitary factor ``U V^H`` of the polar decomposition of a full-rank square ``m``.

    This is the closest unitary matrix to ``m`` in Frobenius norm. Rank-deficient
    inputs raise :class:`DegenerateProjectionError` because the minimizer is then
    not unique.
    """
    m = np.asarray(m, dtype=complex)
    _require_square(m, "m")
    u, s, vh = np.linalg.svd(m)
    if s.size == 0 or s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise DegenerateProjectionError(
            "nearest_unitary: matrix is rank-deficient, projection is not unique"
        )
    return u @ vh


def polar_unitary(m: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """A maximizer of ``Re tr(X^H m)`` over unitary ``X``, defined for any rank.

    On the range of ``m`` the answer is fixed by its SVD. On the null space any
    unitary completion is optimal; the one closest to ``fallback`` is chosen so that
    iterative schemes do not jump between equivalent optima.
    """
    m = np.asarray(m, dtype=complex)
    _require_square(m, "m")
    n = m.shape[0]
    u, s, vh = np.linalg.svd(m)
    r = numerical_rank(s)
    x = u[:, :r] @ vh[:r, :]
    if r < n:
        u2, v2 = u[:, r:], vh[r:, :].conj().T
        if fallback is None:
            core = np.eye(n - r, dtype=complex)
        else:
            uc, _, vch = np.linalg.svd(u2.conj().T @ np.asarray(fallback) @ v2)
            core = uc @ vch
        x = x + u2 @ core @ v2.conj().T
    return x


def takagi(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Autonne-Takagi factorization ``s = Q diag(sigma) Q^T`` of a complex symmetric matrix.

    Starts from an SVD ``s = U diag(sigma) V^H``. On the nonzero singular values,
    ``W = V^H conj(U)`` is a symmetric unitary that commutes with ``diag(sigma)``,
    so ``Q = U sqrt(W)`` gives the factorization. Left singular vectors of zero
    singular values complete ``Q``.

    Returns
    -------
    q : (n, n) unitary ndarray
    sigma : (n,) ndarray, descending
    """
    s = np.asarray(s, dtype=complex)
    _require_square(s, "s")
    norm = np.linalg.norm(s)
    if np.linalg.norm(s - s.T) > 1e-10 * max(norm, np.finfo(float).tiny):
        raise PreconditionError("takagi expects a complex symmetric matrix")
    n = s.shape[0]
    if norm == 0.0:
        return np.eye(n, dtype=complex), np.zeros(n)
    u, sigma, vh = np.linalg.svd(s)
    r = numerical_rank(sigma)
    w = vh[:r, :] @ u[:, :r].conj()
    w = 0.5 * (w + w.T)
    root = scipy.linalg.sqrtm(w)
    q = u.astype(complex).copy()
    q[:, :r] = u[:, :r] @ root
    return q, sigma


def waterfill(gains, budget: float, noise: float) -> PowerAllocation:
    """Capacity-optimal power split ``s_n = max(mu - noise / g_n, 0)`` with ``sum(s_n) = budget``.

    Gains are scanned in descending order; the active set is the largest prefix whose
    water level stays above the weakest active inverse gain, which gives ``mu`` in
    closed form. Output levels follow the input order.
    """
    g = np.asarray(gains, dtype=float)
    if budget <= 0 or noise <= 0:
        raise PreconditionError("waterfill requires budget > 0 and noise > 0")
    if np.any(g < 0):
        raise PreconditionError("waterfill gains must be nonnegative")
    if not np.any(g > 0):
        raise NoTransmissionError("waterfill: all channel gains are zero")
    order = np.argsort(-g, kind="stable")
    sorted_g = g[order]
    positive = sorted_g[sorted_g > 0]
    inv = noise / positive
    mu = 0.0
    for k in range(positive.size, 0, -1):
        mu = (budget + np.sum(inv[:k])) / k
        if mu > inv[k - 1]:
            break
    levels = np.zeros_like(g)
    active = g > 0
    levels[active] = np.maximum(mu - noise / g[active], 0.0)
    return PowerAllocation(levels=levels, water_level=float(mu))
