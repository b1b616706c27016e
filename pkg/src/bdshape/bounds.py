"""Analytical limits on what a passive scattering matrix can do to a MIMO channel.

Every evaluator here is a pure function of singular values (or of the channel
matrices they come from). Singular-value vectors are zero-padded at the end when
an index runs past their length. Mode indices are 0-based: ``n = 0`` is the
largest singular value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import numerical_rank, pad, svdvals

UNBOUNDED = "unbounded"
NEG_INFINITY = "neg_infinity"


def tag(x: float):
    """JSON-safe value: infinities become the string tags used in reports."""
    if x == math.inf:
        return UNBOUNDED
    if x == -math.inf:
        return NEG_INFINITY
    return float(x)


def untag(x) -> float:
    if x == UNBOUNDED:
        return math.inf
    if x == NEG_INFINITY:
        return -math.inf
    return float(x)


@dataclass
class SvBoundReport:
    """Per-mode lower and upper bounds on channel singular values.

    ``upper`` holds ``inf`` where no finite bound exists; ``lower`` holds ``0``
    where the bound is trivial. ``valid_lower`` / ``valid_upper`` flag the modes
    where the underlying inequality is informative, and ``pivots`` records the
    attaining index pair ``(i, j)`` for each side when one exists.
    """

    lower: np.ndarray
    upper: np.ndarray
    valid_lower: np.ndarray
    valid_upper: np.ndarray
    kind: str = ""
    lower_pivots: list = field(default_factory=list)
    upper_pivots: list = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower < 0) or np.any(self.upper < 0):
            raise ValueError("bounds must be nonnegative")
        if np.any(self.lower > self.upper * (1 + 1e-12) + 1e-300):
            raise ValueError("lower bound exceeds upper bound")

    def __len__(self) -> int:
        return self.lower.size

    def violations(self, sv_h, rtol: float = 1e-9, scale: float | None = None) -> list[dict]:
        """Modes where ``sv_h`` (padded) leaves ``[lower, upper]`` by more than the slack."""
        sv = pad(sv_h, len(self))
        finite = self.upper[np.isfinite(self.upper)]
        ref = scale if scale is not None else max(np.max(sv, initial=0.0), np.max(finite, initial=0.0))
        slack = rtol * max(ref, np.finfo(float).tiny)
        out = []
        for n in range(len(self)):
            if self.valid_upper[n] and sv[n] > self.upper[n] + slack:
                out.append({"bound": self.kind, "mode": n, "side": "upper", "value": float(sv[n]), "limit": float(self.upper[n])})
            if self.valid_lower[n] and sv[n] < self.lower[n] - slack:
                out.append({"bound": self.kind, "mode": n, "side": "lower", "value": float(sv[n]), "limit": float(self.lower[n])})
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lower": [tag(x) for x in self.lower],
            "upper": [tag(x) for x in self.upper],
            "valid_lower": [bool(x) for x in self.valid_lower],
            "valid_upper": [bool(x) for x in self.valid_upper],
            "lower_pivots": [list(p) if p is not None else None for p in self.lower_pivots],
            "upper_pivots": [list(p) if p is not None else None for p in self.upper_pivots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvBoundReport":
        return cls(
            lower=[untag(x) for x in d["lower"]],
            upper=[untag(x) for x in d["upper"]],
            valid_lower=np.array(d["valid_lower"], dtype=bool),
            valid_upper=np.array(d["valid_upper"], dtype=bool),
            kind=d.get("kind", ""),
            lower_pivots=[tuple(p) if p is not None else None for p in d.get("lower_pivots", [])],
            upper_pivots=[tuple(p) if p is not None else None for p in d.get("upper_pivots", [])],
        )


def dof_range(h_b, h_f) -> tuple[int, int]:
    """Smallest and largest achievable rank of ``H_B Theta H_F`` over unitary ``Theta``."""
    h_b = np.asarray(h_b)
    n_s = h_b.shape[1]
    r_b = numerical_rank(h_b)
    r_f = numerical_rank(h_f)
    return max(r_b + r_f - n_s, 0), min(r_b, r_f)


def _range_basis(m: np.ndarray, side: str) -> np.ndarray:
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    r = numerical_rank(s)
    return u[:, :r] if side == "left" else vh[:r].conj().T


def rank_deficient_T(h_d, h, which: str) -> np.ndarray:
    """Singular values of the auxiliary matrix ``T`` for a rank-deficient RIS link.

    ``which="forward"``: ``h`` is ``H_F`` and ``T T^H = H_D (I - V_F V_F^H) H_D^H``.
    ``which="backward"``: ``h`` is ``H_B`` and ``T T^H = H_D^H (I - U_B U_B^H) H_D``.
    ``V_F`` / ``U_B`` span the right / left singular subspace of the nonzero
    singular values. The result has ``min(N_R, N_T)`` entries, descending.
    """
    h_d = np.asarray(h_d, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if which == "forward":
        v = _range_basis(h, "right")
        proj = h_d - (h_d @ v) @ v.conj().T
    elif which == "backward":
        u = _range_basis(h, "left")
        proj = h_d - u @ (u.conj().T @ h_d)
    else:
        raise ValueError("which must be 'forward' or 'backward'")
    return pad(svdvals(proj), min(h_d.shape))


def sv_bounds_rank_deficient(sv_t, k: int, n: int) -> SvBoundReport:
    """Interlacing bounds ``sigma_n(T) <= sigma_n(H) <= sigma_{n-k}(T)`` for a rank-``k`` RIS link.

    ``n`` is the number of modes reported (``min(N_R, N_T)``). In 0-based terms
    the upper bound exists for modes ``m >= k`` and the lower bound is reported
    for modes ``m < n - k``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    t = pad(sv_t, n)
    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    vl = np.zeros(n, dtype=bool)
    vu = np.zeros(n, dtype=bool)
    for m in range(n):
        if m >= k:
            upper[m] = t[m - k]
            vu[m] = True
        if m < n - k:
            lower[m] = t[m]
            vl[m] = True
    return SvBoundReport(lower, upper, vl, vu, kind="rank-deficient")


def _sorted_desc(x) -> np.ndarray:
    return np.sort(np.asarray(x, dtype=float))[::-1]


def sv_pivots(sv_b, sv_f, n: int):
    """0-based pivots ``((i_lo, j_lo), (i_hi, j_hi))`` of the bounds on ``sigma_n``.

    The upper bound minimises ``b_i f_j`` over ``i + j = n``; the lower bound
    maximises it over ``i + j = n + N_S - 1``. Ties go to the smallest ``i``.
    """
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    n_s = max(b.size, f.size)
    b, f = pad(b, n_s), pad(f, n_s)
    i_hi = np.arange(0, n + 1)
    j_hi = n - i_hi
    hi = int(np.argmin(b[i_hi] * f[j_hi]))
    i_lo = np.arange(n, n_s)
    j_lo = n + n_s - 1 - i_lo
    lo = int(np.argmax(b[i_lo] * f[j_lo]))
    return (int(i_lo[lo]), int(j_lo[lo])), (int(i_hi[hi]), int(j_hi[hi]))


def sv_bounds_nd(sv_b, sv_f, n: int) -> tuple[float, float]:
    """``(lower, upper)`` on ``sigma_n(H_B Theta H_F)`` for 0-based mode ``n``.

    Inputs are descending singular values; the shorter one is zero-padded to
    ``N_S`` (taken as the longer length). Modes at or beyond ``N_S`` give
    ``(0, 0)``.
    """
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    n_s = max(b.size, f.size)
    if n < 0:
        raise ValueError("mode index must be nonnegative")
    if n >= n_s:
        return 0.0, 0.0
    b, f = pad(b, n_s), pad(f, n_s)
    (il, jl), (ih, jh) = sv_pivots(b, f, n)
    return float(b[il] * f[jl]), float(b[ih] * f[jh])


def sv_bounds_nd_report(sv_b, sv_f, n_modes: int | None = None) -> SvBoundReport:
    """All-mode version of :func:`sv_bounds_nd` with pivots."""
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    n_s = max(b.size, f.size)
    m = n_modes if n_modes is not None else n_s
    lower, upper, lp, up = np.zeros(m), np.zeros(m), [], []
    for n in range(m):
        lower[n], upper[n] = sv_bounds_nd(b, f, n)
        if n < n_s:
            lo, hi = sv_pivots(b, f, n)
        else:
            lo = hi = None
        lp.append(lo)
        up.append(hi)
    ones = np.ones(m, dtype=bool)
    return SvBoundReport(lower, upper, ones, ones.copy(), kind="sv-nd", lower_pivots=lp, upper_pivots=up)


def product_bounds_nd(sv_b, sv_f, k: int, n_bar: int | None = None) -> tuple[float, float]:
    """Bounds on products of ``k`` singular values of ``H_B Theta H_F``.

    Returns ``(lower, upper)`` where ``upper`` caps the product of the ``k``
    largest and ``lower`` floors the product of the ``k`` smallest singular
    values, all vectors padded to ``n_bar = max(N_T, N_S, N_R)``.
    """
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    nb = n_bar if n_bar is not None else max(b.size, f.size)
    if not 1 <= k <= nb:
        raise ValueError(f"k must lie in [1, {nb}]")
    prod = pad(b, nb) * pad(f, nb)
    return float(np.prod(prod[nb - k:])), float(np.prod(prod[:k]))


def horn_r1_check(sv_b, sv_f, sv_h, rtol: float = 1e-9) -> list[dict]:
    """Singleton Horn inequalities ``sigma_{i+j}(H) <= sigma_i(H_B) sigma_j(H_F)`` (0-based).

    Returns the violated ``(i, j)`` pairs with both sides; an empty list means
    every inequality holds within ``rtol`` times ``sigma_0(H_B) sigma_0(H_F)``.
    """
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    h = np.asarray(sv_h, dtype=float)
    nb = max(b.size, f.size, h.size)
    b, f, h = pad(b, nb), pad(f, nb), pad(h, nb)
    slack = rtol * max(b[0] * f[0], np.max(h, initial=0.0), np.finfo(float).tiny)
    bad = []
    for i in range(nb):
        for j in range(nb - i):
            if h[i + j] > b[i] * f[j] + slack:
                bad.append({"i": i, "j": j, "sigma_h": float(h[i + j]), "limit": float(b[i] * f[j])})
    return bad


def power_bounds_nd(sv_b, sv_f, n_s: int | None = None) -> tuple[float, float]:
    """``(lower, upper)`` on ``||H_B Theta H_F||_F^2``.

    The upper bound pairs the singular values in the same order, the lower one in
    reverse order, after padding both vectors to ``n_s`` (default: the longer
    input).
    """
    b = np.asarray(sv_b, dtype=float)
    f = np.asarray(sv_f, dtype=float)
    m = n_s if n_s is not None else max(b.size, f.size)
    b2 = pad(_sorted_desc(b), m) ** 2
    f2 = pad(_sorted_desc(f), m) ** 2
    return float(np.dot(b2, f2[::-1])), float(np.dot(b2, f2))


@dataclass(frozen=True)
class CapacityBounds:
    """Extreme-SNR capacity limits in bits; ``high`` may be ``-inf``."""

    low: float
    high: float

    def to_dict(self) -> dict:
        return {"low_snr_bits": tag(self.low), "high_snr_bits": tag(self.high)}

    def __iter__(self):
        yield self.low
        yield self.high


def capacity_extreme_bounds(sv_b, sv_f, rho: float, n: int) -> CapacityBounds:
    """Capacity limits at very low and very high SNR ``rho = P / eta``.

    ``low = rho * sigma_0(H_B)^2 sigma_0(H_F)^2`` and
    ``high = n log(rho / n) + 2 log prod_{m<n} sigma_m(H_B) sigma_m(H_F)``, both
    computed in nats and returned in bits. A zero product makes ``high = -inf``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    b = pad(_sorted_desc(sv_b), max(n, 1))
    f = pad(_sorted_desc(sv_f), max(n, 1))
    low = rho * b[0] ** 2 * f[0] ** 2
    prods = b[:n] * f[:n]
    if np.any(prods <= 0):
        high = -math.inf
    else:
        high = n * math.log(rho / n) + 2.0 * float(np.sum(np.log(prods)))
    return CapacityBounds(low / math.log(2), high / math.log(2) if math.isfinite(high) else high)
