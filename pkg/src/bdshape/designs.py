"""Closed-form scattering matrices for a fully-connected (or grouped) BD-RIS.

Unless a direct channel is passed explicitly, the designs here shape the
indirect channel ``H_B Theta H_F`` alone. Mode and pivot indices are 0-based.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bounds import sv_pivots
from .channel import ChannelSet
from .errors import ConditioningWarning, InfeasibleCompletionError, PreconditionError
from .manifold import BlockUnitary
from .numerics import RANK_RTOL, numerical_rank, pad, polar_unitary, svdvals, takagi

COND_LIMIT = 1e12
EXHAUSTIVE_LIMIT = 8
RANDOM_PERMUTATION_TRIALS = 10_000


class DesignKind(str, Enum):
    SISO_PHASE_MATCH = "siso-phase-match"
    DOF_MAX = "dof-max"
    DOF_MIN = "dof-min"
    SV_N_MAX = "sv-n-max"
    SV_N_MIN = "sv-n-min"
    POWER_MAX_ND = "power-max-nd"
    POWER_MIN_ND = "power-min-nd"
    RATE_MAX_ND = "rate-max-nd"
    PROCRUSTES_LEFT = "procrustes-left"
    PROCRUSTES_RIGHT = "procrustes-right"


@dataclass(frozen=True)
class DesignGoal:
    """Which closed form to build; ``n`` is the 0-based mode for singular-value goals."""

    kind: DesignKind
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DesignKind(self.kind))
        if self.kind in (DesignKind.SV_N_MAX, DesignKind.SV_N_MIN) and self.n is None:
            raise PreconditionError("singular-value goals need a mode index n")


def design(goal: DesignGoal, channels: ChannelSet) -> BlockUnitary:
    """Dispatch ``goal`` to the matching constructor (SISO goals need ``N_R = N_T = 1``)."""
    k = goal.kind
    hb, hf = channels.h_b, channels.h_f
    if k is DesignKind.SISO_PHASE_MATCH:
        if channels.n_r != 1 or channels.n_t != 1:
            raise PreconditionError("siso-phase-match requires a single-antenna link")
        return siso_phase_match(channels.h_d[0, 0], hb[0], hf[:, 0], channels.n_s)
    if k in (DesignKind.DOF_MAX, DesignKind.DOF_MIN):
        return dof_extremal(hb, hf, maximize=k is DesignKind.DOF_MAX)
    if k in (DesignKind.SV_N_MAX, DesignKind.SV_N_MIN):
        return sv_extremal_nd(hb, hf, goal.n, maximize=k is DesignKind.SV_N_MAX)
    if k in (DesignKind.POWER_MAX_ND, DesignKind.POWER_MIN_ND):
        return power_extremal_nd(hb, hf, maximize=k is DesignKind.POWER_MAX_ND)
    if k is DesignKind.RATE_MAX_ND:
        return rate_optimal_nd(hb, hf)
    side = "left" if k is DesignKind.PROCRUSTES_LEFT else "right"
    return procrustes_approx(channels.h_d, hb, hf, side)


def _full(theta: np.ndarray) -> BlockUnitary:
    return BlockUnitary(theta[None], check=False)


def complete_basis(v: np.ndarray) -> np.ndarray:
    """Unitary matrix whose first column is the unit vector ``v / ||v||``."""
    v = np.asarray(v, dtype=complex).ravel()
    n = v.size
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.eye(n, dtype=complex)
    # QR of [v, I] keeps v's direction in the first column up to a phase, fixed below.
    q, _ = np.linalg.qr(np.column_stack([v / norm, np.eye(n)]))
    q = q[:, :n]
    phase = np.vdot(q[:, 0], v / norm)
    q[:, 0] *= phase / abs(phase)
    return q


def siso_phase_match(h_d: complex, h_b, h_f, group_size: int) -> BlockUnitary:
    """Group-wise branch matching plus phase alignment with the direct link.

    Each block maps the forward group vector onto the conjugate backward group
    vector and rotates the result onto the direct-link phase, so group ``g``
    contributes ``||h_B,g|| * ||h_F,g||`` in phase with ``h_d``.

    Parameters
    ----------
    h_d : complex
        Direct channel; its phase is used (0 if ``h_d == 0``).
    h_b, h_f : (N_S,) array_like
        Backward (RIS to receiver) and forward (transmitter to RIS) vectors,
        so that ``h = h_d + h_b @ Theta @ h_f``.
    group_size : int
        Elements per group, must divide ``N_S``.
    """
    h_b = np.asarray(h_b, dtype=complex).ravel()
    h_f = np.asarray(h_f, dtype=complex).ravel()
    if h_b.size != h_f.size:
        raise PreconditionError("h_b and h_f must have the same length")
    n_s = h_b.size
    if group_size < 1 or n_s % group_size:
        raise PreconditionError("group size must divide N_S")
    phase = h_d / abs(h_d) if h_d != 0 else 1.0
    blocks = []
    for g in range(n_s // group_size):
        sl = slice(g * group_size, (g + 1) * group_size)
        b, f = h_b[sl], h_f[sl]
        if not np.any(b) or not np.any(f):
            blocks.append(phase * np.eye(group_size, dtype=complex))
            continue
        v_b = complete_basis(b.conj())
        u_f = complete_basis(f)
        blocks.append(phase * v_b @ u_f.conj().T)
    return BlockUnitary(np.stack(blocks), check=False)


def _svd_full(m: np.ndarray):
    u, s, vh = np.linalg.svd(np.asarray(m, dtype=complex), full_matrices=True)
    return u, s, vh.conj().T


def dof_extremal(h_b, h_f, maximize: bool) -> BlockUnitary:
    """Fully-connected design reaching either end of the achievable rank range.

    With ``H_B = U_B S_B V_B^H`` and ``H_F = U_F S_F V_F^H``, the indirect rank is
    ``rank(V_B1^H Theta U_F1)`` where ``V_B1`` and ``U_F1`` span the row space of
    ``H_B`` and the column space of ``H_F``. ``Theta = V_B U_F^H`` maps one onto
    the other (rank ``min(r_B, r_F)``). Placing the null space of ``H_B`` first,
    ``Theta = [V_B2, V_B1] U_F^H`` sends as much of ``U_F1`` as possible into that
    null space (rank ``max(r_B + r_F - N_S, 0)``).
    """
    _, s_b, v_b = _svd_full(h_b)
    u_f, _, _ = _svd_full(h_f)
    if maximize:
        return _full(v_b @ u_f.conj().T)
    r_b = numerical_rank(s_b)
    reordered = np.column_stack([v_b[:, r_b:], v_b[:, :r_b]])
    return _full(reordered @ u_f.conj().T)


def _permutation_matrix(perm) -> np.ndarray:
    n = len(perm)
    p = np.zeros((n, n))
    p[np.arange(n), perm] = 1.0
    return p


def _nth_product(b: np.ndarray, f: np.ndarray, perm, n: int) -> float:
    return float(np.sort(b * f[np.asarray(perm)])[::-1][n])


def constructive_permutation(n_s: int, n: int, maximize: bool) -> np.ndarray:
    """Pairing of sorted backward and forward singular values that attains the bound at mode ``n``.

    For the upper bound, rows ``0..n`` take columns ``n..0`` (every product along
    that anti-diagonal is at least the bound, so ``sigma_n`` cannot fall below
    it). For the lower bound, rows ``n..N_S-1`` take columns ``N_S-1..n`` (at
    least ``N_S - n`` products no larger than the bound). Unused rows and
    columns are paired in order.
    """
    perm = -np.ones(n_s, dtype=int)
    if maximize:
        rows = np.arange(0, n + 1)
        perm[rows] = n - rows
    else:
        rows = np.arange(n, n_s)
        perm[rows] = n + n_s - 1 - rows
    free_rows = np.flatnonzero(perm < 0)
    free_cols = np.setdiff1d(np.arange(n_s), perm[perm >= 0])
    perm[free_rows] = free_cols
    return perm


def find_permutation(b, f, n: int, maximize: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Permutation ``pi`` with ``sorted(b * f[pi])[n]`` equal to the bound at mode ``n``.

    Tries the constructive pairing first, then all permutations when
    ``N_S <= 8``, then random permutations.
    """
    from .bounds import sv_bounds_nd

    b = np.asarray(b, dtype=float)
    f = np.asarray(f, dtype=float)
    n_s = b.size
    lower, upper = sv_bounds_nd(b, f, n)
    target = upper if maximize else lower
    tol = 1e-9 * max(b[0] * f[0], np.finfo(float).tiny)

    def ok(perm):
        return abs(_nth_product(b, f, perm, n) - target) <= tol

    perm = constructive_permutation(n_s, n, maximize)
    if ok(perm):
        return perm
    if n_s <= EXHAUSTIVE_LIMIT:
        perms = np.array(list(itertools.permutations(range(n_s))))
        nth = -np.sort(-(b[None, :] * f[perms]), axis=1)[:, n]
        hits = np.flatnonzero(np.abs(nth - target) <= tol)
        if hits.size:
            return perms[hits[0]]
    else:
        rng = rng or np.random.default_rng(0)
        for _ in range(RANDOM_PERMUTATION_TRIALS):
            perm = rng.permutation(n_s)
            if ok(perm):
                return perm
    raise InfeasibleCompletionError(f"no permutation attains the bound at mode {n}")


def sv_extremal_nd(h_b, h_f, n: int, maximize: bool) -> BlockUnitary:
    """Fully-connected design attaining the upper or lower bound on ``sigma_n`` (0-based ``n``).

    The design is ``V_B P U_F^H`` with a permutation ``P`` so that the shaped
    channel's singular values are the products ``sigma_i(H_B) sigma_pi(i)(H_F)``.
    """
    h_b = np.asarray(h_b, dtype=complex)
    h_f = np.asarray(h_f, dtype=complex)
    n_s = h_b.shape[1]
    if not 0 <= n < n_s:
        raise PreconditionError(f"mode index {n} outside [0, {n_s})")
    _, s_b, v_b = _svd_full(h_b)
    u_f, s_f, _ = _svd_full(h_f)
    perm = find_permutation(pad(s_b, n_s), pad(s_f, n_s), n, maximize)
    return _full(v_b @ _permutation_matrix(perm) @ u_f.conj().T)


def sv_pivot(h_b, h_f, n: int, maximize: bool) -> tuple[int, int]:
    """0-based pivot ``(i, j)`` selecting the bound at mode ``n``; ties go to the smallest ``i``."""
    n_s = np.asarray(h_b).shape[1]
    lo, hi = sv_pivots(pad(svdvals(h_b), n_s), pad(svdvals(h_f), n_s), n)
    return hi if maximize else lo


def power_extremal_nd(h_b, h_f, maximize: bool) -> BlockUnitary:
    """``V_B U_F^H`` (largest ``||H_B Theta H_F||_F^2``) or ``V_B J U_F^H`` (smallest)."""
    _, _, v_b = _svd_full(h_b)
    u_f, _, _ = _svd_full(h_f)
    if maximize:
        return _full(v_b @ u_f.conj().T)
    return _full(v_b[:, ::-1] @ u_f.conj().T)


def rate_optimal_nd(h_b, h_f) -> BlockUnitary:
    """Capacity-achieving fully-connected design without a direct link; identical to the power maximiser."""
    return power_extremal_nd(h_b, h_f, maximize=True)


def _pinv(m: np.ndarray, label: str) -> np.ndarray:
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    r = numerical_rank(s)
    if r == 0:
        return np.zeros(m.shape[::-1], dtype=complex)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > COND_LIMIT:
        warnings.warn(
            f"pseudo-inverse of {label} is ill-conditioned (rank {r} of {s.size}, cond {cond:.3g})",
            ConditioningWarning,
            stacklevel=3,
        )
    return (vh[:r].conj().T / s[:r]) @ u[:, :r].conj().T


def procrustes_approx(h_d, h_b, h_f, side: str = "left") -> BlockUnitary:
    """Fully-connected design aligning the indirect channel with the direct one.

    ``side="left"`` solves the orthogonal Procrustes problem for
    ``Theta H_F ~ pinv(H_B) H_D``; ``side="right"`` for ``H_B Theta ~ H_D pinv(H_F)``.
    Either gives ``Theta = U V^H`` from one SVD. A zero direct channel falls back
    to :func:`power_extremal_nd`.
    """
    h_d = np.asarray(h_d, dtype=complex)
    h_b = np.asarray(h_b, dtype=complex)
    h_f = np.asarray(h_f, dtype=complex)
    if side not in ("left", "right"):
        raise PreconditionError("side must be 'left' or 'right'")
    if not np.any(h_d):
        return power_extremal_nd(h_b, h_f, maximize=True)
    if side == "left":
        target = _pinv(h_b, "H_B") @ h_d @ h_f.conj().T
    else:
        target = h_b.conj().T @ h_d @ _pinv(h_f, "H_F")
    if np.linalg.norm(target) <= RANK_RTOL * np.linalg.norm(h_d):
        return power_extremal_nd(h_b, h_f, maximize=True)
    return _full(polar_unitary(target))


def symmetrize_takagi(m) -> np.ndarray:
    """Symmetric unitary ``Q Q^T`` from the Takagi factors of ``(M + M^T) / 2``.

    Among symmetric unitary matrices this maximises ``Re tr(X^H M)``, which makes
    it the symmetric counterpart of the ``U V^H`` rule.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise PreconditionError("m must be square")
    q, _ = takagi(0.5 * (m + m.T))
    out = q @ q.T
    return 0.5 * (out + out.T)
