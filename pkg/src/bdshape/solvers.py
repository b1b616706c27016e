"""Optimisation problems built on the manifold optimiser.

Problems covered: weighted singular-value shaping (Pareto frontier),
achievable-rate maximisation (alternating and two-stage), and channel-power
maximisation by successive affine approximation (SAA).

Internally every solver rescales the channels so that the largest singular
value of ``H_B``, ``H_F`` and the direct channel is at most one. Path-loss
scaled channels are otherwise tiny and the fixed initial Armijo step would be
many orders of magnitude off. Objectives are reported back in the caller's
units. Rates are computed in nats and reported in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .channel import ChannelSet, assemble
from .designs import power_extremal_nd
from .errors import PreconditionError
from .manifold import BlockUnitary, ObjectiveAdapter, OptimizerConfig, optimize
from .numerics import PowerAllocation, numerical_rank, polar_unitary, svdvals, waterfill

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Result types


@dataclass
class FrontierPoint:
    weights: np.ndarray
    achieved_sv: np.ndarray
    theta: BlockUnitary

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.achieved_sv = np.asarray(self.achieved_sv, dtype=float)


@dataclass
class RateResult:
    """Scattering matrix, eigenmode precoder ``W`` and its rate in bits/s/Hz."""

    theta: BlockUnitary
    precoder: np.ndarray
    allocation: PowerAllocation
    rate: float
    trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta": _cplx(self.theta.blocks),
            "precoder": _cplx(self.precoder),
            "allocation": {
                "levels": [float(x) for x in self.allocation.levels],
                "water_level": float(self.allocation.water_level),
            },
            "rate": float(self.rate),
            "trace": [float(x) for x in self.trace],
        }


@dataclass
class SaaResult:
    """Outcome of :func:`maximize_power_saa`.

    ``flagged`` counts group updates whose target matrix was rank-deficient
    (the null-space part of the block was then kept as close as possible to the
    previous block) or identically zero (the block was left unchanged).
    """

    theta: BlockUnitary
    trace: list[float]
    flagged: int = 0

    @property
    def value(self) -> float:
        return self.trace[-1]


def _cplx(a: np.ndarray):
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


# ---------------------------------------------------------------------------
# Scaling


@dataclass(frozen=True)
class _Scaled:
    channels: ChannelSet
    amp: float  # H_scaled = amp * H_original

    @classmethod
    def of(cls, ch: ChannelSet) -> "_Scaled":
        sb = svdvals(ch.h_b)[0]
        sf = svdvals(ch.h_f)[0]
        cb = 1.0 / sb if sb > 0 else 1.0
        cf = 1.0 / sf if sf > 0 else 1.0
        sd = svdvals(ch.h_d)[0] * cb * cf
        extra = 1.0 / sd if sd > 1.0 else 1.0
        root = math.sqrt(extra)
        return cls(ch.scaled(cb * root, cf * root), cb * cf * extra)


# ---------------------------------------------------------------------------
# Objectives


def _grouped(ch: ChannelSet, group_size: int):
    g = ch.n_s // group_size
    return ch.h_b.reshape(ch.n_r, g, group_size), ch.h_f.reshape(g, group_size, ch.n_t)


def power_objective(channels: ChannelSet) -> ObjectiveAdapter:
    """``||H||_F^2`` with Wirtinger gradient ``H_B,g^H H H_F,g^H``."""

    def value(theta):
        h = assemble(channels, theta)
        return float(np.vdot(h, h).real)

    def grad(theta, g):
        l = theta.group_size
        h = assemble(channels, theta)
        sl = slice(g * l, (g + 1) * l)
        return channels.h_b[:, sl].conj().T @ h @ channels.h_f[sl].conj().T

    def grads(theta):
        hb, hf = _grouped(channels, theta.group_size)
        h = assemble(channels, theta)
        return np.einsum("rgi,rt,gjt->gij", hb.conj(), h, hf.conj(), optimize=True)

    return ObjectiveAdapter(value, grad, grads, name="power")


def shaping_subgradient(channels: ChannelSet, theta: BlockUnitary, d_diag, g: int) -> np.ndarray:
    """``H_B,g^H U D V^H H_F,g^H`` from one SVD ``H = U S V^H`` of the current channel.

    With ``D = diag(rho)`` this is a subgradient of ``sum rho_n sigma_n(H)``
    (scaled by two relative to the Wirtinger derivative).
    """
    h = assemble(channels, theta)
    n = min(h.shape)
    d = np.asarray(d_diag, dtype=float)
    if d.size != n:
        raise PreconditionError(f"d_diag must have length {n}")
    u, _, vh = np.linalg.svd(h, full_matrices=False)
    l = theta.group_size
    sl = slice(g * l, (g + 1) * l)
    core = (u * d) @ vh
    return channels.h_b[:, sl].conj().T @ core @ channels.h_f[sl].conj().T


def pareto_objective(channels: ChannelSet, weights) -> ObjectiveAdapter:
    """Weighted sum of singular values ``sum rho_n sigma_n(H)``."""
    w = np.asarray(weights, dtype=float)

    def value(theta):
        return float(np.dot(w, svdvals(assemble(channels, theta))[: w.size]))

    def grad(theta, g):
        return 0.5 * shaping_subgradient(channels, theta, w, g)

    return ObjectiveAdapter(value, grad, name="pareto")


def _rate_nats(h: np.ndarray, q: np.ndarray, eta: float) -> float:
    m = np.eye(h.shape[0]) + h @ q @ h.conj().T / eta
    sign, logdet = np.linalg.slogdet(m)
    return float(logdet)


def rate_gradient(channels: ChannelSet, theta: BlockUnitary, q_cov, eta: float, g: int) -> np.ndarray:
    """Wirtinger gradient of ``log det(I + H Q H^H / eta)`` with respect to block ``g``."""
    q = np.asarray(q_cov, dtype=complex)
    h = assemble(channels, theta)
    inv = np.linalg.inv(np.eye(h.shape[0]) + h @ q @ h.conj().T / eta)
    l = theta.group_size
    sl = slice(g * l, (g + 1) * l)
    return channels.h_b[:, sl].conj().T @ inv @ h @ q @ channels.h_f[sl].conj().T / eta


def rate_objective(channels: ChannelSet, q_cov, eta: float) -> ObjectiveAdapter:
    """Log-det rate (nats) at a fixed transmit covariance."""
    q = np.asarray(q_cov, dtype=complex)

    def value(theta):
        return _rate_nats(assemble(channels, theta), q, eta)

    def grad(theta, g):
        return rate_gradient(channels, theta, q, eta, g)

    def grads(theta):
        hb, hf = _grouped(channels, theta.group_size)
        h = assemble(channels, theta)
        inv = np.linalg.inv(np.eye(h.shape[0]) + h @ q @ h.conj().T / eta)
        core = inv @ h @ q / eta
        return np.einsum("rgi,rt,gjt->gij", hb.conj(), core, hf.conj(), optimize=True)

    return ObjectiveAdapter(value, grad, grads, name="rate")


# ---------------------------------------------------------------------------
# Precoding and capacity


def eigenmode_precoder(h, p: float, eta: float) -> tuple[np.ndarray, PowerAllocation, float]:
    """Capacity-achieving precoder by eigenmode transmission.

    Returns ``(W, allocation, rate)`` with ``W = V_active diag(sqrt(s))``, the
    water-filling allocation over ``sigma_n^2(H)`` and the rate in nats. A zero
    channel gives an ``N_T x 0`` precoder and zero rate.
    """
    if not (p > 0 and eta > 0):
        raise PreconditionError("p and eta must be positive")
    h = np.asarray(h, dtype=complex)
    _, s, vh = np.linalg.svd(h, full_matrices=False)
    r = numerical_rank(s)
    if r == 0:
        return np.zeros((h.shape[1], 0), dtype=complex), PowerAllocation(np.zeros(0), 0.0), 0.0
    gains = s[:r] ** 2
    alloc = waterfill(gains, p, eta)
    active = alloc.levels > 0
    w = vh[:r][active].conj().T * np.sqrt(alloc.levels[active])
    rate = float(np.sum(np.log1p(alloc.levels * gains / eta)))
    return w, alloc, rate


def capacity(h, p: float, eta: float) -> float:
    """Water-filled MIMO capacity of ``h`` in bits/s/Hz."""
    return eigenmode_precoder(h, p, eta)[2] / LN2


# ---------------------------------------------------------------------------
# Pareto frontier


def pareto_frontier(
    channels: ChannelSet,
    weight_list: Sequence,
    group_size: int,
    config: OptimizerConfig | None = None,
    theta0: BlockUnitary | None = None,
    cold_restart: bool = True,
) -> list[FrontierPoint]:
    """Maximise ``sum rho_n sigma_n(H)`` for each weight vector in turn.

    Each solve starts from the previous solution, so a smooth sweep of weights
    traces the frontier continuously. The first solve starts from ``theta0``
    (identity blocks by default). With ``cold_restart`` every weight is also
    solved from identity blocks and the better of the two results is kept; the
    warm start alone can stay trapped at a vertex of the region (for instance
    the largest-``sigma_1`` design) long after the weights have moved past it.
    """
    cfg = config or OptimizerConfig()
    sc = _Scaled.of(channels)
    n = min(channels.n_r, channels.n_t)
    cold = BlockUnitary.identity(channels.n_s, group_size)
    theta = theta0 if theta0 is not None else cold
    points = []
    for w in weight_list:
        w = np.asarray(w, dtype=float)
        if w.size != n or np.any(w < 0) or not np.any(w > 0):
            raise PreconditionError(f"weights must be {n} nonnegative values, not all zero")
        obj = pareto_objective(sc.channels, w)
        res = optimize(obj, theta, cfg)
        if cold_restart:
            alt = optimize(obj, cold, cfg)
            if alt.value > res.value:
                res = alt
        theta = res.theta
        points.append(FrontierPoint(w, svdvals(assemble(channels, theta))[:n], theta))
    return points


# ---------------------------------------------------------------------------
# Power maximisation by SAA


def maximize_power_saa(
    channels: ChannelSet,
    group_size: int,
    config: OptimizerConfig | None = None,
    theta0: BlockUnitary | None = None,
) -> SaaResult:
    """Block-coordinate ascent on ``||H||_F^2`` with polar-factor updates.

    Groups are visited in order; each block becomes the unitary polar factor of
    ``M_g = H_B,g^H H H_F,g^H`` evaluated with the blocks updated so far.
    Because the objective is convex in each block, the linearisation is a
    minoriser and every update is non-decreasing.
    """
    cfg = config or OptimizerConfig()
    sc = _Scaled.of(channels)
    ch = sc.channels
    theta = theta0 if theta0 is not None else BlockUnitary.identity(channels.n_s, group_size)
    if theta.group_size != group_size:
        raise PreconditionError("theta0 group size does not match")
    l = group_size
    blocks = np.array(theta.blocks)
    h = assemble(ch, blocks)
    f = float(np.vdot(h, h).real)
    trace = [f]
    flagged = 0
    for _ in range(cfg.max_outer_iters):
        f_prev = f
        for g in range(blocks.shape[0]):
            sl = slice(g * l, (g + 1) * l)
            hb, hf = ch.h_b[:, sl], ch.h_f[sl]
            m = hb.conj().T @ h @ hf.conj().T
            if not np.any(np.abs(m) > 0):
                flagged += 1
                continue
            if numerical_rank(m) < l:
                flagged += 1
            new = polar_unitary(m, fallback=blocks[g])
            h = h + hb @ (new - blocks[g]) @ hf
            blocks[g] = new
        h = assemble(ch, blocks)
        f = float(np.vdot(h, h).real)
        trace.append(f)
        if abs(f - f_prev) <= cfg.rel_tolerance * abs(f_prev):
            break
    scale = 1.0 / sc.amp ** 2
    return SaaResult(BlockUnitary(blocks, check=False), [t * scale for t in trace], flagged)


# ---------------------------------------------------------------------------
# Rate maximisation


def _rate_result(channels: ChannelSet, theta: BlockUnitary, p: float, eta: float, trace) -> RateResult:
    w, alloc, rate = eigenmode_precoder(assemble(channels, theta), p, eta)
    return RateResult(theta, w, alloc, rate / LN2, list(trace))


def maximize_rate_ao(
    channels: ChannelSet,
    group_size: int,
    p: float,
    eta: float,
    config: OptimizerConfig | None = None,
    theta0: BlockUnitary | None = None,
    max_rounds: int = 100,
) -> RateResult:
    """Alternate RCG over the scattering matrix (covariance fixed) with eigenmode precoding.

    The inner optimiser runs at one tenth of the outer relative tolerance. The
    first round optimises the scattering matrix twice, once for the eigenmode
    covariance and once for an isotropic one, and keeps the better outcome. The
    outer loop stops when the rate changes by at most ``config.rel_tolerance``
    (relative) or after ``max_rounds`` rounds. ``trace`` lists the rate in bits
    after each round, starting with the rate at ``theta0``.
    """
    cfg = config or OptimizerConfig()
    inner = replace(cfg, rel_tolerance=cfg.rel_tolerance / 10.0)
    sc = _Scaled.of(channels)
    ch = sc.channels
    eta_s = eta * sc.amp ** 2
    theta = theta0 if theta0 is not None else BlockUnitary.identity(channels.n_s, group_size)
    if theta.group_size != group_size:
        raise PreconditionError("theta0 group size does not match")
    w, _, rate = eigenmode_precoder(assemble(ch, theta), p, eta_s)
    trace = [rate]
    for k in range(max_rounds):
        if w.shape[1] == 0:
            break
        covariances = [w @ w.conj().T]
        if k == 0:
            # Modes that water-filling leaves dark exert no pull on Theta, so the
            # first round also tries a full-rank isotropic covariance.
            covariances.append(np.eye(ch.n_t) * (p / ch.n_t))
        best = None
        for q in covariances:
            cand = optimize(rate_objective(ch, q, eta_s), theta, inner).theta
            w_c, _, rate_c = eigenmode_precoder(assemble(ch, cand), p, eta_s)
            if best is None or rate_c > best[2]:
                best = (cand, w_c, rate_c)
        cand_theta, w_new, rate_new = best
        if rate_new < rate:
            # Roundoff only: the inner step cannot lower log det at fixed Q and
            # water-filling is optimal for the new channel.
            break
        theta, w = cand_theta, w_new
        prev, rate = rate, rate_new
        trace.append(rate)
        if abs(rate - prev) <= cfg.rel_tolerance * max(abs(prev), np.finfo(float).tiny):
            break
    return _rate_result(channels, theta, p, eta, [t / LN2 for t in trace])


def maximize_rate_two_stage(
    channels: ChannelSet,
    group_size: int,
    p: float,
    eta: float,
    config: OptimizerConfig | None = None,
) -> RateResult:
    """Shape the channel for maximum power, then precode by eigenmode transmission.

    Without a direct link and with a fully-connected surface the power-optimal
    scattering matrix is taken in closed form; otherwise it comes from SAA.
    """
    if group_size == channels.n_s and not channels.has_direct:
        theta = power_extremal_nd(channels.h_b, channels.h_f, maximize=True)
    else:
        theta = maximize_power_saa(channels, group_size, config).theta
    res = _rate_result(channels, theta, p, eta, [])
    res.trace = [res.rate]
    return res
