"""Geodesic Riemannian conjugate gradient over products of unitary groups.

A beyond-diagonal RIS with ``G`` groups of ``L`` elements is parameterised by a
block-diagonal scattering matrix whose diagonal blocks are ``L x L`` unitaries.
:func:`optimize` maximises a real objective of those blocks by moving each block
along geodesics ``exp(mu * D) @ theta_g``, so every iterate stays feasible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np

from .errors import NonFiniteObjectiveError, PreconditionError, ShapeError
from .numerics import expm_skew, nearest_unitary, random_unitary, skew_exponential

UNITARY_TOL = 1e-8

Schedule = Literal["sequential", "parallel"]
Symmetry = Literal["none", "project-symmetric"]


class BlockUnitary:
    """Block-diagonal unitary scattering matrix stored as a ``(G, L, L)`` stack."""

    __slots__ = ("_blocks",)

    def __init__(self, blocks, *, check: bool = True):
        arr = np.array(blocks, dtype=complex, copy=True)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] < 1:
            raise ShapeError(f"blocks must have shape (G, L, L), got {arr.shape}")
        if check:
            eye = np.eye(arr.shape[1])
            for g, blk in enumerate(arr):
                if np.linalg.norm(blk.conj().T @ blk - eye) > UNITARY_TOL:
                    raise PreconditionError(f"block {g} is not unitary")
        arr.setflags(write=False)
        self._blocks = arr

    # -- constructors -------------------------------------------------------
    @classmethod
    def identity(cls, n_s: int, group_size: int) -> "BlockUnitary":
        _check_grouping(n_s, group_size)
        g = n_s // group_size
        return cls(np.broadcast_to(np.eye(group_size), (g, group_size, group_size)), check=False)

    @classmethod
    def random(cls, n_s: int, group_size: int, rng: np.random.Generator) -> "BlockUnitary":
        """Independent Haar-random blocks."""
        _check_grouping(n_s, group_size)
        g = n_s // group_size
        return cls(np.stack([random_unitary(group_size, rng) for _ in range(g)]), check=False)

    @classmethod
    def from_matrix(cls, theta: np.ndarray, group_size: int, *, strict: bool = True) -> "BlockUnitary":
        """Read the diagonal blocks of a full ``N_S x N_S`` matrix.

        With ``strict=True`` any energy outside the diagonal blocks is an error.
        """
        theta = np.asarray(theta, dtype=complex)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ShapeError("theta must be square")
        n_s = theta.shape[0]
        _check_grouping(n_s, group_size)
        g = n_s // group_size
        blocks = np.stack(
            [theta[k * group_size:(k + 1) * group_size, k * group_size:(k + 1) * group_size] for k in range(g)]
        )
        if strict:
            rebuilt = _block_diag(blocks)
            if np.linalg.norm(theta - rebuilt) > 1e-10 * max(1.0, np.linalg.norm(theta)):
                raise PreconditionError("theta is not block-diagonal for this group size")
        return cls(blocks)

    # -- accessors ----------------------------------------------------------
    @property
    def blocks(self) -> np.ndarray:
        return self._blocks

    @property
    def group_size(self) -> int:
        return self._blocks.shape[1]

    @property
    def n_groups(self) -> int:
        return self._blocks.shape[0]

    @property
    def dim(self) -> int:
        return self.n_groups * self.group_size

    def __getitem__(self, g: int) -> np.ndarray:
        return self._blocks[g]

    def __len__(self) -> int:
        return self.n_groups

    def __repr__(self) -> str:
        return f"BlockUnitary(n_s={self.dim}, group_size={self.group_size})"

    def to_matrix(self) -> np.ndarray:
        return _block_diag(self._blocks)

    def replace(self, g: int, block: np.ndarray) -> "BlockUnitary":
        """Copy with block ``g`` swapped for ``block``."""
        new = np.array(self._blocks)
        new[g] = block
        return BlockUnitary(new, check=False)

    def regroup(self, group_size: int) -> "BlockUnitary":
        """Embed into a coarser grouping (``group_size`` a multiple of the current one).

        The result represents the same scattering matrix, which makes it a valid
        warm start when sweeping from diagonal towards fully-connected designs.
        """
        if group_size % self.group_size != 0:
            raise PreconditionError("new group size must be a multiple of the current one")
        return BlockUnitary.from_matrix(self.to_matrix(), group_size, strict=False)

    def unitarity_error(self) -> float:
        eye = np.eye(self.group_size)
        return max(float(np.linalg.norm(b.conj().T @ b - eye)) for b in self._blocks)

    def is_symmetric(self, tol: float = 1e-8) -> bool:
        return all(np.linalg.norm(b - b.T) <= tol for b in self._blocks)


def _check_grouping(n_s: int, group_size: int) -> None:
    if n_s < 1 or group_size < 1 or n_s % group_size:
        raise ShapeError(f"group size {group_size} must divide N_S = {n_s}")


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    g, l, _ = blocks.shape
    out = np.zeros((g * l, g * l), dtype=complex)
    for k in range(g):
        out[k * l:(k + 1) * l, k * l:(k + 1) * l] = blocks[k]
    return out


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`optimize`.

    ``max_linesearch_steps`` caps the halving phase; doublings are capped
    separately by ``max_doublings``.
    """

    rel_tolerance: float = 1e-8
    max_outer_iters: int = 2000
    armijo_initial_step: float = 0.1
    max_linesearch_steps: int = 40
    max_doublings: int = 30
    schedule: Schedule = "sequential"
    symmetry: Symmetry = "none"

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise PreconditionError("rel_tolerance must be positive")
        if not self.armijo_initial_step > 0:
            raise PreconditionError("armijo_initial_step must be positive")
        if self.schedule not in ("sequential", "parallel"):
            raise PreconditionError(f"unknown schedule {self.schedule!r}")
        if self.symmetry not in ("none", "project-symmetric"):
            raise PreconditionError(f"unknown symmetry option {self.symmetry!r}")
        if self.max_outer_iters < 1:
            raise PreconditionError("max_outer_iters must be at least 1")


@dataclass
class ObjectiveAdapter:
    """A real objective of the scattering blocks plus its per-block Wirtinger gradient.

    ``euclid_grad(theta, g)`` must return ``df / d conj(theta_g)``.
    ``all_grads``, when given, returns the whole ``(G, L, L)`` stack in one call
    and is used by the parallel schedule.
    """

    eval: Callable[[BlockUnitary], float]
    euclid_grad: Callable[[BlockUnitary, int], np.ndarray]
    all_grads: Callable[[BlockUnitary], np.ndarray] | None = None
    name: str = "objective"

    def grads(self, theta: BlockUnitary) -> np.ndarray:
        if self.all_grads is not None:
            return np.asarray(self.all_grads(theta))
        return np.stack([self.euclid_grad(theta, g) for g in range(theta.n_groups)])


class IterRecord(NamedTuple):
    iter: int
    objective: float
    step_size: float
    grad_norm: float


@dataclass
class OptimizeResult:
    theta: BlockUnitary
    trace: list[float]
    history: list[IterRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def value(self) -> float:
        return self.trace[-1]

    def __iter__(self):
        # Allows ``theta, trace = optimize(...)``.
        yield self.theta
        yield self.trace


def riemannian_grad_at_identity(euclid_grad: np.ndarray, theta_g: np.ndarray) -> np.ndarray:
    """Riemannian gradient ``E theta^H - theta E^H`` translated to the Lie algebra.

    ``E`` is the Euclidean gradient, i.e. twice the Wirtinger derivative
    ``df / d conj(theta)`` that objective adapters return. The result is
    skew-Hermitian by construction.
    """
    e = np.asarray(euclid_grad, dtype=complex)
    t = np.asarray(theta_g, dtype=complex)
    a = e @ t.conj().T
    return a - a.conj().T


def polak_ribiere(grad_now: np.ndarray, grad_prev: np.ndarray) -> float:
    """Polak-Ribiere coefficient; zero when the previous gradient vanishes."""
    den = np.vdot(grad_prev, grad_prev).real
    if den == 0.0:
        return 0.0
    num = np.vdot(grad_now, grad_now - grad_prev).real
    return float(num / den)


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    """Re tr(a^H b)."""
    return float(np.vdot(a, b).real)


def _checked(value, iteration: int) -> float:
    v = float(value)
    if not np.isfinite(v):
        raise NonFiniteObjectiveError(f"objective is not finite ({v}) at iteration {iteration}", iteration)
    return v


class _Conjugator:
    """Per-group Polak-Ribiere memory with periodic and safeguard resets."""

    def __init__(self, n_groups: int, period: int):
        self.prev_grad: list[np.ndarray | None] = [None] * n_groups
        self.prev_dir: list[np.ndarray | None] = [None] * n_groups
        self.period = period

    def direction(self, g: int, grad: np.ndarray, iteration: int) -> np.ndarray:
        pg, pd = self.prev_grad[g], self.prev_dir[g]
        if pg is None or pd is None or iteration % self.period == 0:
            d = grad
        else:
            gamma = polak_ribiere(grad, pg)
            d = grad if gamma < 0 else grad + gamma * pd
            # The step test predicts a slope of ||D||^2 / 2 while the true slope is
            # Re<D, G> / 2; directions where these disagree by more than half can
            # never pass it, so fall back to the gradient there as well.
            if _inner(d, grad) < 0.5 * _inner(d, d):
                d = grad
        self.prev_grad[g] = grad
        self.prev_dir[g] = d
        return d

    def reset(self, g: int) -> None:
        self.prev_dir[g] = None

    def restart(self, g: int, grad: np.ndarray) -> None:
        self.prev_dir[g] = grad


def _armijo(f_at, f0: float, d_sq: float, mu0: float, max_doublings: int, max_halvings: int, expm):
    """Doubling-then-halving step search along a geodesic.

    ``f_at(rotation)`` evaluates the objective after applying ``expm(mu)``.
    The step doubles while ``f(2 mu) - f0 >= mu ||D||^2 / 2`` and then halves
    until ``f(mu) - f0 >= (mu / 2) ||D||^2 / 2``. Returns
    ``(mu, rotation, value)``; ``rotation is None`` means no acceptable step.
    """
    mu = mu0
    p = expm(mu)
    fp = None
    for _ in range(max_doublings):
        q = expm(2.0 * mu)
        fq = f_at(q)
        if fq - f0 >= mu * d_sq / 2.0:
            mu *= 2.0
            p, fp = q, fq
        else:
            break
    for _ in range(max_halvings + 1):
        if fp is None:
            fp = f_at(p)
        if fp - f0 >= 0.5 * mu * d_sq / 2.0:
            return mu, p, fp
        mu *= 0.5
        p, fp = expm(mu), None
    return 0.0, None, f0


def _symmetrize(theta: BlockUnitary) -> BlockUnitary:
    blocks = np.stack([_symmetric_projection(b) for b in theta.blocks])
    return BlockUnitary(blocks, check=False)


def _symmetric_projection(block: np.ndarray) -> np.ndarray:
    s = 0.5 * (block + block.T)
    try:
        u = nearest_unitary(s)
    except Exception:
        # (B + B^T)/2 can be singular (e.g. B antisymmetric); keep the block.
        return block
    # The polar factor of a symmetric matrix is symmetric; remove roundoff.
    return 0.5 * (u + u.T) if np.linalg.norm(u - u.T) < 1e-9 else u


def optimize(
    objective: ObjectiveAdapter,
    theta0: BlockUnitary,
    config: OptimizerConfig | None = None,
    *,
    trace_csv: str | None = None,
) -> OptimizeResult:
    """Maximise ``objective`` over block-unitary matrices with geodesic RCG.

    Parameters
    ----------
    objective
        Value and per-block Wirtinger gradient.
    theta0
        Feasible starting point.
    config
        Tolerances, line-search caps, group schedule and optional symmetric
        projection. Defaults to :class:`OptimizerConfig()`.
    trace_csv
        If given, the iteration history is written there as CSV.

    Returns
    -------
    OptimizeResult
        Final point, objective trace (starting value first) and per-iteration
        history. Unpacks as ``theta, trace``.
    """
    cfg = config or OptimizerConfig()
    theta = theta0
    f = _checked(objective.eval(theta), 0)
    trace = [f]
    history = [IterRecord(0, f, 0.0, 0.0)]
    period = 2 * theta.group_size ** 2
    conj = _Conjugator(theta.n_groups, period)
    converged = False

    for it in range(1, cfg.max_outer_iters + 1):
        f_prev = f
        if cfg.schedule == "sequential":
            theta, f, mu_rec, gnorm = _sequential_sweep(objective, theta, f, conj, cfg, it)
        else:
            theta, f, mu_rec, gnorm = _parallel_sweep(objective, theta, f, conj, cfg, it)
        if cfg.symmetry == "project-symmetric":
            theta = _symmetrize(theta)
            f = _checked(objective.eval(theta), it)
        trace.append(f)
        history.append(IterRecord(it, f, mu_rec, gnorm))
        scale = abs(f_prev) if f_prev != 0.0 else 1.0
        if abs(f - f_prev) / scale <= cfg.rel_tolerance:
            converged = True
            break

    result = OptimizeResult(theta=theta, trace=trace, history=history, converged=converged)
    if trace_csv is not None:
        write_trace_csv(result.history, trace_csv)
    return result


def _sequential_sweep(objective, theta, f, conj, cfg, it):
    step_max = 0.0
    gsq = 0.0
    for g in range(theta.n_groups):
        tg = theta[g]
        rg = riemannian_grad_at_identity(2.0 * objective.euclid_grad(theta, g), tg)
        gsq += _inner(rg, rg)
        d = conj.direction(g, rg, it)
        if _inner(d, d) == 0.0:
            continue

        def f_at(rot, g=g, tg=tg):
            return _checked(objective.eval(theta.replace(g, rot @ tg)), it)

        def search(d):
            return _armijo(
                f_at, f, _inner(d, d), cfg.armijo_initial_step, cfg.max_doublings,
                cfg.max_linesearch_steps, skew_exponential(d),
            )

        mu, rot, fnew = search(d)
        if rot is None and d is not rg:
            # The conjugate direction failed the step test; restart from the gradient.
            conj.restart(g, rg)
            mu, rot, fnew = search(rg)
        if rot is None:
            conj.reset(g)
            continue
        theta = theta.replace(g, rot @ tg)
        f = fnew
        step_max = max(step_max, mu)
    return theta, f, step_max, float(np.sqrt(gsq))


def _parallel_sweep(objective, theta, f, conj, cfg, it):
    grads = objective.grads(theta)
    dirs, rgs = [], []
    gsq = 0.0
    for g in range(theta.n_groups):
        rg = riemannian_grad_at_identity(2.0 * grads[g], theta[g])
        gsq += _inner(rg, rg)
        rgs.append(rg)
        dirs.append(conj.direction(g, rg, it))
    rgs = np.stack(rgs)
    dirs = np.stack(dirs)
    if not np.any(dirs):
        return theta, f, 0.0, float(np.sqrt(gsq))
    base = theta.blocks

    def f_at(rots):
        return _checked(objective.eval(BlockUnitary(np.einsum("gij,gjk->gik", rots, base), check=False)), it)

    def search(ds):
        exps = [skew_exponential(d) for d in ds]
        return _armijo(
            f_at, f, float(np.sum(np.abs(ds) ** 2)), cfg.armijo_initial_step, cfg.max_doublings,
            cfg.max_linesearch_steps, lambda m: np.stack([e(m) for e in exps]),
        )

    mu, rots, fnew = search(dirs)
    if rots is None and not np.array_equal(dirs, rgs):
        for g in range(theta.n_groups):
            conj.restart(g, rgs[g])
        mu, rots, fnew = search(rgs)
    if rots is None:
        for g in range(theta.n_groups):
            conj.reset(g)
        return theta, f, 0.0, float(np.sqrt(gsq))
    theta = BlockUnitary(np.einsum("gij,gjk->gik", rots, base), check=False)
    return theta, fnew, mu, float(np.sqrt(gsq))


def write_trace_csv(history: Sequence[IterRecord], path) -> None:
    """Dump the iteration history with columns iter, objective, step_size, grad_norm."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IterRecord._fields)
        for rec in history:
            w.writerow([rec.iter, repr(rec.objective), repr(rec.step_size), repr(rec.grad_norm)])


def random_skew(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random skew-Hermitian matrix with unit Frobenius norm."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    a = a - a.conj().T
    return a / np.linalg.norm(a)


def check_directional_derivatives(
    objective: ObjectiveAdapter,
    theta: BlockUnitary,
    rng: np.random.Generator,
    n_directions: int = 20,
    h: float = 1e-6,
) -> float:
    """Worst relative mismatch between analytic and central-difference directional derivatives.

    Each trial perturbs one randomly chosen block along a random skew direction
    ``D`` and compares ``2 Re tr(grad^H D theta_g)`` with
    ``(f(exp(hD) theta_g) - f(exp(-hD) theta_g)) / (2h)``. Each mismatch is taken
    relative to its own analytic value; directions whose derivative is below
    ``1e-6`` of the largest one are compared against that floor instead.
    """
    analytic, numeric = [], []
    for _ in range(n_directions):
        g = int(rng.integers(theta.n_groups))
        d = random_skew(theta.group_size, rng)
        tg = theta[g]
        grad = objective.euclid_grad(theta, g)
        analytic.append(2.0 * _inner(grad, d @ tg))
        fp = objective.eval(theta.replace(g, expm_skew(d, h) @ tg))
        fm = objective.eval(theta.replace(g, expm_skew(d, -h) @ tg))
        numeric.append((fp - fm) / (2.0 * h))
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    scale = max(np.max(np.abs(analytic)), np.finfo(float).tiny)
    denom = np.maximum(np.abs(analytic), 1e-6 * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))
