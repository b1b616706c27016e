"""Channel models: path loss, Rician fading, assembly through the RIS, and estimation error.

Random streams are derived from a single integer seed with
``numpy.random.SeedSequence(seed, spawn_key=(k,))`` feeding a PCG64 generator,
where ``k = 0, 1, 2`` selects the direct, backward and forward channel. Each
channel therefore has its own stream, and adding a channel never changes the
draws of the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import PreconditionError, ShapeError
from .manifold import BlockUnitary
from .numerics import crandn

STREAM_DIRECT, STREAM_BACKWARD, STREAM_FORWARD = 0, 1, 2
# Estimation-error draws live in their own spawn-key namespace.
_STREAM_ERROR = 100


def stream(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for the sub-stream ``key`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def pathloss(d: float, gamma: float, lambda0_db: float) -> float:
    """Large-scale power gain ``10**(lambda0_db/10) * d**(-gamma)`` (linear)."""
    if not d > 0:
        raise PreconditionError(f"distance must be positive, got {d}")
    return 10.0 ** (lambda0_db / 10.0) * float(d) ** (-gamma)


def db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class Scenario:
    """Geometry, fading and array sizes of one link.

    Defaults reproduce the reference deployment: -30 dB at 1 m, exponents
    3 / 2.4 / 2 and distances 14.7 / 10 / 6.3 m for the direct, forward and
    backward links, Rayleigh fading and -75 dB noise.
    """

    lambda0_db: float = -30.0
    gamma_D: float = 3.0
    gamma_F: float = 2.4
    gamma_B: float = 2.0
    d_D: float = 14.7
    d_F: float = 10.0
    d_B: float = 6.3
    kappa_D: float = 0.0
    kappa_F: float = 0.0
    kappa_B: float = 0.0
    n_t: int = 4
    n_s: int = 16
    n_r: int = 4
    group_size: int = 1
    noise_db: float = -75.0
    seed: int = 0
    direct: bool = True

    def __post_init__(self):
        for name in ("n_t", "n_s", "n_r", "group_size"):
            if int(getattr(self, name)) < 1:
                raise PreconditionError(f"{name} must be at least 1")
        if self.n_s % self.group_size:
            raise PreconditionError("group_size must divide n_s")
        for name in ("d_D", "d_F", "d_B"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        for name in ("kappa_D", "kappa_F", "kappa_B"):
            if not getattr(self, name) >= 0:
                raise PreconditionError(f"{name} must be nonnegative")

    @property
    def n_groups(self) -> int:
        return self.n_s // self.group_size

    @property
    def lambda_D(self) -> float:
        return pathloss(self.d_D, self.gamma_D, self.lambda0_db)

    @property
    def lambda_F(self) -> float:
        return pathloss(self.d_F, self.gamma_F, self.lambda0_db)

    @property
    def lambda_B(self) -> float:
        return pathloss(self.d_B, self.gamma_B, self.lambda0_db)

    @property
    def noise(self) -> float:
        return 10.0 ** (self.noise_db / 10.0)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise PreconditionError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChannelSet:
    """Direct ``h_d`` (N_R x N_T), backward ``h_b`` (N_R x N_S) and forward ``h_f`` (N_S x N_T) channels."""

    h_d: np.ndarray
    h_b: np.ndarray
    h_f: np.ndarray

    def __post_init__(self):
        h_d, h_b, h_f = (np.array(m, dtype=complex) for m in (self.h_d, self.h_b, self.h_f))
        for name, m in (("h_d", h_d), ("h_b", h_b), ("h_f", h_f)):
            if m.ndim != 2 or min(m.shape) < 1:
                raise ShapeError(f"{name} must be a non-empty matrix")
            if not np.all(np.isfinite(m)):
                raise PreconditionError(f"{name} has non-finite entries")
            m.setflags(write=False)
        if h_b.shape[0] != h_d.shape[0] or h_f.shape[1] != h_d.shape[1] or h_b.shape[1] != h_f.shape[0]:
            raise ShapeError(
                f"inconsistent channel shapes h_d{h_d.shape}, h_b{h_b.shape}, h_f{h_f.shape}"
            )
        object.__setattr__(self, "h_d", h_d)
        object.__setattr__(self, "h_b", h_b)
        object.__setattr__(self, "h_f", h_f)

    @classmethod
    def without_direct(cls, h_b, h_f) -> "ChannelSet":
        h_b = np.asarray(h_b, dtype=complex)
        h_f = np.asarray(h_f, dtype=complex)
        return cls(np.zeros((h_b.shape[0], h_f.shape[1]), dtype=complex), h_b, h_f)

    @property
    def n_r(self) -> int:
        return self.h_d.shape[0]

    @property
    def n_t(self) -> int:
        return self.h_d.shape[1]

    @property
    def n_s(self) -> int:
        return self.h_b.shape[1]

    @property
    def has_direct(self) -> bool:
        return bool(np.any(self.h_d != 0))

    def drop_direct(self) -> "ChannelSet":
        return ChannelSet.without_direct(self.h_b, self.h_f)

    def scaled(self, b: float, f: float) -> "ChannelSet":
        """Scale ``h_b`` by ``b``, ``h_f`` by ``f`` and ``h_d`` by ``b * f``."""
        return ChannelSet(self.h_d * (b * f), self.h_b * b, self.h_f * f)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self._mats(), other._mats()))

    __hash__ = None

    def _mats(self):
        return (self.h_d, self.h_b, self.h_f)

    # -- serialization ------------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "format": "bdshape.channelset",
            "version": 1,
            "dims": {"n_r": self.n_r, "n_s": self.n_s, "n_t": self.n_t},
            "h_d": _encode(self.h_d),
            "h_b": _encode(self.h_b),
            "h_f": _encode(self.h_f),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ChannelSet":
        doc = json.loads(text)
        if doc.get("format") != "bdshape.channelset":
            raise PreconditionError("not a serialized ChannelSet")
        dims = doc["dims"]
        out = cls(_decode(doc["h_d"]), _decode(doc["h_b"]), _decode(doc["h_f"]))
        if (out.n_r, out.n_s, out.n_t) != (dims["n_r"], dims["n_s"], dims["n_t"]):
            raise ShapeError("dimension header does not match the stored matrices")
        return out


def _encode(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _decode(rows: list) -> np.ndarray:
    arr = np.array(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ShapeError("matrix must be rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def rician(shape, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-power Rician matrix with an all-ones line-of-sight component."""
    nlos = crandn(shape, rng)
    if math.isinf(kappa):
        return np.ones(shape, dtype=complex)
    return math.sqrt(kappa / (1.0 + kappa)) * np.ones(shape) + math.sqrt(1.0 / (1.0 + kappa)) * nlos


def sample_channels(scenario: Scenario) -> ChannelSet:
    """Draw one channel realisation for ``scenario`` (deterministic in ``scenario.seed``)."""
    s = scenario
    h_b = math.sqrt(s.lambda_B) * rician((s.n_r, s.n_s), s.kappa_B, stream(s.seed, STREAM_BACKWARD))
    h_f = math.sqrt(s.lambda_F) * rician((s.n_s, s.n_t), s.kappa_F, stream(s.seed, STREAM_FORWARD))
    if s.direct:
        h_d = math.sqrt(s.lambda_D) * rician((s.n_r, s.n_t), s.kappa_D, stream(s.seed, STREAM_DIRECT))
    else:
        h_d = np.zeros((s.n_r, s.n_t), dtype=complex)
    return ChannelSet(h_d, h_b, h_f)


def _theta_blocks(theta, n_s: int) -> np.ndarray:
    if isinstance(theta, BlockUnitary):
        blocks = theta.blocks
    else:
        arr = np.asarray(theta, dtype=complex)
        if arr.ndim == 2:
            if arr.shape != (n_s, n_s):
                raise ShapeError(f"theta must be {n_s}x{n_s}, got {arr.shape}")
            return arr[None]
        blocks = arr
    if blocks.shape[0] * blocks.shape[1] != n_s:
        raise ShapeError(f"theta dimension {blocks.shape[0] * blocks.shape[1]} does not match N_S = {n_s}")
    return blocks


def assemble(channels: ChannelSet, theta) -> np.ndarray:
    """Equivalent channel ``H_D + H_B Theta H_F`` evaluated group by group.

    ``theta`` may be a :class:`BlockUnitary`, a ``(G, L, L)`` block stack or a
    full ``N_S x N_S`` matrix.
    """
    blocks = _theta_blocks(theta, channels.n_s)
    g, l, _ = blocks.shape
    hb = channels.h_b.reshape(channels.n_r, g, l)
    hf = channels.h_f.reshape(g, l, channels.n_t)
    return channels.h_d + np.einsum("rgi,gij,gjt->rt", hb, blocks, hf, optimize=True)


def assemble_full(channels: ChannelSet, theta) -> np.ndarray:
    """Same as :func:`assemble` but through the explicit block-diagonal matrix."""
    mat = theta.to_matrix() if isinstance(theta, BlockUnitary) else np.asarray(theta, dtype=complex)
    if mat.shape != (channels.n_s, channels.n_s):
        raise ShapeError("theta does not match N_S")
    return channels.h_d + channels.h_b @ mat @ channels.h_f


def group_slice(channels: ChannelSet, g: int, group_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Columns ``g*L:(g+1)*L`` of ``h_b`` and the same rows of ``h_f`` (``g`` is 0-based)."""
    n_s = channels.n_s
    if group_size < 1 or n_s % group_size:
        raise ShapeError(f"group size {group_size} must divide N_S = {n_s}")
    if not 0 <= g < n_s // group_size:
        raise IndexError(f"group index {g} out of range for {n_s // group_size} groups")
    sl = slice(g * group_size, (g + 1) * group_size)
    return channels.h_b[:, sl], channels.h_f[sl, :]


def perturb(channels: ChannelSet, epsilon: float, lambda_b: float, lambda_f: float, seed: int) -> ChannelSet:
    """Imperfect CSI: add CN(0, epsilon * lambda_b * lambda_f) errors to ``h_b`` and ``h_f``.

    The direct channel is left untouched. Error draws depend only on ``seed`` and
    the matrix shapes, so sweeping ``epsilon`` with a fixed seed scales one common
    error realisation.
    """
    if not epsilon >= 0:
        raise PreconditionError("epsilon must be nonnegative")
    if epsilon == 0:
        return channels
    std = math.sqrt(epsilon * lambda_b * lambda_f)
    e_b = crandn(channels.h_b.shape, stream(seed, _STREAM_ERROR, 0))
    e_f = crandn(channels.h_f.shape, stream(seed, _STREAM_ERROR, 1))
    return ChannelSet(channels.h_d, channels.h_b + std * e_b, channels.h_f + std * e_f)
