"""Reproducible random sources: keyed Brownian increments and jump events.

All randomness is counter-based: a draw is a pure function of a
:class:`NoiseStreamKey`, never of call order or thread count.  Keys are packed
into a 128-bit Philox key; the particle coordinate of a Brownian draw is an
offset into the key's counter space, so a whole per-step block can be drawn
vectorized while any single particle's increment remains addressable (and
bitwise identical) on its own.

Normals come from the inverse CDF applied to 64-bit uniforms.  This costs a
little accuracy in the extreme tails compared to ziggurat sampling but makes
the draw-count per normal fixed, which is what keeps block and per-particle
addressing aligned.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, List

import numpy as np
from scipy.special import ndtri

if TYPE_CHECKING:  # pragma: no cover
    from .model import JumpMeasure


class SamplerError(ValueError):
    pass


class StreamRole(IntEnum):
    BASE_BROWNIAN = 0
    BASE_JUMPS = 1
    HAT_BROWNIAN = 2
    HAT_JUMPS = 3
    INITIAL_CONDITION = 4
    PROBE = 5
    SLICES = 6
    SCRATCH = 7


_ROLE_BITS = 4
_PARTICLE_BITS = 28
_INDEX_BITS = 28
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseStreamKey:
    """Address of one draw: (seed, stream role, particle, step/event index)."""

    seed: int
    role: StreamRole
    particle: int = 0
    index: int = 0

    def __post_init__(self):
        if not 0 <= self.particle < (1 << _PARTICLE_BITS):
            raise SamplerError(f"particle id {self.particle} out of range")
        if not 0 <= self.index < (1 << _INDEX_BITS):
            raise SamplerError(f"step/event index {self.index} out of range")


def philox_key(key: NoiseStreamKey) -> int:
    """Pack a stream key into a 128-bit Philox key (injective by construction)."""
    packed = key.seed & _SEED_MASK
    packed |= (int(key.role) & ((1 << _ROLE_BITS) - 1)) << 64
    packed |= key.particle << (64 + _ROLE_BITS)
    packed |= key.index << (64 + _ROLE_BITS + _PARTICLE_BITS)
    return packed


def key_rng(key: NoiseStreamKey) -> np.random.Generator:
    """Full Generator for a key; draws from it are sequential but key-addressed."""
    return np.random.Generator(np.random.Philox(key=philox_key(key)))


_RAWS_PER_BLOCK = 4  # Philox-4x64: one counter step yields four 64-bit words


def _blocks_per_particle(m: int) -> int:
    return (m + _RAWS_PER_BLOCK - 1) // _RAWS_PER_BLOCK


def _uniform_open(raw: np.ndarray) -> np.ndarray:
    # (raw + 0.5) / 2^64 lies strictly inside (0, 1)
    return (raw.astype(np.float64) + 0.5) * 2.0**-64


def gaussian_increment(key: NoiseStreamKey, dt: float, m: int) -> np.ndarray:
    """m independent N(0, dt) draws for one particle at one step.

    Addressed at (seed, role, particle, step); bitwise equal to the matching
    row of :func:`gaussian_block`.
    """
    if dt <= 0:
        raise SamplerError(f"dt must be positive, got {dt}")
    base = NoiseStreamKey(key.seed, key.role, particle=0, index=key.index)
    bg = np.random.Philox(key=philox_key(base))
    bpp = _blocks_per_particle(m)
    bg.advance(key.particle * bpp)
    raw = bg.random_raw(bpp * _RAWS_PER_BLOCK)[:m]
    return ndtri(_uniform_open(raw)) * np.sqrt(dt)


def gaussian_block(seed: int, role: StreamRole, step: int, n: int, m: int, dt: float) -> np.ndarray:
    """(n, m) block of N(0, dt) increments for one step, row i = particle i."""
    if dt <= 0:
        raise SamplerError(f"dt must be positive, got {dt}")
    base = NoiseStreamKey(seed, role, particle=0, index=step)
    bg = np.random.Philox(key=philox_key(base))
    bpp = _blocks_per_particle(m)
    raw = bg.random_raw(n * bpp * _RAWS_PER_BLOCK).reshape(n, bpp * _RAWS_PER_BLOCK)[:, :m]
    return ndtri(_uniform_open(raw)) * np.sqrt(dt)


@dataclass(frozen=True)
class JumpEvent:
    """One Poisson event: arrival time and its mark."""

    time: float
    mark: float


def sample_jump_events(key: NoiseStreamKey, nu: "JumpMeasure", horizon: float) -> List[JumpEvent]:
    """Events of a homogeneous Poisson process of rate nu(U) on [0, horizon].

    Event count is Poisson(nu(U) * horizon), times are sorted uniforms
    (equivalent to exponential inter-arrivals), marks are i.i.d. from the
    normalized mark law.  Finite activity makes this exact; nothing is tied
    to any integration grid.
    """
    if horizon < 0:
        raise SamplerError(f"horizon must be nonnegative, got {horizon}")
    rate = nu.total_mass
    if rate == 0.0 or horizon == 0.0:
        return []
    rng = key_rng(key)
    count = int(rng.poisson(rate * horizon))
    if count == 0:
        return []
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    # strict ordering: float ties are astronomically rare but cheap to repair
    for i in range(1, count):
        if times[i] <= times[i - 1]:
            times[i] = np.nextafter(times[i - 1], np.inf)
    marks = nu.sample_marks(rng, count)
    return [JumpEvent(time=float(t), mark=marks[i]) for i, t in enumerate(times)]


def noise_dump(seed: int, k: int, m: int = 1, dt: float = 1.0) -> dict:
    """First k draws per stream role, for cross-run comparison.

    Brownian roles report the increments of particle 0 at steps 0..k-1; the
    initial-condition role reports the first k standard normals.
    """
    out: dict = {}
    for role in (StreamRole.BASE_BROWNIAN, StreamRole.HAT_BROWNIAN):
        rows = [gaussian_increment(NoiseStreamKey(seed, role, 0, j), dt, m) for j in range(k)]
        out[role.name.lower()] = np.asarray(rows)
    out["initial_condition"] = gaussian_block(seed, StreamRole.INITIAL_CONDITION, 0, k, m, 1.0)
    for role in (StreamRole.BASE_JUMPS, StreamRole.HAT_JUMPS):
        rng = key_rng(NoiseStreamKey(seed, role, 0, 0))
        out[role.name.lower()] = rng.random(k)
    return out
