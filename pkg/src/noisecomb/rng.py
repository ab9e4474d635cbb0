"""Deterministic, key-addressable random streams and noise codebooks.

Every stream is identified by a :class:`StreamKey` (seed, domain, timestep,
sub-stream index) and is backed by a counter-based Philox-4x64-10 generator,
so equal keys reproduce equal byte sequences on any platform and atoms of a
codebook can be generated independently, in any order, with identical results.

Version tag ``RNG_VERSION = 1`` pins the exact recipe:

* key words: ``(seed, domain << 48 | t << 32 | i)`` as two uint64,
* raw stream: the native Philox-4x64-10 output sequence,
* bytes: raw uint64 words serialized big-endian,
* standard normals: one raw word per normal, mapped through the inverse
  normal CDF as ``ndtri(((raw >> 12) + 0.5) * 2**-52)``.

A port that reproduces the Philox raw stream and evaluates the inverse CDF
in double precision reproduces codebooks bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

__all__ = [
    "RNG_VERSION",
    "Domain",
    "StreamKey",
    "NoiseStream",
    "NoiseCodebook",
    "derive_stream",
    "sample_standard_normal",
    "build_codebook",
]

RNG_VERSION = 1

_PHILOX_BLOCK = 4  # raw uint64 outputs per counter increment


class Domain(IntEnum):
    """Independent usage domains carved out of one master seed."""

    CODEBOOK = 0
    INIT_LATENT = 1
    FRESH_NOISE = 2
    PRIOR_SAMPLE = 3
    OBSERVATION_NOISE = 4


@dataclass(frozen=True)
class StreamKey:
    """Addresses one independent random stream.

    Distinct keys give statistically independent streams; equal keys give
    identical streams. ``t`` must fit in 16 bits and ``i`` in 32 bits so the
    key packs into one uint64 word alongside the domain.
    """

    seed: int
    domain: Domain
    t: int = 0
    i: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= self.t < 2**16:
            raise ValueError(f"timestep index out of range [0, 65535]: {self.t}")
        if not 0 <= self.i < 2**32:
            raise ValueError(f"sub-stream index out of range [0, 2^32): {self.i}")

    def words(self) -> np.ndarray:
        """The two uint64 Philox key words for this stream."""
        packed = (int(self.domain) << 48) | (self.t << 32) | self.i
        return np.array([self.seed, packed], dtype=np.uint64)


class NoiseStream:
    """A value-like handle on one keyed random stream.

    The handle tracks its position in the underlying raw-word sequence, so it
    can be cloned mid-stream or reopened at an arbitrary offset.
    """

    def __init__(self, key: StreamKey, position: int = 0):
        self.key = key
        self._bitgen = Philox(key=key.words())
        self._position = 0
        if position:
            self.seek(position)

    @property
    def position(self) -> int:
        """Number of raw 64-bit words consumed so far."""
        return self._position

    def seek(self, position: int) -> None:
        """Reposition the stream at ``position`` raw words from the start."""
        if position < 0:
            raise ValueError("position must be nonnegative")
        bitgen = Philox(key=self.key.words())
        block, within = divmod(position, _PHILOX_BLOCK)
        if block:
            state = bitgen.state
            state["state"]["counter"] = np.array([block, 0, 0, 0], dtype=np.uint64)
            bitgen.state = state
        if within:
            bitgen.random_raw(within)
        self._bitgen = bitgen
        self._position = position

    def clone(self) -> "NoiseStream":
        return NoiseStream(self.key, self._position)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 words."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        out = self._bitgen.random_raw(n)
        self._position += n
        return np.atleast_1d(np.asarray(out, dtype=np.uint64))

    def take_bytes(self, n: int) -> bytes:
        """Next ``n`` bytes (big-endian serialization of whole raw words)."""
        words = self.raw(-(-n // 8))
        return words.astype(">u8").tobytes()[:n]

    def standard_normal(self, d: int) -> np.ndarray:
        """Draw ``d`` i.i.d. standard normals; one raw word per normal."""
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")
        raws = self.raw(d)
        u = ((raws >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52
        return ndtri(u)


@dataclass(frozen=True)
class NoiseCodebook:
    """K standard-normal atoms for one timestep, stacked as columns.

    ``atoms[:, i]`` is exactly the stream output for key
    ``StreamKey(seed, CODEBOOK, t, i)``, so a codebook is a pure function of
    ``(seed, t, K, d)`` and regenerates bit-identically anywhere.
    """

    t: int
    K: int
    d: int
    atoms: np.ndarray  # shape (d, K)
    seed: int

    def key_for_atom(self, i: int) -> StreamKey:
        return StreamKey(self.seed, Domain.CODEBOOK, self.t, i)


def derive_stream(key: StreamKey) -> NoiseStream:
    """Open the stream addressed by ``key`` at position 0."""
    return NoiseStream(key)


def sample_standard_normal(stream: NoiseStream, d: int) -> np.ndarray:
    """Functional form of :meth:`NoiseStream.standard_normal`."""
    return stream.standard_normal(d)


def build_codebook(seed: int, t: int, K: int, d: int) -> NoiseCodebook:
    """Generate the timestep-``t`` codebook of ``K`` atoms in dimension ``d``.

    Atoms come from per-atom sub-streams (index ``i``), so the result does not
    depend on generation order and regeneration is bit-identical. The inverse
    CDF is applied to all raw words in one vectorized call; element-wise it is
    exactly the per-atom map.
    """
    if K < 1:
        raise ValueError(f"codebook size must be >= 1, got {K}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    raws = np.empty((K, d), dtype=np.uint64)
    for i in range(K):
        raws[i] = derive_stream(StreamKey(seed, Domain.CODEBOOK, t, i)).raw(d)
    u = ((raws >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52
    return NoiseCodebook(t=t, K=K, d=d, atoms=ndtri(u).T, seed=seed)
