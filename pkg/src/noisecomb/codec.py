"""Generative compression: per-step atom indices plus stick-breaking codes.

A signal is encoded by running the reverse diffusion against it (observation
= the signal itself): each step selects the m codebook atoms best aligned
with the residual direction, quantizes their combination weights, records
``m`` index fields of log2(K) bits and ``m - 1`` code fields of C bits, and
steps the trajectory forward using the *quantized* weights, so the encoder's
reconstruction and the decoder's replay coincide bit for bit.

Container layout (all big-endian):

* header: magic ``NCSB``, format version u8, rng version u8, seed u64,
  T u16, K u32, m u8, C u8, d u32, n_side u16, beta_min f64, beta_max f64,
  prior_id u32;
* payload: for t = T..2, the index fields then the code fields, bit-packed
  MSB-first, final byte zero-padded. Total payload bits are exactly
  ``(T - 1) * (m * log2(K) + C * (m - 1))``.

The decoder rebuilds prior, schedule, latents, and codebooks from the header
alone; priors travel out-of-band as registry keys, mirroring how the
generative model itself is shared.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .combination import DegenerateDirectionError, top_m_weights
from .diffusion import (
    GaussianMixturePrior,
    Schedule,
    build_schedule,
    ddpm_step,
    score,
)
from .quantizer import (
    StickCode,
    decode_weights,
    fractions_from_scores,
    make_grid,
    payload_bits,
    bpp,
    quantize_dp,
    quantize_greedy_exponential,
    quantize_nn,
    quantize_stagewise,
)
from .rng import RNG_VERSION, Domain, StreamKey, build_codebook, derive_stream

__all__ = [
    "FORMAT_VERSION",
    "FormatError",
    "PriorRegistryError",
    "CodecHeader",
    "Bitstream",
    "CompressResult",
    "register_prior",
    "build_registered_prior",
    "registered_prior_ids",
    "compress",
    "decompress",
    "report_bpp",
]

FORMAT_VERSION = 1

_MAGIC = b"NCSB"
_HEADER_STRUCT = struct.Struct(">4sBBQHIBBIHddI")


class FormatError(ValueError):
    """The byte stream is not a valid container of a supported version."""


class PriorRegistryError(KeyError):
    """The header references a prior id that is not registered."""


@dataclass(frozen=True)
class CodecHeader:
    seed: int
    T: int
    K: int
    m: int
    C: int
    d: int
    n_side: int
    beta_min: float
    beta_max: float
    prior_id: int
    version: int = FORMAT_VERSION
    rng_version: int = RNG_VERSION

    def __post_init__(self) -> None:
        if self.K < 1 or (self.K & (self.K - 1)) != 0:
            raise ValueError(f"K must be a power of two, got {self.K}")
        if not 1 <= self.m <= min(self.K, 255):
            raise ValueError(f"m must be in [1, min(K, 255)], got {self.m}")
        if not 0 <= self.C <= 255:
            raise ValueError(f"C must fit in a byte, got {self.C}")
        if not 1 <= self.T <= 65535:
            raise ValueError(f"T must fit in [1, 65535], got {self.T}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.n_side < 1:
            raise ValueError("n_side must be >= 1")

    @property
    def index_bits(self) -> int:
        return self.K.bit_length() - 1

    @property
    def payload_bits(self) -> int:
        return payload_bits(self.T, self.K, self.m, self.C)

    def pack(self) -> bytes:
        return _HEADER_STRUCT.pack(
            _MAGIC,
            self.version,
            self.rng_version,
            self.seed,
            self.T,
            self.K,
            self.m,
            self.C,
            self.d,
            self.n_side,
            self.beta_min,
            self.beta_max,
            self.prior_id,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "CodecHeader":
        if len(data) < _HEADER_STRUCT.size:
            raise FormatError(f"header needs {_HEADER_STRUCT.size} bytes, got {len(data)}")
        magic, version, rng_version, seed, T, K, m, C, d, n_side, bmin, bmax, prior_id = (
            _HEADER_STRUCT.unpack_from(data)
        )
        if magic != _MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if rng_version != RNG_VERSION:
            raise FormatError(f"unsupported rng version {rng_version}")
        try:
            return cls(
                seed=seed,
                T=T,
                K=K,
                m=m,
                C=C,
                d=d,
                n_side=n_side,
                beta_min=bmin,
                beta_max=bmax,
                prior_id=prior_id,
            )
        except ValueError as exc:
            raise FormatError(str(exc)) from exc


class _BitWriter:
    """MSB-first bit packer; the final byte is zero-padded."""

    def __init__(self) -> None:
        self._acc = 0
        self._nbits = 0
        self._out = bytearray()

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        if not 0 <= value < (1 << width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._acc = (self._acc << width) | value
        self._nbits += width
        while self._nbits >= 8:
            self._nbits -= 8
            self._out.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    def getvalue(self) -> bytes:
        out = bytes(self._out)
        if self._nbits:
            out += bytes([(self._acc << (8 - self._nbits)) & 0xFF])
        return out


class _BitReader:
    """MSB-first bit unpacker over a fixed byte buffer."""

    def __init__(self, data: bytes, nbits: int):
        if len(data) * 8 < nbits:
            raise FormatError(f"payload holds {len(data) * 8} bits, need {nbits}")
        self._value = int.from_bytes(data, "big")
        self._total = len(data) * 8
        self._nbits = nbits
        self._pos = 0

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        if self._pos + width > self._nbits:
            raise FormatError("read past end of payload")
        shift = self._total - self._pos - width
        self._pos += width
        return (self._value >> shift) & ((1 << width) - 1)


@dataclass(frozen=True)
class Bitstream:
    header: CodecHeader
    payload: bytes

    def __post_init__(self) -> None:
        expected = -(-self.header.payload_bits // 8)
        if len(self.payload) != expected:
            raise FormatError(
                f"payload must be {expected} bytes for these parameters, got {len(self.payload)}"
            )

    @property
    def payload_bit_length(self) -> int:
        return self.header.payload_bits

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        header = CodecHeader.unpack(data)
        payload = data[_HEADER_STRUCT.size :]
        expected = -(-header.payload_bits // 8)
        if len(payload) != expected:
            raise FormatError(f"expected {expected} payload bytes, got {len(payload)}")
        return cls(header=header, payload=payload)


@dataclass(frozen=True)
class CompressResult:
    stream: Bitstream
    reconstruction: np.ndarray
    degenerate_steps: int


# --------------------------------------------------------------------------
# prior registry: decodable priors are shared out-of-band, addressed by id
# --------------------------------------------------------------------------

PriorBuilder = Callable[[int], GaussianMixturePrior]

_PRIOR_REGISTRY: dict[int, PriorBuilder] = {}


def register_prior(prior_id: int, builder: PriorBuilder) -> None:
    if not 0 <= prior_id < 2**32:
        raise ValueError("prior_id must fit in u32")
    _PRIOR_REGISTRY[prior_id] = builder


def registered_prior_ids() -> tuple:
    return tuple(sorted(_PRIOR_REGISTRY))


def build_registered_prior(prior_id: int, d: int) -> GaussianMixturePrior:
    try:
        builder = _PRIOR_REGISTRY[prior_id]
    except KeyError:
        raise PriorRegistryError(f"prior id {prior_id} is not registered") from None
    return builder(d)


def _standard_normal_prior(d: int) -> GaussianMixturePrior:
    return GaussianMixturePrior.single(np.zeros(d), np.ones(d))


def _bimodal_prior(d: int) -> GaussianMixturePrior:
    means = np.vstack([np.full(d, 0.8), np.full(d, -0.8)])
    return GaussianMixturePrior(
        weights=np.array([0.5, 0.5]), means=means, variances=np.full((2, d), 0.25)
    )


def _anisotropic_prior(d: int) -> GaussianMixturePrior:
    v = np.linspace(0.25, 1.5, d) if d > 1 else np.array([1.0])
    return GaussianMixturePrior.single(np.zeros(d), v)


def _seeded_mixture_prior(d: int) -> GaussianMixturePrior:
    k = 8
    means = np.empty((k, d))
    for j in range(k):
        stream = derive_stream(StreamKey(4, Domain.PRIOR_SAMPLE, 0, j))
        means[j] = 0.9 * stream.standard_normal(d)
    return GaussianMixturePrior(
        weights=np.full(k, 1.0 / k), means=means, variances=np.full((k, d), 0.15)
    )


register_prior(1, _standard_normal_prior)
register_prior(2, _bimodal_prior)
register_prior(3, _anisotropic_prior)
register_prior(4, _seeded_mixture_prior)


# --------------------------------------------------------------------------
# encode / decode
# --------------------------------------------------------------------------

_QUANTIZERS = {
    "dp": lambda b, grid: quantize_dp(b, grid)[0],
    "stagewise": quantize_stagewise,
    "nn": lambda b, grid: quantize_nn(fractions_from_scores(b), grid),
    "greedy": lambda b, grid: quantize_greedy_exponential(b, grid)[0],
}


def _synthesize(atoms: np.ndarray, indices, weights) -> np.ndarray:
    """Weighted atom sum in stored order; shared by encoder and decoder."""
    out = np.zeros(atoms.shape[0])
    for idx, w in zip(indices, weights):
        out += w * atoms[:, idx]
    return out


def _fallback_record(header: CodecHeader, grid) -> tuple:
    """Deterministic record for a degenerate direction.

    With stored codes this is the first atom at weight one; in the implicit
    equal-split regime (C = 0) it is the equal combination of the first m
    atoms.
    """
    indices = list(range(header.m))
    if header.m == 1:
        code = StickCode(m=1, codes=())
    elif header.C == 0:
        code = StickCode(m=header.m, codes=(0,) * (header.m - 1))
    else:
        one_hot = np.zeros(header.m - 1)
        one_hot[0] = 1.0
        code = quantize_nn(one_hot, grid)
    return indices, code


def compress(
    x0: np.ndarray,
    prior: GaussianMixturePrior,
    schedule: Schedule,
    *,
    seed: int,
    K: int,
    m: int,
    C: int,
    n_side: int,
    prior_id: int,
    quantizer: str = "dp",
) -> CompressResult:
    """Encode ``x0`` and return the stream plus the encoder-side reconstruction."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (prior.d,):
        raise ValueError(f"signal shape {x0.shape} != prior dimension ({prior.d},)")
    if quantizer not in _QUANTIZERS:
        raise ValueError(f"unknown quantizer {quantizer!r}; choose from {sorted(_QUANTIZERS)}")
    header = CodecHeader(
        seed=seed,
        T=schedule.T,
        K=K,
        m=m,
        C=C,
        d=prior.d,
        n_side=n_side,
        beta_min=float(schedule.beta[0]),
        beta_max=float(schedule.beta[-1]),
        prior_id=prior_id,
    )
    rebuilt = build_schedule(header.T, header.beta_min, header.beta_max)
    if not np.array_equal(rebuilt.beta, schedule.beta):
        raise ValueError(
            "schedule is not reproducible from (T, beta_min, beta_max); "
            "the decoder could not rebuild it from the header"
        )
    quantize = _QUANTIZERS[quantizer]
    grid = make_grid(C)
    writer = _BitWriter()
    d = prior.d
    x = derive_stream(StreamKey(seed, Domain.INIT_LATENT, schedule.T, 0)).standard_normal(d)
    degenerate = 0
    for t in range(schedule.T, 1, -1):
        s = score(prior, schedule, x, t)
        ab = schedule.alpha_bar_at(t)
        x0_hat = (x + (1.0 - ab) * s) / np.sqrt(ab)
        c = x0 - x0_hat
        codebook = build_codebook(seed, t, K, d)
        try:
            selection = top_m_weights(c, codebook, m)
            indices = selection.indices.tolist()
            # quantizers are scale-invariant in b, so the normalized clamped
            # weights stand in for the restricted inner products
            code = quantize(selection.weights, grid) if m > 1 else StickCode(m=1, codes=())
        except DegenerateDirectionError:
            degenerate += 1
            indices, code = _fallback_record(header, grid)
        for idx in indices:
            writer.write(idx, header.index_bits)
        for value in code.codes:
            writer.write(value, C)
        weights = decode_weights(code, grid)
        eps = _synthesize(codebook.atoms, indices, weights)
        x = ddpm_step(schedule, x, t, eps, s)
    s = score(prior, schedule, x, 1)
    x = ddpm_step(schedule, x, 1, np.zeros(d), s)
    stream = Bitstream(header=header, payload=writer.getvalue())
    return CompressResult(stream=stream, reconstruction=x, degenerate_steps=degenerate)


def decompress(stream: Bitstream, registry_lookup=build_registered_prior) -> np.ndarray:
    """Replay the encoder's synthesis path; bit-identical to its reconstruction."""
    header = stream.header
    prior = registry_lookup(header.prior_id, header.d)
    if prior.d != header.d:
        raise PriorRegistryError(
            f"registered prior has dimension {prior.d}, header says {header.d}"
        )
    schedule = build_schedule(header.T, header.beta_min, header.beta_max)
    grid = make_grid(header.C)
    reader = _BitReader(stream.payload, header.payload_bits)
    d = header.d
    x = derive_stream(StreamKey(header.seed, Domain.INIT_LATENT, header.T, 0)).standard_normal(d)
    for t in range(header.T, 1, -1):
        indices = [reader.read(header.index_bits) for _ in range(header.m)]
        codes = tuple(reader.read(header.C) for _ in range(header.m - 1))
        weights = decode_weights(StickCode(m=header.m, codes=codes), grid)
        codebook = build_codebook(header.seed, t, header.K, d)
        eps = _synthesize(codebook.atoms, indices, weights)
        s = score(prior, schedule, x, t)
        x = ddpm_step(schedule, x, t, eps, s)
    s = score(prior, schedule, x, 1)
    return ddpm_step(schedule, x, 1, np.zeros(d), s)


def report_bpp(stream: Bitstream) -> float:
    """Bits per pixel implied by the header; equals payload bits / n_side^2."""
    h = stream.header
    return bpp(h.T, h.K, h.m, h.C, h.n_side)
