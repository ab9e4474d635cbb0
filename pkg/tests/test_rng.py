import numpy as np
import pytest

from noisecomb.rng import (
    Domain,
    NoiseStream,
    StreamKey,
    build_codebook,
    derive_stream,
    sample_standard_normal,
)

# Golden vectors frozen from the first implementation of the v1 recipe
# (Philox-4x64-10 keyed streams, inverse-CDF normals). Any change to the
# generator or the normal map must bump RNG_VERSION.
GOLDEN_KEY = StreamKey(0, Domain.CODEBOOK, 5, 3)
GOLDEN_BYTES_32 = bytes.fromhex(
    "0e30b455cc8849a2f472e2b17cf873f605b28932c6d58059ce469bcd99010283"
)
GOLDEN_RAW_4 = [
    1022515396009806242,
    17614390344533177334,
    410541367221387353,
    14863738927520481923,
]
GOLDEN_NORMALS_4 = [
    -1.5943335753228167,
    1.6941121596218065,
    -2.0092466351510767,
    0.8623949903547883,
]


def test_same_key_same_bytes():
    a = derive_stream(StreamKey(42, Domain.FRESH_NOISE, 7, 1)).take_bytes(1024)
    b = derive_stream(StreamKey(42, Domain.FRESH_NOISE, 7, 1)).take_bytes(1024)
    assert a == b


def test_distinct_substream_index_differs():
    a = derive_stream(StreamKey(42, Domain.CODEBOOK, 7, 1)).take_bytes(64)
    b = derive_stream(StreamKey(42, Domain.CODEBOOK, 7, 2)).take_bytes(64)
    assert a != b


@pytest.mark.parametrize(
    "other",
    [
        StreamKey(1, Domain.CODEBOOK, 5, 3),
        StreamKey(0, Domain.FRESH_NOISE, 5, 3),
        StreamKey(0, Domain.CODEBOOK, 6, 3),
        StreamKey(0, Domain.CODEBOOK, 5, 4),
    ],
)
def test_any_key_field_changes_stream(other):
    base = derive_stream(GOLDEN_KEY).take_bytes(64)
    assert derive_stream(other).take_bytes(64) != base


def test_golden_byte_vector():
    assert derive_stream(GOLDEN_KEY).take_bytes(32) == GOLDEN_BYTES_32


def test_golden_raw_and_normals():
    assert derive_stream(GOLDEN_KEY).raw(4).tolist() == GOLDEN_RAW_4
    got = derive_stream(GOLDEN_KEY).standard_normal(4)
    assert np.array_equal(got, np.array(GOLDEN_NORMALS_4))


def test_normals_match_documented_inverse_cdf_recipe():
    # independent re-derivation of the v1 normal map from the raw words
    from scipy.special import ndtri

    raws = np.array(GOLDEN_RAW_4, dtype=np.uint64)
    u = ((raws >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52
    assert np.array_equal(ndtri(u), np.array(GOLDEN_NORMALS_4))


def test_key_field_validation():
    with pytest.raises(ValueError):
        StreamKey(-1, Domain.CODEBOOK, 0, 0)
    with pytest.raises(ValueError):
        StreamKey(0, Domain.CODEBOOK, 2**16, 0)
    with pytest.raises(ValueError):
        StreamKey(0, Domain.CODEBOOK, 0, 2**32)


def test_stream_is_value_like():
    s = derive_stream(GOLDEN_KEY)
    s.raw(3)
    c = s.clone()
    assert c.position == s.position == 3
    assert np.array_equal(c.raw(5), s.raw(5))
    s.seek(1)
    assert s.raw(3).tolist() == GOLDEN_RAW_4[1:4]


def test_sample_standard_normal_rejects_zero_dim():
    with pytest.raises(ValueError):
        sample_standard_normal(derive_stream(GOLDEN_KEY), 0)


def test_normal_moments_one_million_draws():
    # Monte Carlo bounds: ~5 sigma for the mean, ~7 sigma for the variance
    n, d = 10**6, 4
    stream = derive_stream(StreamKey(123, Domain.FRESH_NOISE, 0, 0))
    z = stream.standard_normal(n * d).reshape(n, d)
    assert np.all(np.abs(z.mean(axis=0)) <= 0.005)
    assert np.all((z.var(axis=0) >= 0.99) & (z.var(axis=0) <= 1.01))


def test_identical_stream_state_identical_vector():
    s = derive_stream(StreamKey(9, Domain.INIT_LATENT, 3, 0))
    s.raw(11)
    assert np.array_equal(s.clone().standard_normal(16), s.clone().standard_normal(16))


def test_codebook_bit_reproducible():
    a = build_codebook(17, 9, 8, 32)
    b = build_codebook(17, 9, 8, 32)
    assert np.array_equal(a.atoms, b.atoms)
    assert a.atoms.shape == (32, 8)


def test_codebook_single_atom_matches_substream():
    cb = build_codebook(5, 2, 1, 24)
    direct = derive_stream(StreamKey(5, Domain.CODEBOOK, 2, 0)).standard_normal(24)
    assert np.array_equal(cb.atoms[:, 0], direct)


def test_codebook_atom_is_its_substream_output():
    cb = build_codebook(11, 4, 6, 40)
    for i in (0, 3, 5):
        direct = derive_stream(StreamKey(11, Domain.CODEBOOK, 4, i)).standard_normal(40)
        assert np.array_equal(cb.atoms[:, i], direct)


def test_codebook_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_codebook(0, 0, 0, 4)
    with pytest.raises(ValueError):
        build_codebook(0, 0, 4, 0)


def test_atom_norms_concentrate():
    d, K = 4096, 64
    cb = build_codebook(3, 1, K, d)
    norms = np.linalg.norm(cb.atoms, axis=0)
    root_d = np.sqrt(d)
    assert np.all(norms > 0.93 * root_d)
    assert np.all(norms < 1.07 * root_d)


def test_atom_cross_correlation_near_zero():
    d = 2048
    cb = build_codebook(8, 2, 6, d)
    for i in range(5):
        for j in range(i + 1, 6):
            r = np.corrcoef(cb.atoms[:, i], cb.atoms[:, j])[0, 1]
            assert abs(r) < 4 / np.sqrt(d)


def test_concurrent_codebook_builds_match_serial():
    from concurrent.futures import ThreadPoolExecutor

    jobs = [(seed, t) for seed in (0, 1, 2) for t in (1, 2, 3, 4)]
    serial = [build_codebook(seed, t, 6, 64).atoms for seed, t in jobs]
    with ThreadPoolExecutor(max_workers=8) as pool:
        parallel = list(pool.map(lambda j: build_codebook(j[0], j[1], 6, 64).atoms, jobs))
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)


def test_interleaved_streams_do_not_interact():
    a = NoiseStream(StreamKey(1, Domain.CODEBOOK, 0, 0))
    b = NoiseStream(StreamKey(2, Domain.CODEBOOK, 0, 0))
    interleaved_a, interleaved_b = [], []
    for _ in range(4):
        interleaved_a.append(a.raw(3))
        interleaved_b.append(b.raw(3))
    assert np.array_equal(
        np.concatenate(interleaved_a),
        derive_stream(StreamKey(1, Domain.CODEBOOK, 0, 0)).raw(12),
    )
    assert np.array_equal(
        np.concatenate(interleaved_b),
        derive_stream(StreamKey(2, Domain.CODEBOOK, 0, 0)).raw(12),
    )
