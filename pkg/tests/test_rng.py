import numpy as np
import pytest
from scipy import stats

from kaclab import rng

# Known-answer vectors for Philox4x32-10 (Random123 distribution)
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
]


@pytest.mark.parametrize("ctr, key, expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = rng.philox4x32(ctr, key)
    assert tuple(int(x) for x in out) == expected


def test_vectorised_matches_scalar():
    ids = np.arange(50)
    u1, u2 = rng.uniforms(7, ids, 3, rng.EVENT)
    for k in (0, 17, 49):
        a, b = rng.uniforms(7, k, 3, rng.EVENT)
        assert a == u1[k] and b == u2[k]


def test_streams_and_purposes_differ():
    a, _ = rng.uniforms(1, np.arange(1000), 0, rng.EVENT)
    b, _ = rng.uniforms(1, np.arange(1000), 0, rng.INIT)
    c, _ = rng.uniforms(2, np.arange(1000), 0, rng.EVENT)
    assert not np.any(a == b) and not np.any(a == c)


def test_uniform_distribution():
    u1, u2 = rng.uniforms(11, np.arange(100000), 5, rng.HISTORY)
    assert stats.kstest(u1, "uniform").pvalue > 1e-3
    assert stats.kstest(u2, "uniform").pvalue > 1e-3
    assert abs(np.corrcoef(u1, u2)[0, 1]) < 0.02


def test_open_uniforms_positive():
    u1, u2 = rng.open_uniforms(0, np.arange(10000), 0, rng.EVENT)
    assert u1.min() > 0 and u1.max() <= 1 and u2.min() > 0


def test_normals():
    z1, z2 = rng.normals(3, np.arange(100000), 0, rng.INIT)
    assert stats.kstest(z1, "norm").pvalue > 1e-3
    assert stats.kstest(z2, "norm").pvalue > 1e-3


def test_large_seed_and_negative():
    a, _ = rng.uniforms(2**40 + 5, 0, 0, 0)
    b, _ = rng.uniforms(5, 0, 0, 0)
    assert a != b
    with pytest.raises(ValueError):
        rng.uniforms(-1, 0, 0, 0)
