import numpy as np
import pytest

from onsigma import Purpose, StreamKey, derive_stream
from onsigma.streams import NoisePrefetch, as_purpose


def test_same_key_reproduces_stream():
    k = StreamKey(123456789, component=3, replica=1, purpose=Purpose.Z_NOISE)
    a = derive_stream(k).standard_normal(1000)
    b = derive_stream(k).standard_normal(1000)
    assert np.array_equal(a, b)


def test_component_index_gives_uncorrelated_streams():
    n = 100_000
    a = derive_stream(StreamKey(7, component=0)).standard_normal(n)
    b = derive_stream(StreamKey(7, component=1)).standard_normal(n)
    corr = float(np.dot(a - a.mean(), b - b.mean()) / n / (a.std() * b.std()))
    assert abs(corr) < 3.0 / np.sqrt(n)


def test_purpose_tags_distinct():
    a = derive_stream(StreamKey(7, 0, 0, "z-noise")).standard_normal(8)
    b = derive_stream(StreamKey(7, 0, 0, "y-init")).standard_normal(8)
    assert not np.array_equal(a, b)


def test_replica_distinct():
    a = derive_stream(StreamKey(7, 0, 0)).standard_normal(8)
    b = derive_stream(StreamKey(7, 0, 1)).standard_normal(8)
    assert not np.array_equal(a, b)


def test_purpose_aliases():
    assert as_purpose("meanfield") is Purpose.MEANFIELD
    assert as_purpose(Purpose.Z_INIT) is Purpose.Z_INIT
    with pytest.raises(ValueError, match="purpose"):
        as_purpose("bogus")


def test_master_seed_range_checked():
    with pytest.raises(ValueError):
        StreamKey(-1)
    with pytest.raises(ValueError):
        StreamKey(2**64)


def test_prefetch_matches_per_step_draws():
    key = StreamKey(42, component=5)
    pre = NoisePrefetch(derive_stream(key), (4, 4), chunk=8)
    blocks = [pre.next_block().copy() for _ in range(20)]
    direct = derive_stream(key)
    for blk in blocks:
        assert np.array_equal(blk, direct.standard_normal((4, 4)))
