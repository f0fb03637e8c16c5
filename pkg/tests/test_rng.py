import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugecnn.rng import SplitMix64, derive_seed

MASK = (1 << 64) - 1


def reference_splitmix64(seed, n):
    """Scalar pure-Python splitmix64, independent of the numpy path."""
    out = []
    state = seed & MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_published_vector():
    assert SplitMix64(1234567).next_u64(3).tolist() == [
        6457827717110365317, 3203168211198807973, 9817491932198370423]


@given(st.integers(min_value=0, max_value=MASK), st.integers(min_value=1, max_value=40))
def test_matches_scalar_reference(seed, n):
    assert SplitMix64(seed).next_u64(n).tolist() == reference_splitmix64(seed, n)


def test_stream_continues_across_calls():
    a = SplitMix64(99)
    joined = np.concatenate([a.next_u64(5), a.next_u64(7)])
    assert joined.tolist() == SplitMix64(99).next_u64(12).tolist()


def test_derive_seed_is_stream_element():
    stream = SplitMix64(42).next_u64(10).tolist()
    assert [derive_seed(42, i) for i in range(10)] == stream


def test_uniform_range_and_moments():
    u = SplitMix64(7).uniform(100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_normal_moments():
    z = SplitMix64(7).normal(100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=MASK), st.integers(min_value=0, max_value=300))
def test_permutation_is_permutation(seed, n):
    perm = SplitMix64(seed).permutation(n)
    assert sorted(perm.tolist()) == list(range(n))


def test_permutation_deterministic_and_seed_sensitive():
    a = SplitMix64(5).permutation(50)
    assert np.array_equal(a, SplitMix64(5).permutation(50))
    assert not np.array_equal(a, SplitMix64(6).permutation(50))
