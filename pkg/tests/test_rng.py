import numpy as np
import pytest

from partialforce.rng import Xoshiro256, splitmix64, stream_seed


def test_splitmix64_reference_vectors():
    s, out = 0, []
    for _ in range(2):
        s, x = splitmix64(s)
        out.append(x)
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4]
    s, out = 1234567, []
    for _ in range(3):
        s, x = splitmix64(s)
        out.append(x)
    assert out == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_xoshiro256ss_reference_vector():
    r = Xoshiro256(0)
    r.s = [1, 2, 3, 4]
    assert [r.next_u64() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


def test_same_seed_same_sequence():
    a, b = Xoshiro256(42), Xoshiro256(42)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]


def test_streams_are_distinct():
    seeds = {stream_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert Xoshiro256.stream(7, 0).next_u64() != Xoshiro256.stream(7, 1).next_u64()


def test_random_in_unit_interval_and_mean():
    r = Xoshiro256(3)
    u = np.array([r.random() for _ in range(20000)])
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / len(u))


def test_below_bounds_and_errors():
    r = Xoshiro256(1)
    vals = [r.below(7) for _ in range(5000)]
    assert set(vals) == set(range(7))
    with pytest.raises(ValueError):
        r.below(0)


def test_normals_moments():
    z = Xoshiro256(11).normals(20000)
    assert abs(z.mean()) < 4 / np.sqrt(len(z))
    assert abs(z.var() - 1.0) < 0.05


def test_permutation_is_a_permutation():
    p = Xoshiro256(5).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


@pytest.mark.parametrize("n,k", [(10, 0), (10, 10), (100, 20), (1, 1)])
def test_choose_sorted_unique(n, k):
    c = Xoshiro256(9).choose(n, k)
    assert len(c) == k
    assert np.all(np.diff(c) > 0)
    assert c.size == 0 or (c.min() >= 0 and c.max() < n)


def test_choose_rejects_bad_k():
    with pytest.raises(ValueError):
        Xoshiro256(0).choose(3, 4)
