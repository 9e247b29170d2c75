import numpy as np

from mvlevy import rng


def test_streams_reproducible():
    a = rng.stream(5, "brownian", 0).normal(size=4)
    b = rng.stream(5, "brownian", 0).normal(size=4)
    assert np.array_equal(a, b)


def test_streams_separated_by_tag_and_index():
    base = rng.stream(5, "brownian", 0).normal(size=4)
    assert not np.array_equal(base, rng.stream(5, "jumps", 0).normal(size=4))
    assert not np.array_equal(base, rng.stream(5, "brownian", 1).normal(size=4))
    assert not np.array_equal(base, rng.stream(6, "brownian", 0).normal(size=4))


def test_derive_seed_stable():
    assert rng.derive_seed(1, "x", 2) == rng.derive_seed(1, "x", 2)
    assert rng.derive_seed(1, "x", 2) != rng.derive_seed(1, "x", 3)
