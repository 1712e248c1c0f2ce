import math

import numpy as np
import pytest

from pdseg.rng import Rng


def test_same_seed_same_stream():
    a = Rng(42).standard_normal(200)
    b = Rng(42).standard_normal(200)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(Rng(1).standard_normal(100), Rng(2).standard_normal(100))


def test_child_streams_differ_in_first_draws():
    parent = Rng(7)
    a = parent.child("member", 0).standard_normal(100)
    b = parent.child("member", 1).standard_normal(100)
    assert not np.any(a == b)


def test_child_label_and_index_both_matter():
    parent = Rng(7)
    keys = {
        parent.child("member", 0).key,
        parent.child("member", 1).key,
        parent.child("degrade", 0).key,
        parent.child("m", 10).key,
    }
    assert len(keys) == 4


def test_child_independent_of_parent_draws():
    a = Rng(3)
    a.standard_normal(50)
    b = Rng(3)
    assert a.child("x").key == b.child("x").key


def test_normal_moments_million_draws():
    z = Rng(123).standard_normal(1_000_000)
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - 1.0) < 0.01


def test_normal_ks_against_standard_normal_cdf():
    n = 100_000
    z = np.sort(Rng(9).standard_normal(n))
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    ranks = np.arange(1, n + 1)
    d = max(np.max(ranks / n - cdf), np.max(cdf - (ranks - 1) / n))
    critical_1pct = 1.6276 / math.sqrt(n)
    assert d < critical_1pct


def test_uniform_range_and_mean():
    u = Rng(5).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_integers_cover_range():
    vals = Rng(11).integers(3, 7, size=2000)
    assert set(np.unique(vals)) == {3, 4, 5, 6}
    with pytest.raises(ValueError):
        Rng(0).integers(5, 5)


def test_permutation_is_permutation():
    p = Rng(2).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


def test_standard_normal_grid_shape_and_validation():
    g = Rng(0).standard_normal_grid(4, 6)
    assert g.shape == (4, 6)
    with pytest.raises(ValueError):
        Rng(0).standard_normal_grid(0, 5)


def test_draws_consume_counter():
    rng = Rng(8)
    first = rng.standard_normal(10)
    second = rng.standard_normal(10)
    assert not np.array_equal(first, second)
