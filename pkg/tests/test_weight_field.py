import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpplab.weight_field import (Constant, DimensionError, DistributionError, Edge, Plant,
                                 TruncatedExponential, TwoPoint, Uniform, WeightField,
                                 canonical_edge, distribution_from_dict, path_weights, reseed,
                                 running_sum, sample_weight, validate_distribution, weight_cap,
                                 with_plants)

LAWS = [Constant(0.03), Uniform(0.0, 1 / 16), TwoPoint(0.02, 0.05, 0.3),
        TruncatedExponential(40.0, 1 / 16)]


def random_edges(rng, n, d=2, span=10**6):
    lows = rng.integers(-span, span, size=(n, d)).astype(np.int64)
    axes = rng.integers(0, d, size=n).astype(np.int64)
    return lows, axes


def test_weight_cap():
    assert weight_cap(2) == 1 / 16
    assert weight_cap(3) == 1 / 36


def test_constant_weight_everywhere(constant_field):
    assert sample_weight(constant_field, ((3, 4), (3, 5))) == 0.05
    assert sample_weight(constant_field, Edge((-7, 2), 0)) == 0.05


def test_repeat_query_bit_identical(uniform_field):
    e = ((12, -3), (13, -3))
    a, b = sample_weight(uniform_field, e), sample_weight(uniform_field, e)
    assert a.hex() == b.hex()
    fresh = WeightField(uniform_field.dist, 2, uniform_field.seed)
    assert sample_weight(fresh, e).hex() == a.hex()


def test_two_point_mean_over_a_million_edges(two_point_field):
    lows, axes = random_edges(np.random.default_rng(0), 10**6)
    w = two_point_field.weights(lows, axes)
    assert set(np.unique(w)) == {0.02, 0.05}
    assert abs(w.mean() - 0.035) <= 3 * 0.015 / 1000


def test_reseed_identity_and_independence(uniform_field):
    lows, axes = random_edges(np.random.default_rng(1), 100)
    base = uniform_field.weights(lows, axes)
    assert np.array_equal(reseed(uniform_field, 0).weights(lows, axes), base)
    one = reseed(uniform_field, 1).weights(lows, axes)
    two = reseed(uniform_field, 2).weights(lows, axes)
    assert np.any(one != two)
    assert reseed(reseed(uniform_field, 1), 1).replica == 1
    with pytest.raises(ValueError):
        reseed(uniform_field, -1)


@pytest.mark.parametrize("dist,d,fragment", [
    (Constant(0.2), 2, "cap exceeds w_max"),
    (TwoPoint(0.0, 0.01, 0.3), 3, "zero atom"),
    (Uniform(0.05, 0.01), 2, "lo > hi"),
    (TwoPoint(0.01, 0.02, 1.5), 2, "p outside"),
])
def test_validation_rejects(dist, d, fragment):
    with pytest.raises(DistributionError, match=fragment):
        validate_distribution(dist, d)


def test_validation_accepts_boundary():
    validate_distribution(Uniform(0.0, 1 / 16), 2)
    WeightField(Uniform(0.0, 1 / 16), 2)


def test_field_rejects_bad_law_and_dimension():
    with pytest.raises(DistributionError):
        WeightField(Constant(0.05), 3)  # 0.05 > 1/36
    with pytest.raises(DimensionError):
        sample_weight(WeightField(Constant(0.01), 3), ((0, 0), (1, 0)))


def test_distribution_round_trip():
    for law in LAWS:
        assert distribution_from_dict(law.to_dict()) == law
    with pytest.raises(DistributionError):
        distribution_from_dict({"kind": "uniform", "lo": 0.0, "hi": 0.01, "extra": 1})


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.kind)
def test_bounds_and_moments(law):
    f = WeightField(law, 2, seed=123)
    lows, axes = random_edges(np.random.default_rng(2), 10**5)
    w = f.weights(lows, axes)
    assert np.all(w > 0) and np.all(w <= weight_cap(2))
    n = len(w)
    if law.variance > 0:
        assert abs(w.mean() - law.mean) <= 4 * math.sqrt(law.variance / n)
        # the sample variance has standard error sqrt((m4 - s^4)/n); bound m4 by cap^2 * s^2
        se_var = math.sqrt(weight_cap(2) ** 2 * law.variance / n)
        assert abs(w.var(ddof=1) - law.variance) <= 4 * se_var
    else:
        assert np.all(w == law.mean)


@given(st.lists(st.integers(-10**6, 10**6), min_size=2, max_size=4), st.data())
@settings(max_examples=200, deadline=None)
def test_canonical_orientation_irrelevant(coords, data):
    d = len(coords)
    cap = weight_cap(d)
    f = WeightField(Uniform(cap / 10, cap), d, seed=99)
    axis = data.draw(st.integers(0, d - 1))
    other = list(coords)
    other[axis] += 1
    e1 = canonical_edge(coords, other)
    e2 = canonical_edge(other, coords)
    assert e1 == e2 and e1.low == tuple(coords)
    assert sample_weight(f, (coords, other)) == sample_weight(f, (other, coords))


def test_canonical_edge_rejects_non_neighbours():
    with pytest.raises(ValueError):
        canonical_edge((0, 0), (1, 1))


def test_plants_override_in_box_and_axis(uniform_field):
    f = with_plants(uniform_field, Plant((0, 0), (2, 2), 0.04), Plant((1, 1), (1, 1), 0.01, axis=1))
    assert sample_weight(f, ((0, 0), (1, 0))) == 0.04
    assert sample_weight(f, ((1, 1), (1, 2))) == 0.01
    assert sample_weight(f, ((1, 1), (2, 1))) == 0.04
    assert sample_weight(f, ((5, 5), (6, 5))) == sample_weight(uniform_field, ((5, 5), (6, 5)))
    with pytest.raises(ValueError):
        with_plants(uniform_field, Plant((0, 0), (1, 1), 0.5))


def test_path_weights_and_running_sum(constant_field):
    w = path_weights(constant_field, [(0, 0), (1, 0), (1, 1)])
    assert list(w) == [0.05, 0.05]
    assert running_sum([0.1, 0.2, 0.3]) == (0.1 + 0.2) + 0.3
