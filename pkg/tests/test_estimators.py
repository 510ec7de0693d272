import itertools
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from fpplab.estimators import (EstimationError, count_exceedances, estimate_fluctuation_exponent,
                               estimate_rate_curve, estimate_restricted_mean_excess,
                               estimate_tail_probability, estimate_time_constant,
                               estimate_wandering_exponent, exact_rate_curve,
                               exact_tail_distribution, exponent_from_samples, fit_exponent,
                               fit_line, normalized_rate, replicas_for, tail_from_times,
                               tail_threshold, two_sided_exceedances, wilson_interval)
from fpplab.lattice_geom import Box
from fpplab.passage_core import box_edges
from fpplab.weight_field import Constant, TwoPoint, Uniform, WeightField

LAW = TwoPoint(0.02, 0.05, 0.5)


def scipy_box_times(shape, law, source, target):
    """Independent oracle: scipy Dijkstra on every weight configuration of a box."""
    edges = box_edges(shape)
    index = {v: i for i, v in enumerate(itertools.product(*[range(s) for s in shape]))}
    rows = [index[e[0]] for e in edges]
    cols = []
    for low, k in edges:
        hi = list(low)
        hi[k] += 1
        cols.append(index[tuple(hi)])
    m = len(edges)
    times, probs = [], []
    for cfg in range(1 << m):
        ws = [law.w1 if cfg >> j & 1 else law.w0 for j in range(m)]
        g = csr_matrix((ws, (rows, cols)), shape=(len(index), len(index)))
        t = dijkstra(g, directed=False, indices=index[tuple(source)])[index[tuple(target)]]
        k = bin(cfg).count("1")
        times.append(t)
        probs.append(law.p ** k * (1 - law.p) ** (m - k))
    return np.array(times), np.array(probs)


@pytest.fixture(scope="module")
def box_pmf():
    return exact_tail_distribution((3, 3), LAW)


def test_exact_box_fixture(box_pmf):
    assert box_pmf.instance["edges"] == 12
    assert math.fsum(box_pmf.pmf) == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(box_pmf.support) > 0)
    # frozen after the first enumeration, cross-checked against scipy below
    assert box_pmf.mean == pytest.approx(0.10994140625, abs=1e-15)
    assert box_pmf.variance == pytest.approx(0.000516793441772461, abs=1e-15)


def test_exact_box_matches_scipy_oracle(box_pmf):
    times, probs = scipy_box_times((3, 3), LAW, (0, 0), (2, 2))
    assert math.fsum(times * probs) == pytest.approx(box_pmf.mean, abs=1e-12)
    for t in (0.095, 0.125, 0.155, 0.185):
        assert math.fsum(probs[times > t]) == pytest.approx(box_pmf.prob_greater(t), abs=1e-12)


def test_exact_degenerate_cases():
    same = exact_tail_distribution((3, 3), TwoPoint(0.03, 0.03, 0.5))
    assert same.support.tolist() == [pytest.approx(0.12)] and same.pmf.tolist() == [1.0]
    all_high = exact_tail_distribution((3, 3), TwoPoint(0.02, 0.05, 1.0))
    assert len(all_high.support) == 1 and all_high.support[0] == pytest.approx(0.2)
    with pytest.raises(EstimationError):
        exact_tail_distribution((5, 5), LAW)


def test_constant_time_constant_axis():
    f = WeightField(Constant(0.05), 2, seed=4)
    est = estimate_time_constant(f, (1.0, 0.0), [10, 100, 1000], 3)
    for N, m in zip(est.N_list, est.mean_per_N):
        assert abs(m - 0.05) <= 1e-12 * N * 0.05
    assert est.stderr == [0.0, 0.0, 0.0]
    assert est.mu_hat == est.mean_per_N[-1]


def test_constant_time_constant_diagonal():
    s = 1 / math.sqrt(2)
    est = estimate_time_constant(WeightField(Constant(0.05), 2), (s, s), [10, 50], 2)
    for N, m in zip(est.N_list, est.mean_per_N):
        l1 = 2 * math.floor(N * s)
        assert abs(m - 0.05 * l1 / N) <= 1e-12 * l1
        assert abs(m - 0.05 * math.sqrt(2)) <= 0.05 * 2 / N


def test_time_constant_agrees_with_exact_enumeration():
    # T(0, 2 e1) cannot leave the 3x3 box around the segment: any escape costs > 0.1
    f = WeightField(LAW, 2, seed=21)
    est = estimate_time_constant(f, (1.0, 0.0), [2], 20000)
    exact = exact_tail_distribution((3, 3), LAW, (0, 1), (2, 1))
    assert abs(est.mean_per_N[0] * 2 - exact.mean) <= 3 * est.stderr[0] * 2


def test_time_constant_rejects_bad_scales(uniform_field):
    with pytest.raises(EstimationError):
        estimate_time_constant(uniform_field, (1.0, 0.0), [10, 5], 5)
    with pytest.raises(EstimationError):
        estimate_time_constant(uniform_field, (1.0, 0.0), [10], 1)


def test_regression_identities():
    Ns = [16, 32, 64, 128, 256]
    assert fit_exponent(Ns, [N ** 0.8 for N in Ns], halve=True)[0] == pytest.approx(0.4, abs=1e-9)
    assert fit_exponent(Ns, [3 * N ** (2 / 3) for N in Ns])[0] == pytest.approx(2 / 3, abs=1e-9)
    slope, icept = fit_line([0, 1, 2], [1, 3, 5])
    assert (slope, icept) == pytest.approx((2, 1))


def test_injected_samples_recover_exponent():
    rng = np.random.default_rng(0)
    base = rng.normal(size=500)
    base = (base - base.mean()) / base.std(ddof=1)
    Ns = [32, 64, 128, 256]
    samples = [N ** 0.4 * base for N in Ns]
    est = exponent_from_samples("var", Ns, samples, lambda s: float(np.var(s, ddof=1)), True,
                                np.random.default_rng(1), resamples=200)
    assert est.exponent_hat == pytest.approx(0.4, abs=1e-9)
    assert est.ci_low <= est.exponent_hat <= est.ci_high


def test_constant_fluctuation_is_degenerate():
    est = estimate_fluctuation_exponent(WeightField(Constant(0.05), 2), (1.0, 0.0),
                                        [8, 16, 32], 30)
    assert est.degenerate and "variance" in est.reason


def test_fluctuation_needs_three_scales(uniform_field):
    with pytest.raises(EstimationError):
        estimate_fluctuation_exponent(uniform_field, (1.0, 0.0), [8, 16], 30)
    with pytest.raises(EstimationError):
        estimate_fluctuation_exponent(uniform_field, (1.0, 0.0), [8, 16, 32], 10)


def test_straight_geodesics_degenerate_wandering(uniform_field):
    est = estimate_wandering_exponent(uniform_field, (1.0, 0.0), [8, 16, 32], 30,
                                      region=lambda N: Box((0, 0), (N, 0)))
    assert est.degenerate
    assert all(v == 0 for v in est.per_scale)


def test_restricted_excess(uniform_field):
    with pytest.raises(EstimationError):
        estimate_restricted_mean_excess(uniform_field, (1.0, 0.0), 0.5, [8, 16], 10, None)
    const = estimate_restricted_mean_excess(WeightField(Constant(0.05), 2), (1.0, 0.0), 0.5,
                                            [8, 16, 32], 5, 0.05)
    assert all(v <= 1e-12 for v in const.per_scale)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and lo + hi == pytest.approx(1.0)
    with pytest.raises(ValueError):
        wilson_interval(5, 3)


def test_tail_bookkeeping():
    times = np.array([1.0, 2.0, 3.0, 4.0])
    assert count_exceedances(times, "upper", 2.5) == 2
    assert count_exceedances(times, "lower", 2.0) == 1
    t = tail_from_times(times, "upper", 2.5, 10)
    assert t.p_hat == t.hits / t.n == 0.5
    assert tail_threshold("upper", 100, 0.03, 0.5) == 3.0 + 10.0
    assert tail_threshold("lower", 100, 0.03, 0.01, "zeta") == pytest.approx(3.0 - 1.0)
    above, below = two_sided_exceedances(np.r_[np.zeros(98), 10.0, -10.0])
    assert (above, below) == (1, 1)


def test_constant_tails_are_empty():
    f = WeightField(Constant(0.05), 2)
    up = estimate_tail_probability(f, (1.0, 0.0), 50, "upper", 0.3, 0.05, 10)
    assert up.hits == 0 and up.p_hat == 0
    low = estimate_tail_probability(f, (1.0, 0.0), 50, "lower", 0.3, 0.05, 10)
    assert low.hits == 0


def test_impossible_lower_tail(two_point_field):
    # threshold below N * w_min can never be undercut
    t = estimate_tail_probability(two_point_field, (1.0, 0.0), 20, "lower", 0.03, 0.035, 200,
                                  kind="zeta")
    assert tail_threshold("lower", 20, 0.035, 0.03, "zeta") < 20 * 0.02 * (1 + 1e-9)
    assert t.hits == 0


def test_rate_curve_shapes(uniform_field):
    rc = estimate_rate_curve(uniform_field, (1.0, 0.0), 16, "upper", [0.001, 0.003, 0.5],
                             0.025, 400)
    assert rc.tails[-1].p_hat == 0 and not rc.reliable[-1]
    assert rc.rows()[0].keys() == {"zeta", "p_hat", "ci_lo", "ci_hi", "neg_log_p_normalized"}
    assert rc.predicted_power == pytest.approx(3.0)
    flat = estimate_rate_curve(WeightField(Constant(0.05), 2), (1.0, 0.0), 16, "upper",
                               [0.01, 0.02], 0.05, 20)
    assert not flat.informative
    with pytest.raises(EstimationError):
        estimate_rate_curve(uniform_field, (1.0, 0.0), 16, "upper", [0.2, 0.1], 0.025, 10)


def test_exact_rate_curve_matches_pmf(box_pmf):
    thresholds = [0.125, 0.155]
    rates = exact_rate_curve(box_pmf, "upper", 2, 2, thresholds)
    for t, r in zip(thresholds, rates):
        assert r == normalized_rate(box_pmf.prob_greater(t), "upper", 2, 2)
        assert r == -math.log(box_pmf.prob_greater(t)) / 4


def test_worker_count_does_not_change_estimates(uniform_field):
    a = estimate_time_constant(uniform_field, (1.0, 0.0), [16, 32], 40, workers=1)
    b = estimate_time_constant(uniform_field, (1.0, 0.0), [16, 32], 40, workers=3)
    assert a.to_dict() == b.to_dict()


def test_replica_streams_distinct():
    a = replicas_for("mu", 16, n=100)
    b = replicas_for("mu", 32, n=100)
    assert len(set(a.tolist()) | set(b.tolist())) == 200
