"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line with its runtime; the wall-clock limit is
part of every criterion.
"""
import math
import os

import numpy as np

from fpplab.certificates import (SlabParams, block_event_check, face_deficit_profile,
                                 geodesic_block_trace, is_bad_vertex, is_dark_vertex,
                                 lower_tail_block_chain, scan_bad_vertices, slab_certificate)
from fpplab.cli import main
from fpplab.estimators import (_mean, _sample_var, estimate_fluctuation_exponent,
                               estimate_tail_probability, estimate_time_constant,
                               exact_tail_distribution, exponent_from_samples, sample_times,
                               two_sided_exceedances, wilson_interval)
from fpplab.lattice_geom import Box, make_frame
from fpplab.passage_core import (QuerySpec, batch_point_times, brute_force_passage, geodesic,
                                 passage_time)
from fpplab.weight_field import Constant, Plant, TwoPoint, Uniform, WeightField, with_plants

E1 = (1.0, 0.0)
FRAME = make_frame(E1)
W_MAX = 1 / 16
UNIFORM = Uniform(0.0, W_MAX)
LAW = TwoPoint(0.02, 0.05, 0.5)
CPUS = os.cpu_count() or 1


def uniform_field(seed: int, replica: int = 0) -> WeightField:
    return WeightField(UNIFORM, 2, seed=seed, replica=replica)


# ---------------------------------------------------------------------------


def test_shortest_path_matches_exhaustive_enumeration(acceptance):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(200):
        shape = (3, 3) if i % 2 == 0 else (4, 3)
        f = WeightField(LAW, 2, seed=31, replica=i)
        cells = [(a, b) for a in range(shape[0]) for b in range(shape[1])]
        s, t = rng.choice(len(cells), size=2, replace=False)
        src, dst = cells[s], cells[t]
        box = Box((0, 0), (shape[0] - 1, shape[1] - 1))
        fast = passage_time(QuerySpec(f, [src], [dst], box)).time
        exact, _ = brute_force_passage(f, shape, src, dst)
        mismatches += fast != exact
    ok = mismatches == 0 and acceptance.elapsed < 10
    acceptance.record(1, "search equals exhaustive simple-path minimum on 200 boxes", ok,
                      f"mismatches={mismatches}")
    assert ok


def test_exact_tail_calibration(acceptance):
    exact = exact_tail_distribution((3, 3), LAW)
    thresholds = (0.095, 0.125, 0.155)
    box = Box((0, 0), (2, 2))
    full_runs = 0
    per_seed = []
    for seed in range(10):
        f = WeightField(LAW, 2, seed=1000 + seed)
        times = sample_times(f, (0, 0), (2, 2), 10 ** 5, "calibration", region=box,
                             workers=CPUS)
        inside = 0
        for thr in thresholds:
            hits = int(np.count_nonzero(times > thr))
            lo, hi = wilson_interval(hits, len(times), z=3.0)
            inside += lo <= exact.prob_greater(thr) <= hi
        per_seed.append(inside)
        full_runs += inside == 3
    ok = all(k >= 2 for k in per_seed) and full_runs >= 8 and acceptance.elapsed < 60
    acceptance.record(2, "MC tails inside 3-sigma Wilson bands of the exact law", ok,
                      f"thresholds inside per seed={per_seed}")
    assert ok


def test_constant_environment_exactness(acceptance):
    c = 0.05
    f = WeightField(Constant(c), 2, seed=3)
    problems = []
    est = estimate_time_constant(f, E1, [10, 100, 1000], 2)
    for N, m in zip(est.N_list, est.mean_per_N):
        # N sequential additions and one division: relative error below (N + 1) eps
        if abs(m - c) > (N + 1) * np.finfo(float).eps * c:
            problems.append(f"mu at N={N} is {m!r}")
    for N in (10, 100, 1000):
        for side in ("upper", "lower"):
            tail = estimate_tail_probability(f, E1, N, side, 0.5, c, 2)
            if tail.hits != 0:
                problems.append(f"{side} tail at N={N}")
    slab = slab_certificate(f, SlabParams(64, 0.5, 4, E1, FRAME, c))
    if slab.kind != "bound_witness" or not slab.verification["rechecked"]:
        problems.append("slab")
    if is_bad_vertex(f, (0, 0), 0.05, 16, E1, FRAME, c, 0.5) is not None:
        problems.append("bad vertex")
    scan = scan_bad_vertices(f, 64, 1, 4, 0.8, 0.05, E1, FRAME, c, 0.4, 0.1)
    if scan.count != 0:
        problems.append(f"bad count {scan.count}")
    dark = [is_dark_vertex(f, x, 0.1, 8, 9, FRAME, c).dark for x in [(0, 0), (5, -3), (-7, 11)]]
    if any(dark):
        problems.append("dark vertex")
    prof = face_deficit_profile(f, 192, 64, E1, FRAME, c, 10, 0.1, 0.05,
                                window=Box((-10, -40), (200, 40)))
    if any(prof.deficits):
        problems.append(f"deficits {prof.deficits}")
    upper = block_event_check(f, 512, 0.05, 0.34, 0.1, 9, c)
    if upper.hypotheses_hold:
        problems.append("upper chain events")
    lower = lower_tail_block_chain(f, 1024, 0.3, 0.05, c)
    if lower.conjunction:
        problems.append("lower chain events")
    ok = not problems and acceptance.elapsed < 30
    acceptance.record(3, "constant weights are exact everywhere", ok,
                      "; ".join(problems) or "mu, tails, certificates and counts exact")
    assert ok


def _pairs(rng, n, span=10, reach=8):
    x = rng.integers(-span, span + 1, size=(n, 2))
    y = x + rng.integers(-reach, reach + 1, size=(n, 2))
    return x, y


def test_algebraic_invariants(acceptance):
    rng = np.random.default_rng(77)
    uni = WeightField(Uniform(0.001, W_MAX), 2, seed=41)
    two = WeightField(LAW, 2, seed=42)
    reps = np.arange(100)
    violations = dict.fromkeys(["symmetry", "triangle", "region", "weight", "bounds"], 0)
    checks = dict.fromkeys(violations, 0)

    def times(field, x, y, region=None):
        return batch_point_times(field, reps, x, y, region=region, bidirectional=False)

    xs, ys = _pairs(rng, 100)
    for x, y in zip(xs, ys):
        fwd, bwd = times(uni, x, y), times(uni, y, x)
        tol = 1e-12 * np.abs(x - y).sum()
        violations["symmetry"] += int(np.count_nonzero(np.abs(fwd - bwd) > tol))
        checks["symmetry"] += len(reps)

    xs, ys = _pairs(rng, 100)
    zs = ys + rng.integers(-8, 9, size=ys.shape)
    for x, y, z in zip(xs, ys, zs):
        direct = times(uni, x, z)
        split = times(uni, x, y) + times(uni, y, z)
        tol = 1e-12 * (np.abs(x - y).sum() + np.abs(y - z).sum())
        violations["triangle"] += int(np.count_nonzero(direct > split + tol))
        checks["triangle"] += len(reps)

    xs, ys = _pairs(rng, 100)
    for x, y in zip(xs, ys):
        lo = np.minimum(x, y) - rng.integers(0, 3, size=2)
        hi = np.maximum(x, y) + rng.integers(0, 3, size=2)
        inner = Box(tuple(map(float, lo)), tuple(map(float, hi)))
        outer = Box(tuple(map(float, lo - 2)), tuple(map(float, hi + 2)))
        t_all, t_out, t_in = times(uni, x, y), times(uni, x, y, outer), times(uni, x, y, inner)
        violations["region"] += int(np.count_nonzero((t_all > t_out) | (t_out > t_in)))
        checks["region"] += len(reps)

    xs, ys = _pairs(rng, 100)
    for x, y in zip(xs, ys):
        # bump one edge inside the bounding box of the pair to the cap
        low = tuple(int(v) for v in rng.integers(np.minimum(x, y) - 1, np.maximum(x, y) + 1))
        axis = int(rng.integers(0, 2))
        bumped = with_plants(uni, Plant(low, low, W_MAX, axis))
        base, up = times(uni, x, y), times(bumped, x, y)
        violations["weight"] += int(np.count_nonzero(up < base))
        checks["weight"] += len(reps)

    xs, ys = _pairs(rng, 100)
    for x, y in zip(xs, ys):
        dist = float(np.abs(x - y).sum())
        t = times(two, x, y)
        low_ok = t >= LAW.w0 * dist * (1 - 1e-12)
        high_ok = t <= LAW.w1 * dist * (1 + 1e-12)
        violations["bounds"] += int(np.count_nonzero(~(low_ok & high_ok)))
        checks["bounds"] += len(reps)

    enough = all(n >= 10 ** 4 for n in checks.values())
    ok = enough and not any(violations.values()) and acceptance.elapsed < 120
    acceptance.record(4, "symmetry, triangle, monotonicity and bounds hold", ok,
                      f"checks={checks} violations={violations}")
    assert ok


def _slab_dichotomy(mu_ref: float, a: float, n: int, seed: int):
    counts = {"certificate": 0, "bound_witness": 0, "inconclusive": 0}
    failures = 0
    for r in range(n):
        f = uniform_field(seed, r)
        out = slab_certificate(f, SlabParams(64, a, 4, E1, FRAME, mu_ref))
        counts[out.kind] += 1
        exceeds = out.direct_T > out.bound
        if exceeds and out.kind != "certificate":
            failures += 1
        if out.kind == "certificate":
            v = out.verification["values"]
            if not (out.verification["rechecked"] and v["A_size"] >= v["need"]
                    and v["reached"] <= v["allowed"]):
                failures += 1
    return counts, failures


def test_slab_dichotomy(acceptance):
    mu_ref = estimate_time_constant(uniform_field(500), E1, [64], 1000, workers=CPUS).mu_hat
    counts, failures = _slab_dichotomy(mu_ref, 0.8, 500, seed=501)
    # the same rule with a deflated reference, where certificates actually occur
    stress_counts, stress_failures = _slab_dichotomy(0.001, 0.05, 100, seed=502)
    ok = failures == 0 and stress_failures == 0 and acceptance.elapsed < 300
    acceptance.record(5, "slab dichotomy and certificate rechecks", ok,
                      f"mu_ref={mu_ref:.6f} outcomes={counts} failures={failures}; "
                      f"deflated outcomes={stress_counts} failures={stress_failures}")
    assert ok


def _upper_chain(mu_ref: float, n: int, seed: int, slow_bands: bool = False):
    vacuous = violations = 0
    for r in range(n):
        f = uniform_field(seed, r)
        if slow_bands:
            # capped axial edges over most of each block make the events fire
            f = with_plants(f, *[Plant((i * 89, -4000), (i * 89 + 69, 4000), W_MAX, 0)
                                 for i in range(5)])
        rep = block_event_check(f, 512, 0.05, 1 / 3, 0.1, 9, mu_ref)
        if not rep.hypotheses_hold:
            vacuous += 1
        elif rep.actual_T < rep.implied_lower_bound:
            violations += 1
    return vacuous, violations


def test_upper_block_chain(acceptance):
    mu_ref = estimate_time_constant(uniform_field(600), E1, [512], 100, workers=CPUS).mu_hat
    vacuous, violations = _upper_chain(mu_ref, 50, seed=601)
    band_vacuous, band_violations = _upper_chain(0.001, 50, seed=602, slow_bands=True)
    ok = violations == 0 and band_violations == 0 and acceptance.elapsed < 300
    acceptance.record(6, "block events imply the chained lower bound", ok,
                      f"mu_ref={mu_ref:.6f} vacuous={vacuous}/50 violations={violations}; "
                      f"slow bands vacuous={band_vacuous}/50 violations={band_violations}")
    assert ok


def test_block_trace_bounds(acceptance):
    violations = 0
    for r in range(100):
        path = geodesic(QuerySpec(uniform_field(700, r), [(0, 0)], [(256, 0)]))
        for K_hat in (4, 16, 64):
            tr = geodesic_block_trace(path, K_hat)
            if not (tr.connected and K_hat * len(tr.blocks) <= 9 * len(path)):
                violations += 1
    ok = violations == 0 and acceptance.elapsed < 120
    acceptance.record(7, "block traces of geodesics are connected and small", ok,
                      f"violations={violations} over 300 traces")
    assert ok


def test_regression_identities(acceptance):
    rng = np.random.default_rng(8)
    Ns = [32, 64, 128, 256]
    centred = rng.normal(size=400)
    positive = rng.exponential(size=400) + 0.1
    cases = [("variance", 1 / 3, centred, _sample_var, True),
             ("mean_deviation", 2 / 3, positive, _mean, False),
             ("mean_excess", 0.45, positive, _mean, False)]
    errors = {}
    for name, exponent, base, stat, halve in cases:
        # scaling a sample by N^e scales a mean by N^e and a variance by N^2e
        samples = [N ** exponent * base for N in Ns]
        est = exponent_from_samples(name, Ns, samples, stat, halve,
                                    np.random.default_rng(9), resamples=20)
        errors[name] = abs(est.exponent_hat - exponent)
    ok = all(e <= 1e-9 for e in errors.values()) and acceptance.elapsed < 1
    acceptance.record(8, "fitters recover injected exponents", ok,
                      " ".join(f"{k}={v:.1e}" for k, v in errors.items()))
    assert ok


def test_sublinear_variance_trend(acceptance):
    passes = []
    for seed in range(10):
        est = estimate_fluctuation_exponent(uniform_field(900 + seed), E1, [32, 64, 128, 256],
                                            200, workers=CPUS)
        slope, upper = 2 * est.exponent_hat, 2 * est.ci_high
        passes.append(bool(slope < 1.0 and upper < 1.2))
    ok = sum(passes) >= 8 and acceptance.elapsed < 600
    acceptance.record(9, "variance grows sublinearly", ok,
                      f"seeds passing={sum(passes)}/10")
    assert ok


def test_tail_asymmetry_direction(acceptance):
    passes = fails = 0
    counts = []
    for seed in range(10):
        # the outcome is settled once 8 seeds pass or 3 fail
        if passes >= 8 or fails >= 3:
            break
        f = uniform_field(1100 + seed)
        t = sample_times(f, (0, 0), (200, 0), 10 ** 4, "asymmetry", workers=CPUS)
        above, below = two_sided_exceedances(t, 2.0)
        counts.append((above, below))
        if above <= below + 3 * math.sqrt(below):
            passes += 1
        else:
            fails += 1
    elapsed = acceptance.elapsed
    ok = passes >= 8 and elapsed < 600
    acceptance.record(10, "upper 2-sd tail no heavier than lower", ok,
                      f"seeds passing={passes}/{len(counts)} (above, below)={counts}"
                      f" cpus={CPUS}")
    assert ok


def test_cli_worker_determinism(acceptance, tmp_path):
    cfg = tmp_path / "chi.toml"
    cfg.write_text('schema_version = 1\nkind = "chi"\nseed = 12\ndimension = 2\n'
                   'n_samples = 60\n[distribution]\nkind = "uniform"\nlo = 0.0\n'
                   'hi = 0.0625\n[params]\nN_list = [16, 32, 64]\n')
    codes, outs = [], []
    for w in (1, 8):
        out = tmp_path / f"w{w}"
        codes.append(main(["run", "--config", str(cfg), "--out", str(out),
                           "--workers", str(w)]))
        outs.append(out)
    names = ["results.json"] + sorted(p.name for p in outs[0].glob("*.csv"))
    differing = [n for n in names
                 if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    ok = codes == [0, 0] and len(names) > 1 and not differing and acceptance.elapsed < 120
    acceptance.record(11, "--workers 1 and 8 give byte-identical outputs", ok,
                      f"compared={names} differing={differing}")
    assert ok
