"""Monte Carlo estimators for time constants, exponents and tail frequencies,
plus an exhaustive enumerator for tiny two-point instances.

Replica streams are derived from a tag and the scale, so every estimate is a
deterministic function of (field seed, parameters) and does not depend on
worker count or evaluation order. Sums go through ``math.fsum``.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .lattice_geom import Cylinder, Everything, Frame, Region, floor_point, make_frame
from .passage_core import (QuerySpec, batch_point_times, box_edges,
                           max_transversal_deviation, passage_time,
                           path_edge_indices, simple_paths)
from .weight_field import TwoPoint, WeightField

Z95 = 1.959963984540054
BOOTSTRAP_RESAMPLES = 1000
EXACT_EDGE_CAP = 24


class EstimationError(ValueError):
    """Inputs that make an estimate meaningless."""


# ---------------------------------------------------------------------------
# substreams


def substream_base(*parts) -> int:
    """62-bit-safe replica offset for a named stream; replicas are base + index."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return (int.from_bytes(h, "little") & (2**30 - 1)) << 32


def replicas_for(tag: str, *parts, n: int) -> np.ndarray:
    if n >= 2**32:
        raise EstimationError("too many samples for one substream")
    return substream_base(tag, *parts) + np.arange(n, dtype=np.int64)


def derived_rng(field: WeightField, *parts) -> np.random.Generator:
    h = hashlib.blake2b(repr((field.seed,) + parts).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(h, "little"))


# ---------------------------------------------------------------------------
# result types


@dataclass
class TimeConstantEstimate:
    direction: tuple[float, ...]
    N_list: list[int]
    mean_per_N: list[float]
    stderr: list[float]
    n_samples: list[int]
    mu_hat: float
    mu_ci: tuple[float, float]
    nonrandom: list[float]          # E T - N mu_hat, diagnostic only
    samples: list[np.ndarray] = dc_field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": "time_constant", "direction": list(self.direction),
                "N_list": self.N_list, "mean_per_N": self.mean_per_N,
                "stderr": self.stderr, "n_samples": self.n_samples,
                "mu_hat": self.mu_hat, "mu_ci": list(self.mu_ci),
                "nonrandom": self.nonrandom}

    def rows(self) -> list[dict]:
        return [{"N": n, "mean_per_N": m, "stderr": s, "n_samples": k, "nonrandom": z}
                for n, m, s, k, z in zip(self.N_list, self.mean_per_N, self.stderr,
                                         self.n_samples, self.nonrandom)]


@dataclass
class ExponentEstimate:
    statistic: str
    exponent_hat: float
    ci_low: float
    ci_high: float
    log_N: list[float]
    log_stat: list[float]
    slope: float
    intercept: float
    degenerate: bool = False
    reason: str = ""
    per_scale: list[float] = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": "exponent", "statistic": self.statistic,
                "exponent_hat": _json_float(self.exponent_hat),
                "ci_low": _json_float(self.ci_low), "ci_high": _json_float(self.ci_high),
                "regression": {"log_N": self.log_N, "log_stat": self.log_stat,
                               "slope": _json_float(self.slope),
                               "intercept": _json_float(self.intercept)},
                "degenerate": self.degenerate, "reason": self.reason,
                "per_scale": self.per_scale}


@dataclass
class TailEstimate:
    side: str
    N: int
    magnitude_kind: str           # "a", "zeta" or "threshold"
    magnitude: float
    threshold: float
    hits: int
    n: int
    p_hat: float
    ci: tuple[float, float]

    def to_dict(self) -> dict:
        return {"kind": "tail", "side": self.side, "N": self.N,
                "magnitude_kind": self.magnitude_kind, "magnitude": self.magnitude,
                "threshold": self.threshold, "hits": self.hits, "n": self.n,
                "p_hat": self.p_hat, "ci": list(self.ci)}


@dataclass
class RateCurve:
    side: str
    N: int
    d: int
    zeta_grid: list[float]
    tails: list[TailEstimate]
    normalized: list[float]        # -log p_hat / N^d (upper) or / N (lower); inf when p_hat = 0
    reliable: list[bool]
    power_hat: float
    power_ci: tuple[float, float]
    informative: bool
    predicted_power: float | None = None

    def to_dict(self) -> dict:
        return {"kind": "rate_curve", "side": self.side, "N": self.N, "d": self.d,
                "zeta_grid": self.zeta_grid, "tails": [t.to_dict() for t in self.tails],
                "normalized": [_json_float(v) for v in self.normalized],
                "reliable": self.reliable, "power_hat": _json_float(self.power_hat),
                "power_ci": [_json_float(v) for v in self.power_ci],
                "informative": self.informative,
                "predicted_power": self.predicted_power,
                "predicted_power_note": "heuristic prediction, not checkable at small N"}

    def rows(self) -> list[dict]:
        return [{"zeta": z, "p_hat": t.p_hat, "ci_lo": t.ci[0], "ci_hi": t.ci[1],
                 "neg_log_p_normalized": v}
                for z, t, v in zip(self.zeta_grid, self.tails, self.normalized)]


@dataclass
class ExactDistribution:
    support: np.ndarray
    pmf: np.ndarray
    instance: dict

    @property
    def mean(self) -> float:
        return math.fsum(self.support * self.pmf)

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum((self.support - m) ** 2 * self.pmf)

    def prob_greater(self, t: float) -> float:
        return math.fsum(self.pmf[self.support > t])

    def prob_less(self, t: float) -> float:
        return math.fsum(self.pmf[self.support < t])

    def tail(self, side: str, t: float) -> float:
        return self.prob_greater(t) if side == "upper" else self.prob_less(t)

    def to_dict(self) -> dict:
        return {"kind": "exact_distribution", "instance": self.instance,
                "support": self.support.tolist(), "pmf": self.pmf.tolist(),
                "mean": self.mean, "variance": self.variance}


def _json_float(x: float):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return None if x is None or math.isnan(x) else ("inf" if x > 0 else "-inf")
    return float(x)


# ---------------------------------------------------------------------------
# sampling helpers


def _endpoint(u: Sequence[float], N: int) -> tuple[int, ...]:
    return floor_point(N * np.asarray(u, dtype=float))


def _check_direction(u: Sequence[float]) -> tuple[float, ...]:
    v = np.asarray(u, dtype=float)
    if not abs(np.linalg.norm(v) - 1.0) <= 1e-9:
        raise EstimationError(f"direction {tuple(v)} is not a unit vector")
    return tuple(float(c) for c in v)


def _check_scales(N_list: Sequence[int], need: int = 1) -> list[int]:
    N_list = [int(n) for n in N_list]
    if len(N_list) < need:
        raise EstimationError(f"need at least {need} scales, got {len(N_list)}")
    if any(n < 1 for n in N_list) or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise EstimationError("scales must be positive and strictly increasing")
    return N_list


def _resolve_region(region, N: int) -> Region:
    if region is None:
        return Everything()
    if callable(region) and not isinstance(region, Region):
        return region(N)
    return region


def sample_times(field: WeightField, x, y, n: int, tag: str, *parts,
                 region: Region | None = None, workers: int = 1,
                 budget: int | None = None) -> np.ndarray:
    """n independent replicas of T_region(x, y), drawn from a named substream."""
    reps = replicas_for(tag, tuple(x), tuple(y), *parts, n=n)
    return batch_point_times(field, reps, x, y, region=region, bidirectional=True,
                             budget=budget, workers=workers)


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def _sample_var(values) -> float:
    m = _mean(values)
    return math.fsum((np.asarray(values) - m) ** 2) / (len(values) - 1)


# ---------------------------------------------------------------------------
# regression


def fit_line(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Ordinary least squares y ~ slope * x + intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or len(x) != len(y):
        raise EstimationError("need at least two regression points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise EstimationError("regression points must be finite")
    mx, my = _mean(x), _mean(y)
    sxx = math.fsum((x - mx) ** 2)
    if sxx == 0:
        raise EstimationError("regression abscissae are all equal")
    slope = math.fsum((x - mx) * (y - my)) / sxx
    return slope, my - slope * mx


def fit_exponent(scales: Sequence[float], values: Sequence[float],
                 halve: bool = False) -> tuple[float, float]:
    """Slope of log(values) against log(scales); halved for variance exponents."""
    slope, icpt = fit_line(np.log(np.asarray(scales, float)),
                           np.log(np.asarray(values, float)))
    return (slope / 2 if halve else slope), icpt


def _percentile_ci(hat: float, boots: np.ndarray) -> tuple[float, float]:
    boots = boots[np.isfinite(boots)]
    if len(boots) == 0:
        return hat, hat
    lo, hi = np.percentile(boots, [2.5, 97.5])
    # percentile intervals need not contain the point estimate; widen to it
    return float(min(lo, hat)), float(max(hi, hat))


def exponent_from_samples(statistic: str, N_list: Sequence[int],
                          samples: Sequence[np.ndarray], stat: Callable[[np.ndarray], float],
                          halve: bool, rng: np.random.Generator,
                          resamples: int = BOOTSTRAP_RESAMPLES) -> ExponentEstimate:
    """Power-law exponent of a per-scale statistic with a bootstrap interval."""
    values = [stat(np.asarray(s)) for s in samples]
    log_N = [math.log(n) for n in N_list]
    if any(not v > 0 for v in values):
        return ExponentEstimate(statistic, math.nan, math.nan, math.nan, log_N,
                                [], math.nan, math.nan, True,
                                f"{statistic} vanishes at some scale; no power law to fit",
                                [float(v) for v in values])
    slope, icpt = fit_exponent(N_list, values, halve)
    boots = np.empty(resamples)
    for b in range(resamples):
        vals = []
        for s in samples:
            s = np.asarray(s)
            vals.append(stat(s[rng.integers(0, len(s), len(s))]))
        boots[b] = fit_exponent(N_list, vals, halve)[0] if all(v > 0 for v in vals) else np.nan
    lo, hi = _percentile_ci(slope, boots)
    return ExponentEstimate(statistic, slope, lo, hi, log_N,
                            [math.log(v) for v in values], slope, icpt, False, "",
                            [float(v) for v in values])


# ---------------------------------------------------------------------------
# time constant and exponents


def estimate_time_constant(field: WeightField, u: Sequence[float], N_list: Sequence[int],
                           n_samples: int, workers: int = 1,
                           region=None, budget: int | None = None) -> TimeConstantEstimate:
    """Per-scale means of T(0, Nu)/N; mu_hat is the mean at the largest scale."""
    u = _check_direction(u)
    N_list = _check_scales(N_list)
    if n_samples < 2:
        raise EstimationError("need at least two samples per scale")
    origin = (0,) * field.d
    means, errs, samples = [], [], []
    for N in N_list:
        y = _endpoint(u, N)
        t = sample_times(field, origin, y, n_samples, "mu", N,
                         region=_resolve_region(region, N), workers=workers, budget=budget)
        samples.append(t)
        means.append(_mean(t) / N)
        errs.append(math.sqrt(_sample_var(t) / n_samples) / N)
    mu = means[-1]
    half = Z95 * errs[-1]
    nonrandom = [_mean(t) - N * mu for t, N in zip(samples, N_list)]
    return TimeConstantEstimate(u, N_list, means, errs, [n_samples] * len(N_list), mu,
                                (mu - half, mu + half), nonrandom, samples)


def estimate_fluctuation_exponent(field: WeightField, u: Sequence[float],
                                  N_list: Sequence[int], n_samples: int,
                                  workers: int = 1, region=None,
                                  budget: int | None = None) -> ExponentEstimate:
    """Half the slope of log Var T(0, Nu) against log N."""
    u = _check_direction(u)
    N_list = _check_scales(N_list, 3)
    if n_samples < 30:
        raise EstimationError("need at least 30 samples per scale")
    origin = (0,) * field.d
    samples = [sample_times(field, origin, _endpoint(u, N), n_samples, "chi", N,
                            region=_resolve_region(region, N), workers=workers,
                            budget=budget)
               for N in N_list]
    return exponent_from_samples("variance", N_list, samples, _sample_var, True,
                                 derived_rng(field, "chi", tuple(N_list), n_samples))


def geodesic_deviations(field: WeightField, u: Sequence[float], N: int, n: int,
                        frame: Frame | None = None, region=None, workers: int = 1,
                        budget: int | None = None) -> np.ndarray:
    """Max transversal deviation of the tie-broken geodesic 0 -> Nu, per replica."""
    u = _check_direction(u)
    origin = (0,) * field.d
    y = _endpoint(u, N)
    reg = _resolve_region(region, N)
    reps = replicas_for("xi", N, n=n)

    def one(r):
        f = WeightField(field.dist, field.d, field.seed, int(r), field.plants)
        path = passage_time(QuerySpec(f, [origin], [y], reg, budget)).path
        return max_transversal_deviation(path, frame, origin, u)

    if workers <= 1:
        return np.array([one(r) for r in reps])
    with ThreadPoolExecutor(workers) as ex:
        return np.array(list(ex.map(one, reps)))


def estimate_wandering_exponent(field: WeightField, u: Sequence[float],
                                N_list: Sequence[int], n_samples: int,
                                workers: int = 1, region=None,
                                budget: int | None = None) -> ExponentEstimate:
    """Slope of log E[max transversal deviation] against log N."""
    N_list = _check_scales(N_list, 3)
    if n_samples < 2:
        raise EstimationError("need at least two samples per scale")
    samples = [geodesic_deviations(field, u, N, n_samples, region=region,
                                   workers=workers, budget=budget) for N in N_list]
    return exponent_from_samples("mean_deviation", N_list, samples, _mean, False,
                                 derived_rng(field, "xi", tuple(N_list), n_samples))


def _mu_value(mu_hat) -> float:
    if mu_hat is None:
        raise EstimationError("a time-constant estimate mu_hat is required")
    if isinstance(mu_hat, TimeConstantEstimate):
        return mu_hat.mu_hat
    return float(mu_hat)


def restricted_cylinder(frame: Frame, u: Sequence[float], N: int, chi_probe: float) -> Cylinder:
    """Cyl_0(R, N^{(1+chi_probe)/2}) around the ray through u."""
    d = frame.d
    return Cylinder((0.0,) * d, frame, tuple(float(c) for c in u), None,
                    float(N) ** ((1 + chi_probe) / 2))


def estimate_restricted_mean_excess(field: WeightField, u: Sequence[float], chi_probe: float,
                                    N_list: Sequence[int], n_samples: int, mu_hat,
                                    workers: int = 1, frame: Frame | None = None,
                                    budget: int | None = None) -> ExponentEstimate:
    """Slope of log E[(T_cyl(0, Nu) - N mu_hat)_+] against log N."""
    mu = _mu_value(mu_hat)
    u = _check_direction(u)
    N_list = _check_scales(N_list, 2)
    frame = frame or make_frame(u)
    origin = (0,) * field.d
    samples = []
    for N in N_list:
        t = sample_times(field, origin, _endpoint(u, N), n_samples, "chi_u", N,
                         region=restricted_cylinder(frame, u, N, chi_probe),
                         workers=workers, budget=budget)
        samples.append(np.maximum(t - N * mu, 0.0))
    return exponent_from_samples("mean_excess", N_list, samples, _mean, False,
                                 derived_rng(field, "chi_u", tuple(N_list), n_samples))


# ---------------------------------------------------------------------------
# tails


def wilson_interval(hits: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise EstimationError("need at least one sample")
    if not 0 <= hits <= n:
        raise EstimationError(f"hits={hits} outside [0, {n}]")
    p = hits / n
    z2 = z * z
    denom = 1 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    # the endpoints are exactly 0 / 1 at the boundary; avoid rounding residue
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == n else min(1.0, center + half)
    return lo, hi


def count_exceedances(times: np.ndarray, side: str, threshold: float) -> int:
    if side == "upper":
        return int(np.count_nonzero(times > threshold))
    if side == "lower":
        return int(np.count_nonzero(times < threshold))
    raise EstimationError(f"side must be 'upper' or 'lower', got {side!r}")


def tail_from_times(times: np.ndarray, side: str, threshold: float, N: int,
                    magnitude_kind: str = "threshold", magnitude: float = math.nan) -> TailEstimate:
    n = len(times)
    hits = count_exceedances(times, side, threshold)
    return TailEstimate(side, N, magnitude_kind, magnitude, threshold, hits, n,
                        hits / n, wilson_interval(hits, n))


def tail_threshold(side: str, N: int, mu: float, magnitude: float, kind: str = "a") -> float:
    """N mu +- N^a (kind "a") or N mu +- zeta N (kind "zeta")."""
    if kind == "a":
        shift = float(N) ** magnitude
    elif kind == "zeta":
        shift = magnitude * N
    else:
        raise EstimationError(f"magnitude kind must be 'a' or 'zeta', got {kind!r}")
    if side == "upper":
        return N * mu + shift
    if side == "lower":
        return N * mu - shift
    raise EstimationError(f"side must be 'upper' or 'lower', got {side!r}")


def tail_probability_at(field: WeightField, x, y, side: str, threshold: float, n: int,
                        region: Region | None = None, workers: int = 1,
                        budget: int | None = None, tag: str = "tail") -> TailEstimate:
    """Frequency of T_region(x, y) beyond an explicit threshold."""
    if n < 1:
        raise EstimationError("need at least one sample")
    times = sample_times(field, tuple(x), tuple(y), n, tag, side, region=region,
                         workers=workers, budget=budget)
    N = int(np.abs(np.asarray(y) - np.asarray(x)).sum())
    return tail_from_times(times, side, threshold, N)


def estimate_tail_probability(field: WeightField, u: Sequence[float], N: int, side: str,
                              magnitude: float, mu_hat, n_samples: int, kind: str = "a",
                              workers: int = 1, region=None,
                              budget: int | None = None) -> TailEstimate:
    mu = _mu_value(mu_hat)
    u = _check_direction(u)
    if n_samples < 1:
        raise EstimationError("need at least one sample")
    thr = tail_threshold(side, N, mu, magnitude, kind)
    times = sample_times(field, (0,) * field.d, _endpoint(u, N), n_samples, "tail", N,
                         region=_resolve_region(region, N), workers=workers, budget=budget)
    return tail_from_times(times, side, thr, N, kind, magnitude)


def two_sided_exceedances(times: np.ndarray, k: float = 2.0) -> tuple[int, int]:
    """Counts above mean + k sd and below mean - k sd of the sample itself."""
    m = _mean(times)
    sd = math.sqrt(_sample_var(times))
    return (int(np.count_nonzero(times > m + k * sd)),
            int(np.count_nonzero(times < m - k * sd)))


def rate_normalizer(side: str, N: int, d: int) -> float:
    return float(N) ** d if side == "upper" else float(N)


def normalized_rate(p: float, side: str, N: int, d: int) -> float:
    if p <= 0:
        return math.inf
    return -math.log(p) / rate_normalizer(side, N, d)


def _rate_fit(zetas, tails, side, N, d, min_hits):
    use = [i for i, t in enumerate(tails) if t.hits >= min_hits and 0 < t.p_hat < 1]
    if len(use) < 2:
        return use, math.nan
    z = [zetas[i] for i in use]
    r = [normalized_rate(tails[i].p_hat, side, N, d) for i in use]
    if not all(v > 0 for v in r):
        return use, math.nan
    return use, fit_exponent(z, r)[0]


def estimate_rate_curve(field: WeightField, u: Sequence[float], N: int, side: str,
                        zeta_grid: Sequence[float], mu_hat, n_samples: int,
                        workers: int = 1, region=None, min_hits: int = 10,
                        chi_reference: float = 1 / 3,
                        budget: int | None = None) -> RateCurve:
    """Tail frequencies over a zeta grid from one shared sample set."""
    mu = _mu_value(mu_hat)
    u = _check_direction(u)
    zetas = [float(z) for z in zeta_grid]
    if not zetas or any(not z > 0 for z in zetas) or any(b <= a for a, b in zip(zetas, zetas[1:])):
        raise EstimationError("zeta grid must be positive and strictly increasing")
    times = sample_times(field, (0,) * field.d, _endpoint(u, N), n_samples, "rate", N,
                         region=_resolve_region(region, N), workers=workers, budget=budget)
    d = field.d

    def curve(ts):
        return [tail_from_times(ts, side, tail_threshold(side, N, mu, z, "zeta"), N, "zeta", z)
                for z in zetas]

    tails = curve(times)
    informative = any(t.hits > 0 for t in tails)
    use, power = _rate_fit(zetas, tails, side, N, d, min_hits)
    ci = (math.nan, math.nan)
    if math.isfinite(power):
        rng = derived_rng(field, "rate", N, side, tuple(zetas), n_samples)
        boots = np.empty(BOOTSTRAP_RESAMPLES)
        for b in range(BOOTSTRAP_RESAMPLES):
            ts = times[rng.integers(0, len(times), len(times))]
            boots[b] = _rate_fit(zetas, curve(ts), side, N, d, min_hits)[1]
        ci = _percentile_ci(power, boots)
    predicted = d / (1 - chi_reference) if side == "upper" else 1 / (1 - chi_reference)
    return RateCurve(side, N, d, zetas, tails,
                     [normalized_rate(t.p_hat, side, N, d) for t in tails],
                     [i in use for i in range(len(zetas))], power, ci, informative,
                     predicted)


def exact_rate_curve(dist: ExactDistribution, side: str, N: int, d: int,
                     thresholds: Sequence[float]) -> list[float]:
    """Normalized -log P(T beyond threshold) straight from an exact pmf."""
    return [normalized_rate(dist.tail(side, t), side, N, d) for t in thresholds]


# ---------------------------------------------------------------------------
# exact enumeration


def exact_tail_distribution(shape: Sequence[int], law: TwoPoint, source=None, target=None,
                            chunk: int = 1 << 18) -> ExactDistribution:
    """Exact law of the box-restricted T(source, target) under i.i.d. two-point weights.

    Enumerates every assignment of the box's edges. Coordinates are local to
    the box {0..shape_k - 1}; defaults are opposite corners.
    """
    shape = tuple(int(s) for s in shape)
    if not isinstance(law, TwoPoint):
        raise EstimationError("exact enumeration needs a two-point law")
    # no field is built here, so the endpoint cases p in {0, 1} are allowed
    if not 0.0 <= law.p <= 1.0 or min(law.w0, law.w1) < 0:
        raise EstimationError(f"invalid two-point law {law}")
    source = tuple(source) if source is not None else (0,) * len(shape)
    target = tuple(target) if target is not None else tuple(s - 1 for s in shape)
    edges = box_edges(shape)
    m = len(edges)
    if m > EXACT_EDGE_CAP:
        raise EstimationError(f"instance too large: {m} edges > {EXACT_EDGE_CAP}")
    instance = {"shape": list(shape), "source": list(source), "target": list(target),
                "law": law.to_dict(), "edges": m}
    if source == target:
        return ExactDistribution(np.array([0.0]), np.array([1.0]), instance)
    paths = [path_edge_indices(p, shape) for p in simple_paths(shape, source, target)]
    if not paths:
        raise EstimationError("source and target are not connected in the box")
    w0, w1, p = float(law.w0), float(law.w1), float(law.p)
    bit = np.arange(m, dtype=np.int64)
    acc: dict[tuple[float, int], int] = {}
    for start in range(0, 1 << m, chunk):
        cfg = np.arange(start, min(start + chunk, 1 << m), dtype=np.int64)
        on = ((cfg[:, None] >> bit[None, :]) & 1).astype(bool)
        w = np.where(on, w1, w0)
        best = np.full(len(cfg), np.inf)
        for path in paths:
            t = np.zeros(len(cfg))
            for e in path:
                t = t + w[:, e]          # left fold in path order
            np.minimum(best, t, out=best)
        k = on.sum(axis=1)
        keys, counts = np.unique(np.stack([best, k.astype(float)], axis=1), axis=0,
                                 return_counts=True)
        for (tv, kv), c in zip(keys, counts):
            acc[(float(tv), int(kv))] = acc.get((float(tv), int(kv)), 0) + int(c)
    support = sorted({tv for tv, _ in acc})
    pmf = []
    for tv in support:
        pmf.append(math.fsum(c * p**kv * (1 - p) ** (m - kv)
                             for (t2, kv), c in acc.items() if t2 == tv))
    keep = [i for i, q in enumerate(pmf) if q > 0]      # p in {0, 1} leaves empty atoms
    return ExactDistribution(np.array([support[i] for i in keep]),
                             np.array([pmf[i] for i in keep]), instance)
