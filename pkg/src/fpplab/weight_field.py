"""Stateless random environments: i.i.d. bounded edge weights on Z^d.

A weight is a pure function of (seed, replica, edge). Nothing is stored, so
a search can touch arbitrarily many edges and revisit them in any order and
still see the same environment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels


class DistributionError(ValueError):
    """A weight distribution violates the admissible bounds."""


class DimensionError(ValueError):
    """Point or edge dimension does not match the field."""


def weight_cap(d: int) -> float:
    """Largest admissible weight in dimension d, 1/(4 d^2)."""
    if d < 2:
        raise DimensionError(f"dimension must be at least 2, got {d}")
    return 1.0 / (4 * d * d)


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Constant:
    c: float
    kind = "constant"

    @property
    def mean(self) -> float:
        return self.c

    @property
    def variance(self) -> float:
        return 0.0

    @property
    def low(self) -> float:
        return self.c

    @property
    def high(self) -> float:
        return self.c

    def kernel_params(self):
        return _kernels.KIND_CONSTANT, float(self.c), 0.0, 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float
    kind = "uniform"

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    @property
    def low(self) -> float:
        return self.lo

    @property
    def high(self) -> float:
        return self.hi

    def kernel_params(self):
        return _kernels.KIND_UNIFORM, float(self.lo), float(self.hi), 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TwoPoint:
    """Weight w1 with probability p, otherwise w0."""

    w0: float
    w1: float
    p: float
    kind = "two_point"

    @property
    def mean(self) -> float:
        return (1.0 - self.p) * self.w0 + self.p * self.w1

    @property
    def variance(self) -> float:
        return self.p * (1.0 - self.p) * (self.w1 - self.w0) ** 2

    @property
    def low(self) -> float:
        return min(self.w0, self.w1)

    @property
    def high(self) -> float:
        return max(self.w0, self.w1)

    def kernel_params(self):
        return _kernels.KIND_TWO_POINT, float(self.w0), float(self.w1), float(self.p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "w0": self.w0, "w1": self.w1, "p": self.p}


@dataclass(frozen=True)
class TruncatedExponential:
    """Exponential(rate) conditioned on being at most ``cap``."""

    rate: float
    cap: float
    kind = "truncated_exponential"

    @property
    def _mass(self) -> float:
        return -math.expm1(-self.rate * self.cap)

    @property
    def mean(self) -> float:
        lam, c = self.rate, self.cap
        return 1.0 / lam - c * math.exp(-lam * c) / self._mass

    @property
    def variance(self) -> float:
        lam, c = self.rate, self.cap
        second = (2.0 / lam**2 - math.exp(-lam * c) * (c * c + 2 * c / lam + 2 / lam**2)) / self._mass
        return second - self.mean**2

    @property
    def low(self) -> float:
        return 0.0

    @property
    def high(self) -> float:
        return self.cap

    def kernel_params(self):
        return _kernels.KIND_TRUNC_EXP, float(self.rate), float(self.cap), self._mass

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rate": self.rate, "cap": self.cap}


Distribution = Constant | Uniform | TwoPoint | TruncatedExponential

_KINDS = {
    "constant": (Constant, ("c",)),
    "uniform": (Uniform, ("lo", "hi")),
    "two_point": (TwoPoint, ("w0", "w1", "p")),
    "truncated_exponential": (TruncatedExponential, ("rate", "cap")),
}


def distribution_from_dict(data: dict) -> Distribution:
    """Inverse of ``to_dict``; rejects unknown kinds and stray keys."""
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in _KINDS:
        raise DistributionError(f"unknown distribution kind {kind!r}")
    cls, names = _KINDS[kind]
    extra = set(data) - set(names)
    missing = set(names) - set(data)
    if extra or missing:
        raise DistributionError(
            f"{kind} takes parameters {list(names)}; "
            f"unexpected {sorted(extra)}, missing {sorted(missing)}")
    return cls(*(float(data[n]) for n in names))


def validate_distribution(dist: Distribution, d: int) -> None:
    """Raise DistributionError unless ``dist`` is admissible in dimension d.

    Admissible means: support inside [0, 1/(4 d^2)] and no atom at zero.
    """
    cap = weight_cap(d)
    values = [float(v) for v in dist.to_dict().values() if not isinstance(v, str)]
    if not all(math.isfinite(v) for v in values):
        raise DistributionError(f"non-finite parameter in {dist}")
    if isinstance(dist, Constant):
        if dist.c <= 0:
            raise DistributionError(f"zero atom: constant weight {dist.c} is not positive")
        if dist.c > cap:
            raise DistributionError(f"cap exceeds w_max: {dist.c} > {cap} for d={d}")
    elif isinstance(dist, Uniform):
        if dist.lo > dist.hi:
            raise DistributionError(f"lo > hi: {dist.lo} > {dist.hi}")
        if dist.lo < 0:
            raise DistributionError(f"negative support: lo={dist.lo}")
        if dist.hi <= 0:
            raise DistributionError("zero atom: uniform law concentrated at 0")
        if dist.hi > cap:
            raise DistributionError(f"cap exceeds w_max: hi={dist.hi} > {cap} for d={d}")
    elif isinstance(dist, TwoPoint):
        if not 0.0 < dist.p < 1.0:
            raise DistributionError(f"p outside (0,1): p={dist.p}")
        for name, w in (("w0", dist.w0), ("w1", dist.w1)):
            if w < 0:
                raise DistributionError(f"negative support: {name}={w}")
            if w == 0:
                raise DistributionError(f"zero atom: {name}=0 carries positive mass")
            if w > cap:
                raise DistributionError(f"cap exceeds w_max: {name}={w} > {cap} for d={d}")
    elif isinstance(dist, TruncatedExponential):
        if dist.rate <= 0:
            raise DistributionError(f"rate must be positive, got {dist.rate}")
        if dist.cap <= 0:
            raise DistributionError(f"cap must be positive, got {dist.cap}")
        if dist.cap > cap:
            raise DistributionError(f"cap exceeds w_max: cap={dist.cap} > {cap} for d={d}")
    else:
        raise DistributionError(f"unsupported distribution {dist!r}")


# ---------------------------------------------------------------------------
# edges


@dataclass(frozen=True)
class Edge:
    """Nearest-neighbour edge stored as (lower endpoint, axis)."""

    low: tuple[int, ...]
    axis: int

    @property
    def a(self) -> tuple[int, ...]:
        return self.low

    @property
    def b(self) -> tuple[int, ...]:
        hi = list(self.low)
        hi[self.axis] += 1
        return tuple(hi)

    @property
    def d(self) -> int:
        return len(self.low)


def canonical_edge(x: Sequence[int], y: Sequence[int]) -> Edge:
    """Edge between two adjacent lattice points, in either order."""
    if len(x) != len(y):
        raise DimensionError(f"endpoints have dimensions {len(x)} and {len(y)}")
    x = tuple(int(c) for c in x)
    y = tuple(int(c) for c in y)
    diff = [j for j in range(len(x)) if x[j] != y[j]]
    if len(diff) != 1 or abs(x[diff[0]] - y[diff[0]]) != 1:
        raise ValueError(f"{x} and {y} are not lattice neighbours")
    return Edge(min(x, y), diff[0])


# ---------------------------------------------------------------------------
# the field


@dataclass(frozen=True)
class Plant:
    """Deterministic override: every edge whose lower endpoint lies in the
    box ``lo..hi`` (inclusive) and, if ``axis`` is set, points along that
    axis, gets weight ``value``. Used to build fixtures such as walls or
    cheap channels on top of a random background.
    """

    lo: tuple[int, ...]
    hi: tuple[int, ...]
    value: float
    axis: int | None = None

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "value": self.value,
                "axis": self.axis}


@dataclass(frozen=True)
class WeightField:
    """Environment keyed by (seed, replica); immutable and thread-safe."""

    dist: Distribution
    d: int = 2
    seed: int = 0
    replica: int = 0
    plants: tuple[Plant, ...] = ()
    w_max: float = dc_field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "w_max", weight_cap(self.d))
        validate_distribution(self.dist, self.d)
        object.__setattr__(self, "plants", tuple(self.plants))
        for pl in self.plants:
            if len(pl.lo) != self.d or len(pl.hi) != self.d:
                raise DimensionError("plant box has the wrong dimension")
            if any(a > b for a, b in zip(pl.lo, pl.hi)):
                raise DistributionError("plant box has lo > hi")
            if not 0.0 < pl.value <= self.w_max:
                raise DistributionError(
                    f"planted weight {pl.value} outside (0, w_max]")
            if pl.axis is not None and not 0 <= pl.axis < self.d:
                raise DimensionError("plant axis out of range")
        if self.replica < 0:
            raise ValueError(f"replica must be non-negative, got {self.replica}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def key(self) -> int:
        return _kernels.field_key(self.seed, self.replica)

    @property
    def mults(self) -> np.ndarray:
        return _multipliers(self.d)

    @property
    def plant_table(self) -> np.ndarray:
        d = self.d
        table = np.zeros((len(self.plants), 2 * d + 2), dtype=np.float64)
        for i, pl in enumerate(self.plants):
            table[i, :d] = pl.lo
            table[i, d:2 * d] = pl.hi
            table[i, 2 * d] = -1 if pl.axis is None else pl.axis
            table[i, 2 * d + 1] = pl.value
        return table

    def kernel_args(self):
        """(key, multipliers, kind, p0, p1, p2, plants) for the kernels."""
        kind, p0, p1, p2 = self.dist.kernel_params()
        return self.key, self.mults, kind, p0, p1, p2, self.plant_table

    def weights(self, lows: np.ndarray, axes: np.ndarray) -> np.ndarray:
        """Weights of many edges given their lower endpoints and axes."""
        lows = np.ascontiguousarray(lows, dtype=np.int64)
        axes = np.ascontiguousarray(axes, dtype=np.int64)
        if lows.ndim != 2 or lows.shape[1] != self.d:
            raise DimensionError(f"expected an (m, {self.d}) array of endpoints")
        if axes.size and (axes.min() < 0 or axes.max() >= self.d):
            raise DimensionError("axis index out of range")
        return _kernels.weights_for_edges(*self.kernel_args(), lows, axes)

    def uniforms(self, lows: np.ndarray, axes: np.ndarray) -> np.ndarray:
        lows = np.ascontiguousarray(lows, dtype=np.int64)
        axes = np.ascontiguousarray(axes, dtype=np.int64)
        return _kernels.uniforms_for_edges(self.key, self.mults, lows, axes)

    def to_dict(self) -> dict:
        out = {"d": self.d, "seed": self.seed, "replica": self.replica,
               "dist": self.dist.to_dict()}
        if self.plants:
            out["plants"] = [pl.to_dict() for pl in self.plants]
        return out


_MULT_CACHE: dict[int, np.ndarray] = {}


def _multipliers(d: int) -> np.ndarray:
    m = _MULT_CACHE.get(d)
    if m is None:
        m = _kernels.coordinate_multipliers(d)
        m.setflags(write=False)
        _MULT_CACHE[d] = m
    return m


def sample_weight(field: WeightField, e: Edge | tuple) -> float:
    """Weight of one edge; ``e`` may be an Edge or a pair of endpoints."""
    if not isinstance(e, Edge):
        e = canonical_edge(*e)
    if e.d != field.d:
        raise DimensionError(f"edge of dimension {e.d} in a {field.d}-dimensional field")
    lows = np.array([e.low], dtype=np.int64)
    return float(field.weights(lows, np.array([e.axis], dtype=np.int64))[0])


def reseed(field: WeightField, replica: int) -> WeightField:
    """Same law and seed, different substream. Replicas are absolute."""
    if replica < 0:
        raise ValueError(f"replica must be non-negative, got {replica}")
    return WeightField(field.dist, field.d, field.seed, replica, field.plants)


def with_plants(field: WeightField, *plants: Plant) -> WeightField:
    """Copy of ``field`` with extra overrides appended (later ones win)."""
    return WeightField(field.dist, field.d, field.seed, field.replica,
                       field.plants + tuple(plants))


def path_edges(path: Iterable[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Lower endpoints and axes of the consecutive edges of a lattice path."""
    pts = np.asarray(list(path), dtype=np.int64)
    if len(pts) < 2:
        return np.zeros((0, pts.shape[1] if pts.ndim == 2 else 0), np.int64), np.zeros(0, np.int64)
    step = pts[1:] - pts[:-1]
    if np.any(np.abs(step).sum(axis=1) != 1):
        raise ValueError("consecutive path vertices must be lattice neighbours")
    axes = np.argmax(np.abs(step), axis=1)
    lows = np.minimum(pts[1:], pts[:-1])
    return lows, axes.astype(np.int64)


def path_weights(field: WeightField, path: Sequence[Sequence[int]]) -> np.ndarray:
    lows, axes = path_edges(path)
    return field.weights(lows, axes)


def running_sum(values: Iterable[float]) -> float:
    """Left-to-right float accumulation, the order searches use."""
    total = 0.0
    for v in values:
        total += float(v)
    return total
