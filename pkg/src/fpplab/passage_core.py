"""Region-restricted passage times and geodesics on the weighted lattice.

Queries run a compiled Dijkstra over a dense rectangular window of Z^d.
The window starts around the query and is enlarged whenever the search
reaches an edge of it that is not also an edge of the region, so results do
not depend on the initial window guess.
"""
from __future__ import annotations

import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .lattice_geom import (Everything, Frame, Region, floor_points, hyperplane_cells,
                           hyperplane_points, transversal_distance)
from .weight_field import WeightField, path_weights, running_sum


class PassageError(RuntimeError):
    """Base class for failed queries."""


class Disconnected(PassageError):
    """No admissible path joins the source set to the target set."""


class BudgetExhausted(PassageError):
    """The expansion budget ran out; the passage time is unknown."""


class QueryError(ValueError):
    """Malformed query (empty sets, dimension mismatch, ...)."""


NO_BUDGET = 2**62


@dataclass(frozen=True)
class Hyperplane:
    """Lattice points whose unit cell meets {x : normal . x = level}."""

    normal: tuple[float, ...]
    level: float

    @classmethod
    def through(cls, frame: Frame, point: Sequence[float]) -> "Hyperplane":
        """Hyperplane parallel to the frame's tangent plane through ``point``."""
        return cls(tuple(float(c) for c in frame.normal), float(frame.normal @ np.asarray(point, float)))


@dataclass(frozen=True)
class QuerySpec:
    field: WeightField
    source: object
    target: object
    region: Region = dc_field(default_factory=Everything)
    budget: int | None = None


@dataclass(frozen=True)
class PassageResult:
    time: float
    path: tuple[tuple[int, ...], ...]
    nodes_expanded: int
    src_hit: tuple[int, ...]
    dst_hit: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"time": self.time, "path": [list(p) for p in self.path],
                "nodes_expanded": self.nodes_expanded,
                "src_hit": list(self.src_hit), "dst_hit": list(self.dst_hit)}


# ---------------------------------------------------------------------------
# work arrays, one set per thread


class _Work:
    def __init__(self):
        self.n = 0
        self.pool = 0
        self.heap = 0
        self.bhead = np.empty(K.RING, dtype=np.int64)

    def ensure(self, n: int, pool: int, heap: int):
        if n > self.n:
            n = max(n, int(self.n * 1.5))
            self.dist = np.full(n, np.inf)
            self.pred = np.full(n, -1, dtype=np.int64)
            self.state = np.zeros(n, dtype=np.uint8)
            self.touched = np.empty(n, dtype=np.int64)
            self.path_buf = np.empty(n, dtype=np.int64)
            self.n = n
        if pool > self.pool:
            self.ek = np.empty(pool, dtype=np.float64)
            self.ev = np.empty(pool, dtype=np.int64)
            self.enext = np.empty(pool, dtype=np.int64)
            self.pool = pool
        if heap > self.heap:
            self.hk = np.empty(heap, dtype=np.float64)
            self.hv = np.empty(heap, dtype=np.int64)
            self.heap = heap
        return self


_tls = threading.local()


def _work() -> _Work:
    w = getattr(_tls, "work", None)
    if w is None:
        w = _tls.work = _Work()
    return w


# ---------------------------------------------------------------------------
# windows


@dataclass
class _Window:
    lo: np.ndarray
    shape: np.ndarray
    strides: np.ndarray
    closed_lo: np.ndarray
    closed_hi: np.ndarray
    mask: np.ndarray
    use_mask: bool

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        rel = pts - self.lo
        return np.all((rel >= 0) & (rel < self.shape), axis=1)

    def ids(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.lo) @ self.strides

    def coords(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        out = np.empty((ids.size, self.lo.size), dtype=np.int64)
        rem = ids.copy()
        for k in range(self.lo.size):
            q = rem // self.strides[k]
            rem -= q * self.strides[k]
            out[:, k] = self.lo[k] + q
        return out

    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.size, dtype=np.int64))


def _region_bounds(region: Region, d: int):
    lo, hi = region.bounds(d)
    for k in range(d):
        if lo[k] is not None and hi[k] is not None and lo[k] > hi[k]:
            raise Disconnected("the region contains no lattice point")
    return lo, hi


def _make_window(region: Region, d: int, core_lo, core_hi, pad: int) -> _Window:
    rlo, rhi = _region_bounds(region, d)
    lo = np.array(core_lo, dtype=np.int64) - pad
    hi = np.array(core_hi, dtype=np.int64) + pad
    closed_lo = np.zeros(d, dtype=np.bool_)
    closed_hi = np.zeros(d, dtype=np.bool_)
    for k in range(d):
        if rlo[k] is not None and lo[k] <= rlo[k]:
            lo[k] = rlo[k]
            closed_lo[k] = True
        if rhi[k] is not None and hi[k] >= rhi[k]:
            hi[k] = rhi[k]
            closed_hi[k] = True
    shape = hi - lo + 1
    if np.any(shape <= 0):
        raise Disconnected("query lies outside the region")
    strides = np.ones(d, dtype=np.int64)
    for k in range(d - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    if int(np.prod(shape)) > 2**31:
        raise PassageError(f"search window of shape {tuple(shape)} is too large")
    win = _Window(lo, shape, strides, closed_lo, closed_hi,
                  np.ones(1, dtype=np.uint8), False)
    if not isinstance(region, Everything):
        win.mask = region.contains_many(win.all_coords()).astype(np.uint8)
        win.use_mask = True
    return win


def _inv_delta(field: WeightField) -> float:
    return (K.RING - 4) / field.w_max


# ---------------------------------------------------------------------------
# point sets


def _as_points(obj, d: int) -> np.ndarray:
    pts = np.asarray(obj)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != d:
        raise QueryError(f"expected points of dimension {d}")
    if pts.dtype.kind in "iu":
        return pts.astype(np.int64)
    return floor_points(pts)


def _filter_region(pts: np.ndarray, region: Region) -> np.ndarray:
    """Floor first, then keep the images that lie in the region."""
    if isinstance(region, Everything) or len(pts) == 0:
        return pts
    return pts[region.contains_many(pts)]


def _hyperplane_sources(h: Hyperplane, region: Region, d: int) -> np.ndarray:
    lo, hi = _region_bounds(region, d)
    if any(c is None for c in lo + hi):
        raise QueryError("a hyperplane source needs a bounded region")
    return hyperplane_points(h.normal, h.level, lo, hi)


def _resolve_sources(obj, region: Region, d: int) -> np.ndarray:
    if isinstance(obj, Hyperplane):
        pts = _hyperplane_sources(obj, region, d)
    else:
        pts = _as_points(obj, d)
    pts = _filter_region(pts, region)
    if len(pts) == 0:
        raise QueryError("source set does not meet the region")
    return np.unique(pts, axis=0)


def _resolve_targets(obj, region: Region, d: int):
    if isinstance(obj, Hyperplane):
        return obj
    pts = _filter_region(_as_points(obj, d), region)
    if len(pts) == 0:
        raise QueryError("target set does not meet the region")
    return np.unique(pts, axis=0)


def _gap(sources: np.ndarray, targets) -> float:
    """A cheap l1-type separation between the sets, used to size windows."""
    if isinstance(targets, Hyperplane):
        n = np.asarray(targets.normal, float)
        return float(np.max(np.abs(sources @ n - targets.level)) / np.max(np.abs(n)))
    slo, shi = sources.min(axis=0), sources.max(axis=0)
    tlo, thi = targets.min(axis=0), targets.max(axis=0)
    return float(np.maximum(0, np.maximum(tlo - shi, slo - thi)).sum())


# ---------------------------------------------------------------------------
# the generic search


@dataclass
class _SearchOutcome:
    status: int
    hit: int
    settled: int
    window: _Window
    dist: np.ndarray | None = None
    path_ids: np.ndarray | None = None
    target_ids: np.ndarray | None = None
    target_dist: np.ndarray | None = None
    time: float = math.nan


def _target_flags(win: _Window, targets) -> tuple[np.ndarray, np.ndarray | None]:
    flag = np.zeros(win.size, dtype=np.uint8)
    if isinstance(targets, Hyperplane):
        inside = hyperplane_cells(win.all_coords(), np.asarray(targets.normal, float),
                                  targets.level)
        if win.use_mask:
            inside &= win.mask.astype(bool)
        flag[inside] = 1
        return flag, None
    sel = win.contains(targets)
    ids = win.ids(targets[sel])
    flag[ids] = 1
    return flag, ids


def _search(field: WeightField, region: Region, sources: np.ndarray, targets,
            stop_first: bool, budget: int | None, want_all: bool = False) -> _SearchOutcome:
    d = field.d
    budget = NO_BUDGET if budget is None else int(budget)
    core = sources if isinstance(targets, Hyperplane) else np.vstack([sources, targets])
    core_lo, core_hi = core.min(axis=0), core.max(axis=0)
    pad = int(math.ceil(1.25 * _gap(sources, targets))) + 8
    n_required = 1 if stop_first else (0 if isinstance(targets, Hyperplane) else len(targets))
    pool_factor = 0.25
    key, mults, kind, p0, p1, p2, plants = field.kernel_args()
    while True:
        win = _make_window(region, d, core_lo, core_hi, pad)
        n = win.size
        if not np.all(win.contains(sources)):
            raise QueryError("source set lies outside the region bounds")
        flag, tids = _target_flags(win, targets)
        if n_required == 0:
            n_required = NO_BUDGET  # settle everything reachable
        w = _work().ensure(n, int(pool_factor * n) + 1024, int(pool_factor * n) + 1024)
        src_ids = np.sort(win.ids(sources))
        status, hit, settled, nt = K.dijkstra_window(
            key, mults, kind, p0, p1, p2, plants, _inv_delta(field),
            win.lo, win.shape, win.strides, win.closed_lo, win.closed_hi,
            win.mask, win.use_mask, src_ids, flag, stop_first, n_required, budget,
            w.dist, w.pred, w.state, w.touched, w.bhead, w.ek, w.ev, w.enext, w.hk, w.hv)
        out = _SearchOutcome(status, hit, settled, win)
        if status == K.STATUS_OK or status == K.STATUS_DISCONNECTED:
            if hit >= 0:
                out.path_ids = _trace(w.pred, hit)
                out.time = float(w.dist[hit])
            if want_all:
                if tids is not None:
                    out.target_ids = tids
                    out.target_dist = w.dist[tids].copy()
                else:
                    t_ids = np.flatnonzero(flag)
                    out.target_ids = t_ids
                    out.target_dist = w.dist[t_ids].copy()
        K.reset_work(w.dist, w.pred, w.state, w.touched, nt)
        if status == K.STATUS_ESCAPED:
            pad = 2 * pad + 16
            continue
        if status == K.STATUS_OVERFLOW:
            pool_factor *= 4
            continue
        if status == K.STATUS_BUDGET:
            raise BudgetExhausted(f"expansion budget {budget} exhausted after {settled} settles")
        return out


def _trace(pred: np.ndarray, hit: int) -> np.ndarray:
    ids = []
    v = hit
    while v >= 0:
        ids.append(v)
        v = int(pred[v])
    return np.array(ids[::-1], dtype=np.int64)


def _as_tuple(row) -> tuple[int, ...]:
    return tuple(int(c) for c in row)


# ---------------------------------------------------------------------------
# public queries


def passage_time(q: QuerySpec) -> PassageResult:
    """Exact restricted passage time and tie-broken geodesic for a query."""
    field, region = q.field, q.region
    sources = _resolve_sources(q.source, region, field.d)
    targets = _resolve_targets(q.target, region, field.d)
    if not isinstance(targets, Hyperplane):
        common = _intersect_rows(sources, targets)
        if len(common):
            x = _as_tuple(common[0])
            return PassageResult(0.0, (x,), 0, x, x)
    out = _search(field, region, sources, targets, True, q.budget)
    if out.status != K.STATUS_OK:
        raise Disconnected("no admissible path between source and target")
    pts = out.window.coords(out.path_ids)
    path = tuple(_as_tuple(p) for p in pts)
    return PassageResult(out.time, path, out.settled, path[0], path[-1])


def _intersect_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sa = {tuple(r) for r in a.tolist()}
    both = [r for r in b.tolist() if tuple(r) in sa]
    return np.array(sorted(both), dtype=np.int64).reshape(-1, a.shape[1])


def _fold(field: WeightField, path) -> float:
    if len(path) < 2:
        return 0.0
    return running_sum(path_weights(field, path))


def path_time(field: WeightField, path: Sequence[Sequence[int]]) -> float:
    """Running (left-to-right) sum of edge weights along a path."""
    return _fold(field, [tuple(p) for p in path])


def geodesic(q: QuerySpec) -> tuple[tuple[int, ...], ...]:
    return passage_time(q).path


def point_time(field: WeightField, x, y, region: Region | None = None,
               budget: int | None = None) -> float:
    return passage_time(QuerySpec(field, [x], [y], region or Everything(), budget)).time


def distances_to_targets(field: WeightField, sources, targets, region: Region | None = None,
                         budget: int | None = None) -> dict[tuple[int, ...], float]:
    """Restricted passage times from a source set to every target (inf if unreachable)."""
    region = region or Everything()
    src = _resolve_sources(sources, region, field.d)
    tgt = _resolve_targets(targets, region, field.d)
    if isinstance(tgt, Hyperplane) and any(c is None for c in sum(region.bounds(field.d), [])):
        raise QueryError("distances to a hyperplane need a bounded region")
    out = _search(field, region, src, tgt, False, budget, want_all=True)
    coords = out.window.coords(out.target_ids)
    return {_as_tuple(c): float(t) for c, t in zip(coords, out.target_dist)}


def face_to_face_time(field: WeightField, frame: Frame, i: int, K_len: float,
                      window: Region, budget: int | None = None) -> PassageResult:
    """T_window(F_i, F_{i+1}) for the faces {normal . x = j * K_len * (normal . u)}."""
    if not K_len > 0:
        raise QueryError("face spacing must be positive")
    src = Hyperplane.through(frame, i * K_len * frame.u)
    dst = Hyperplane.through(frame, (i + 1) * K_len * frame.u)
    return passage_time(QuerySpec(field, src, dst, window, budget))


def max_transversal_deviation(path, frame: Frame | None, anchor, direction) -> float:
    """Largest Euclidean distance from a path vertex to the line anchor + R * direction."""
    pts = np.asarray(path, dtype=float)
    if pts.size == 0:
        return 0.0
    return float(transversal_distance(pts, anchor, direction).max())


# ---------------------------------------------------------------------------
# batched point-to-point times over many replicas


def _batch_geometry(field: WeightField, region: Region, x: np.ndarray, y: np.ndarray, pad: int):
    core = np.vstack([x, y])
    win = _make_window(region, field.d, core.min(axis=0), core.max(axis=0), pad)
    return win


def _batch_chunk(field: WeightField, replicas: np.ndarray, region: Region,
                 x: np.ndarray, y: np.ndarray, bidirectional: bool, budget: int) -> np.ndarray:
    _, mults, kind, p0, p1, p2, plants = field.kernel_args()
    keys = np.array([K.field_key(field.seed, int(r)) for r in replicas], dtype=np.int64)
    pad = int(math.ceil(1.25 * float(np.abs(y - x).sum()))) + 8
    win = _batch_geometry(field, region, x, y, pad)
    n = win.size
    sid, tid = int(win.ids(x[None])[0]), int(win.ids(y[None])[0])
    if bidirectional:
        w = _work().ensure(2 * n, n // 2 + 1024, n // 2 + 1024)
        times, status, counts = K.batch_bidirectional(
            keys, mults, kind, p0, p1, p2, plants, _inv_delta(field), win.lo, win.shape, win.strides,
            win.closed_lo, win.closed_hi, win.mask, win.use_mask, sid, tid, budget,
            w.dist, w.pred, w.state, w.touched, w.bhead, w.ek, w.ev, w.enext, w.hk, w.hv,
            w.path_buf)
    else:
        w = _work().ensure(n, n // 4 + 1024, n // 4 + 1024)
        flag = np.zeros(n, dtype=np.uint8)
        flag[tid] = 1
        times, status, counts = K.batch_first_passage(
            keys, mults, kind, p0, p1, p2, plants, _inv_delta(field), win.lo, win.shape, win.strides,
            win.closed_lo, win.closed_hi, win.mask, win.use_mask,
            np.array([sid], dtype=np.int64), flag, budget,
            w.dist, w.pred, w.state, w.touched, w.bhead, w.ek, w.ev, w.enext, w.hk, w.hv)
    for j in np.flatnonzero(status != K.STATUS_OK):
        if status[j] == K.STATUS_BUDGET:
            raise BudgetExhausted(f"expansion budget {budget} exhausted (replica {replicas[j]})")
        # escaped or overflowed: redo this replica with the adaptive single query
        f = WeightField(field.dist, field.d, field.seed, int(replicas[j]), field.plants)
        times[j] = passage_time(QuerySpec(f, [x], [y], region, budget)).time
    return times


def batch_point_times(field: WeightField, replicas: Sequence[int], x, y,
                      region: Region | None = None, bidirectional: bool = True,
                      budget: int | None = None, workers: int = 1,
                      chunk: int = 64) -> np.ndarray:
    """T_region(x, y) in each replica environment, in replica order.

    The two-sided search returns the running sum along an optimal path found
    from both ends. It agrees with the one-sided search up to the rounding
    of a different optimal path (usually exactly), and is about twice as fast.
    """
    region = region or Everything()
    x = _as_points(x, field.d)[0]
    y = _as_points(y, field.d)[0]
    for p in (x, y):
        if not region.contains(p):
            raise QueryError(f"endpoint {tuple(p)} lies outside the region")
    replicas = np.asarray(replicas, dtype=np.int64)
    if replicas.size == 0:
        return np.zeros(0)
    if np.array_equal(x, y):
        return np.zeros(replicas.size)
    budget = NO_BUDGET if budget is None else int(budget)
    parts = [replicas[i:i + chunk] for i in range(0, replicas.size, chunk)]
    if workers <= 1 or len(parts) == 1:
        res = [_batch_chunk(field, p, region, x, y, bidirectional, budget) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(lambda p: _batch_chunk(field, p, region, x, y,
                                                     bidirectional, budget), parts))
    return np.concatenate(res)


# ---------------------------------------------------------------------------
# exhaustive oracle for tiny boxes


def box_vertices(shape: Sequence[int]) -> list[tuple[int, ...]]:
    return [tuple(v) for v in itertools.product(*[range(s) for s in shape])]


def box_edges(shape: Sequence[int]) -> list[tuple[tuple[int, ...], int]]:
    """(lower endpoint, axis) for every edge of the box {0..s_k - 1}, sorted."""
    out = []
    for v in box_vertices(shape):
        for k in range(len(shape)):
            if v[k] + 1 < shape[k]:
                out.append((v, k))
    return out


def simple_paths(shape: Sequence[int], source, target) -> list[list[tuple[int, ...]]]:
    """All simple lattice paths from source to target inside the box."""
    source, target = tuple(source), tuple(target)
    d = len(shape)
    paths: list[list[tuple[int, ...]]] = []
    stack = [source]
    on = {source}

    def rec(v):
        if v == target:
            paths.append(list(stack))
            return
        for k in range(d):
            for step in (-1, 1):
                w = list(v)
                w[k] += step
                w = tuple(w)
                if 0 <= w[k] < shape[k] and w not in on:
                    on.add(w)
                    stack.append(w)
                    rec(w)
                    stack.pop()
                    on.discard(w)

    rec(source)
    return paths


def path_edge_indices(path, shape) -> list[int]:
    index = {e: i for i, e in enumerate(box_edges(shape))}
    out = []
    for a, b in zip(path[:-1], path[1:]):
        k = next(j for j in range(len(a)) if a[j] != b[j])
        out.append(index[(min(a, b), k)])
    return out


def brute_force_passage(field: WeightField, shape: Sequence[int], source, target,
                        offset: Sequence[int] | None = None):
    """Minimum running sum over all simple paths in a small box, plus the
    tie-broken minimizer.

    Ties are resolved like the search does: only paths all of whose prefixes
    are themselves optimal qualify, and among those the one whose vertex
    sequence read backwards from the target is lexicographically smallest.
    Returns (time, path) in the field's coordinates.
    """
    offset = np.zeros(len(shape), dtype=np.int64) if offset is None else np.asarray(offset)
    src = tuple(int(c) for c in np.asarray(source) - offset)
    dst = tuple(int(c) for c in np.asarray(target) - offset)
    edges = box_edges(shape)
    lows = np.array([e[0] for e in edges], dtype=np.int64).reshape(-1, len(shape)) + offset
    axes = np.array([e[1] for e in edges], dtype=np.int64)
    wts = field.weights(lows, axes)
    wmap = {e: float(w) for e, w in zip(edges, wts)}

    def weight(a, b):
        k = next(j for j in range(len(a)) if a[j] != b[j])
        return wmap[(min(a, b), k)]

    # optimal running sums to every vertex, by exhaustive enumeration
    best: dict[tuple[int, ...], float] = {}
    for v in box_vertices(shape):
        vals = []
        for p in simple_paths(shape, src, v):
            vals.append(running_sum(weight(a, b) for a, b in zip(p[:-1], p[1:])))
        best[v] = min(vals)

    candidates = []
    for p in simple_paths(shape, src, dst):
        acc = 0.0
        ok = True
        for a, b in zip(p[:-1], p[1:]):
            acc += weight(a, b)
            if acc != best[b]:
                ok = False
                break
        if ok:
            candidates.append(p)
    chosen = min(candidates, key=lambda p: p[::-1])
    shift = tuple(int(c) for c in offset)
    path = tuple(tuple(c + s for c, s in zip(v, shift)) for v in chosen)
    return best[dst], path
