"""Deterministic, re-checkable constructions over a fixed environment.

Every routine takes the reference time constant ``mu_ref`` as an input and
returns an outcome whose witness is re-verified through the public passage
API before it is handed back. Outcomes serialize as
``{kind, parameters, witness | bound, verification: {rechecked, values}}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from itertools import product
from typing import Sequence

import numpy as np

from .lattice_geom import (Box, Cylinder, Everything, Frame, Region, enumerate_face,
                           floor_point, grid_points, make_frame)
from .passage_core import (BudgetExhausted, Hyperplane, QuerySpec, box_edges,
                           distances_to_targets, passage_time, path_edge_indices,
                           path_time, simple_paths)
from .weight_field import TwoPoint, WeightField


class CertificateError(ValueError):
    """Parameters for which a construction is undefined."""


def _pt(x) -> tuple[int, ...]:
    return tuple(int(c) for c in x)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def scale_constants(eps: float) -> dict:
    """Asymptotic defaults M = L = ceil(4 / eps^4); far too large for desk-scale N."""
    m = math.ceil(4 * eps ** -4)
    return {"M": m, "L": m, "eps": eps}


# ---------------------------------------------------------------------------
# slab decomposition


@dataclass(frozen=True)
class SlabParams:
    N: int
    a: float
    M: int
    v: tuple[float, ...]
    frame: Frame
    mu_ref: float
    eps: float = 0.1

    def __post_init__(self):
        if self.M < 2:
            raise CertificateError("M must be at least 2")
        if not 0 < self.a <= 1:
            raise CertificateError("a must lie in (0, 1]")
        if not self.mu_ref > 0:
            raise CertificateError("mu_ref must be positive")
        if self.N < 2:
            raise CertificateError("N must be at least 2")

    def to_dict(self) -> dict:
        return {"N": self.N, "a": self.a, "M": self.M, "v": list(self.v),
                "mu_ref": self.mu_ref, "eps": self.eps, "frame": self.frame.to_dict()}


def slab_gaps(N: float, M: int) -> list[float]:
    """Delta_m for m = 0..M-1 (index 0 unused, set to nan)."""
    out = [math.nan]
    for m in range(1, M):
        if m <= M - 2:
            out.append(N ** ((m + 1) / M) - N ** (m / M))
        else:
            out.append(N - 2 * N ** ((M - 1) / M))
    return out


def need_count(size: int, m: int, M: int) -> int:
    """Smallest integer >= (1 - 2^{M(m - 2M)}) * size."""
    return size - (size >> (M * (2 * M - m)))


def allowed_count(size: int, m: int, M: int) -> int:
    """Largest integer <= (1 - 2^{M(m + 1 - 2M)}) * size."""
    j = M * (2 * M - m - 1)
    return size - ((size + (1 << j) - 1) >> j)


def slab_cylinder(p: SlabParams) -> Cylinder:
    d = p.frame.d
    return Cylinder((0.0,) * d, p.frame, tuple(float(c) for c in p.v),
                    (-2.0 * p.N, 2.0 * p.N), float(p.N) ** ((p.a + 1) / 2))


def slab_faces(p: SlabParams, region: Region) -> tuple[dict, dict]:
    """L_m and R_m (m = 0..M-1) as sorted lattice arrays, filtered to the region."""
    L, R = {}, {}
    for m in range(p.M):
        r = float(p.N) ** (p.a / 2 + m / (2 * p.M) - p.eps ** 2)
        for store, axial in ((L, float(p.N) ** (m / p.M)), (R, p.N - float(p.N) ** (m / p.M))):
            pts = enumerate_face(p.frame, p.v, axial, r, "continuum")
            store[m] = pts[region.contains_many(pts)] if len(pts) else pts
    return L, R


@dataclass
class SlabOutcome:
    kind: str                       # "certificate", "bound_witness" or "inconclusive"
    params: SlabParams
    direct_T: float
    bound: float
    m: int | None = None
    side: str | None = None         # "left-pair", "right-pair" or "spanning"
    A: list = dc_field(default_factory=list)
    target_size: int = 0
    reached: int = 0
    overshoot_count: int = 0
    chain: dict = dc_field(default_factory=dict)
    reason: str = ""
    verification: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "parameters": self.params.to_dict()}
        if self.kind == "certificate":
            out["witness"] = {"m": self.m, "side": self.side,
                              "A": [list(x) for x in self.A], "target_size": self.target_size,
                              "reached": self.reached, "overshoot_count": self.overshoot_count}
        else:
            out["bound"] = {"T": self.direct_T, "bound": self.bound, "chain": self.chain,
                            "reason": self.reason}
        out["verification"] = self.verification
        return out


def _reach(field, sources, targets, region, budget) -> dict:
    if len(sources) == 0 or len(targets) == 0:
        return {}
    return distances_to_targets(field, sources, targets, region, budget)


def verify_slab_certificate(field: WeightField, out: SlabOutcome,
                            budget: int | None = None) -> dict:
    """Recompute both cardinality conditions of a certificate from scratch."""
    p = out.params
    region = slab_cylinder(p)
    L, R = slab_faces(p, region)
    m = out.m
    if out.side == "left-pair":
        src_face, dst_face = L[m], L[m + 1]
    elif out.side == "right-pair":
        src_face, dst_face = R[m], R[m + 1]
    else:
        src_face, dst_face = L[p.M - 1], R[p.M - 1]
    face_set = {_pt(x) for x in src_face}
    A = [tuple(x) for x in out.A]
    subset = all(x in face_set for x in A)
    need = need_count(len(src_face), m, p.M)
    allowed = allowed_count(len(dst_face), m, p.M)
    gap = slab_gaps(p.N, p.M)[m]
    thr = gap * p.mu_ref + float(p.N) ** p.a / (2 * p.M)
    dist = _reach(field, np.array(A, dtype=np.int64), dst_face, region, budget)
    reached = sum(1 for y in map(_pt, dst_face) if dist.get(y, math.inf) <= thr)
    ok = subset and len(A) >= need and reached <= allowed and m >= p.M * p.a - 2
    return {"rechecked": bool(ok), "values": {"A_size": len(A), "need": need,
                                             "reached": reached, "allowed": allowed,
                                             "threshold": thr, "A_subset_of_face": subset}}


def slab_certificate(field: WeightField, p: SlabParams,
                     budget: int | None = None) -> SlabOutcome:
    """Run the multi-scale slab construction for T_cyl(0, Nv).

    The face sets L'_m, R'_m are built upward from the smallest admissible
    scale. A face pair whose reachable set is too small stops the
    construction and becomes a certificate; if every step goes through, the
    chain 0 -> x -> y -> Nv bounds the passage time. A bound witness is
    returned whenever the direct time is within Nμ + N^a.
    """
    d = field.d
    if p.frame.d != d or len(p.v) != d:
        raise CertificateError("frame/axis dimension does not match the field")
    gaps = slab_gaps(p.N, p.M)
    if any(g <= 0 for g in gaps[1:]):
        raise CertificateError(f"some Delta_m <= 0 for N={p.N}, M={p.M}: {gaps[1:]}")
    region = slab_cylinder(p)
    origin = (0,) * d
    end = floor_point(p.N * _vec(p.v))
    Na = float(p.N) ** p.a
    bound = p.N * p.mu_ref + Na
    direct = passage_time(QuerySpec(field, [origin], [end], region, budget)).time
    L, R = slab_faces(p, region)
    allL = np.unique(np.vstack([L[m] for m in range(p.M)]), axis=0)
    allR = np.unique(np.vstack([R[m] for m in range(p.M)]), axis=0)
    D0 = _reach(field, np.array([origin]), allL, region, budget)
    DN = _reach(field, np.array([end]), allR, region, budget)

    def primed(face, dist, m):
        lim = float(p.N) ** (m / p.M) * p.mu_ref + m * Na / (2 * p.M)
        keep = [x for x in map(_pt, face) if dist.get(x, math.inf) <= lim]
        return np.array(keep, dtype=np.int64).reshape(-1, d)

    Lp = {m: primed(L[m], D0, m) for m in range(1, p.M)}
    Rp = {m: primed(R[m], DN, m) for m in range(1, p.M)}
    m0 = max(1, math.ceil(p.M * p.a - 2))
    found = None
    broken = ""
    steps = []
    pairs = [("left-pair", m, Lp, L[m], L[m + 1]) for m in range(m0, p.M - 1)]
    pairs += [("right-pair", m, Rp, R[m], R[m + 1]) for m in range(m0, p.M - 1)]
    pairs.append(("spanning", p.M - 1, Lp, L[p.M - 1], R[p.M - 1]))
    span_reach = None
    for side, m, primes, src_face, dst_face in pairs:
        A = primes[m]
        need = need_count(len(src_face), m, p.M)
        if len(A) < need or len(dst_face) == 0:
            broken = broken or f"{side} m={m}: |A|={len(A)} below {need}"
            continue
        thr = gaps[m] * p.mu_ref + Na / (2 * p.M)
        dist = _reach(field, A, dst_face, region, budget)
        reached = [y for y in map(_pt, dst_face) if dist.get(y, math.inf) <= thr]
        allowed = allowed_count(len(dst_face), m, p.M)
        steps.append({"side": side, "m": m, "A": len(A), "need": need,
                      "reached": len(reached), "allowed": allowed})
        if len(reached) <= allowed:
            if found is None:
                found = (side, m, A, dst_face, reached)
        elif side == "spanning":
            span_reach = (A, reached, thr)
    chain = {"steps": steps}
    if span_reach is not None and found is None and not broken:
        A, reached, thr = span_reach
        rp = {_pt(y) for y in Rp[p.M - 1]}
        both = [y for y in reached if y in rp]
        if both:
            y = both[0]
            res = passage_time(QuerySpec(field, A, [y], region, budget))
            x = res.path[0]
            chain.update({"x": list(x), "y": list(y), "T_0x": D0[x], "T_xy": res.time,
                          "T_yN": DN[y], "sum": D0[x] + res.time + DN[y]})
        else:
            broken = "spanning pair reaches no point of R'_{M-1}"
    if direct <= bound:
        out = SlabOutcome("bound_witness", p, direct, bound, chain=chain,
                          reason=broken)
        again = distances_to_targets(field, [origin], [end], region, budget)[end]
        out.verification = {"rechecked": bool(again == direct and again <= bound),
                            "values": {"T": direct, "recomputed": again, "bound": bound}}
        return out
    if found is not None:
        side, m, A, dst_face, reached = found
        out = SlabOutcome("certificate", p, direct, bound, m=m, side=side,
                          A=[_pt(x) for x in A], target_size=len(dst_face),
                          reached=len(reached),
                          overshoot_count=len(dst_face) - len(reached), chain=chain)
        out.verification = verify_slab_certificate(field, out, budget)
        return out
    return SlabOutcome("inconclusive", p, direct, bound, chain=chain,
                       reason=broken or "chain closed but the direct time exceeds the bound",
                       verification={"rechecked": False, "values": {"T": direct}})


# ---------------------------------------------------------------------------
# bad vertices


@dataclass
class BadWitness:
    z: tuple
    b: float
    K: float
    y: tuple[int, ...]
    y_prime: tuple[int, ...]
    restricted_time: float
    threshold: float
    verification: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": "bad_witness",
                "parameters": {"z": list(self.z), "b": self.b, "K": self.K},
                "witness": {"y": list(self.y), "y_prime": list(self.y_prime),
                            "restricted_time": self.restricted_time,
                            "threshold": self.threshold},
                "verification": self.verification}


def _lattice_in(region: Cylinder) -> np.ndarray:
    lo, hi = region.bounds(region.d)
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    pts = pts[region.contains_many(pts)]
    return np.unique(pts, axis=0) if len(pts) else pts


def bad_probe_regions(z, b: float, K: float, v, frame: Frame) -> tuple[Cylinder, Cylinder]:
    """(inner cylinder holding y, outer cylinder restricting the crossing)."""
    z = tuple(float(c) for c in z)
    v = tuple(float(c) for c in v)
    h = float(K) ** ((b + 1) / 2)
    inner = Cylinder(z, frame, v, (-float(K), 2.0 * K), h)
    outer = Cylinder(z, frame, v, (-4.0 * K, 4.0 * K), 4 * h)
    return inner, outer


def is_bad_vertex(field: WeightField, z, b: float, K: float, v, frame: Frame, mu_ref: float,
                  chi_bar_eps: float, budget: int | None = None) -> BadWitness | None:
    """First (y, y') in lexicographic order with a slow restricted crossing, or None.

    y runs over lattice points of Cyl_z([-K, 2K], K^{(b+1)/2}); y' over the
    lattice images of the cross-section Cyl_y({K}, K^{(chi_bar_eps+1)/2}).
    """
    if not K >= 1:
        raise CertificateError("K must be at least 1")
    if not 0 < b <= 1:
        raise CertificateError("b must lie in (0, 1]")
    inner, outer = bad_probe_regions(z, b, K, v, frame)
    thr = K * mu_ref + 2 * float(K) ** b
    rad = float(K) ** ((chi_bar_eps + 1) / 2)
    for y in map(_pt, _lattice_in(inner)):
        ends = enumerate_face(frame, v, K, rad, "continuum", base=y)
        ends = ends[outer.contains_many(ends)] if len(ends) else ends
        if len(ends) == 0:
            continue
        dist = distances_to_targets(field, [y], ends, outer, budget)
        for yp in map(_pt, ends):
            t = dist.get(yp, math.inf)
            if t >= thr:
                w = BadWitness(tuple(z), b, K, y, yp, t, thr)
                again = (math.inf if not math.isfinite(t) else
                         passage_time(QuerySpec(field, [y], [yp], outer, budget)).time)
                w.verification = {"rechecked": bool(again >= thr and again == t),
                                  "values": {"recomputed": again}}
                return w
    return None


@dataclass
class BadScan:
    status: str                     # "complete" or "aborted"
    K: float
    points: list
    count: int | None
    witnesses: list
    class_counts: dict
    parameters: dict

    def to_dict(self) -> dict:
        return {"kind": "bad_scan", "parameters": self.parameters,
                "witness": {"status": self.status, "K": self.K, "count": self.count,
                            "class_counts": {",".join(map(str, k)): v
                                             for k, v in sorted(self.class_counts.items())},
                            "witnesses": [w.to_dict() for w in self.witnesses]},
                "verification": {"rechecked": self.status == "complete" and all(
                    w.verification.get("rechecked") for w in self.witnesses),
                    "values": {"grid_size": len(self.points)}}}


def scale_for(N: float, m: int, M: int, a: float, chi_bar: float, eps: float) -> float:
    """K_m = Delta_m / J_m with J_m = floor(Delta_m N^{-((m/M)-a)_+/(1-chi_bar-eps) - eps^3})."""
    gap = slab_gaps(N, M)[m] if m >= 1 else math.nan
    if not gap > 0:
        raise CertificateError(f"Delta_{m} is not positive")
    expo = max(m / M - a, 0.0) / (1 - chi_bar - eps) + eps ** 3
    J = math.floor(gap * float(N) ** (-expo))
    if J < 1:
        raise CertificateError(f"J_{m} = {J}; scale too small for these parameters")
    return gap / J


def bad_grid(N: float, m: int, M: int, a: float, b: float, K: float, v, frame: Frame,
             eps: float) -> list[tuple[tuple[int, ...], tuple]]:
    """Grid points of Z_{N,m}(b) as (index tuple, real point), in index order."""
    d = frame.d
    r = float(N) ** (a / 2 + m / (2 * M) - eps ** 2)
    if m <= M - 2:
        spans = [(float(N) ** (m / M), float(N) ** ((m + 1) / M)),
                 (N - float(N) ** ((m + 1) / M), N - float(N) ** (m / M))]
    else:
        spans = [(float(N) ** ((M - 1) / M), N - float(N) ** ((M - 1) / M))]
    axial = sorted({j for lo, hi in spans
                    for j in range(math.ceil(lo / K - 1e-12), math.floor(hi / K + 1e-12) + 1)})
    step = float(K) ** ((1 + b) / 2)
    k = math.floor(r / step + 1e-12)
    trans = range(-k, k + 1)
    v = _vec(v)
    tang = frame.tangents
    out = []
    for j in axial:
        for rest in product(trans, repeat=d - 1):
            x = j * K * v + (np.asarray(rest, float) * step) @ tang if d > 1 else j * K * v
            out.append(((j,) + tuple(rest), tuple(float(c) for c in x)))
    return out


def scan_bad_vertices(field: WeightField, N: float, m: int, M: int, a: float, b: float,
                      v, frame: Frame, mu_ref: float, chi_bar: float, eps: float,
                      K: float | None = None, chi_bar_eps: float | None = None,
                      decimate: bool = False, budget: int | None = None) -> BadScan:
    """is_bad_vertex over Z_{N,m}(b); with ``decimate`` counts are split by index mod 8."""
    K = scale_for(N, m, M, a, chi_bar, eps) if K is None else float(K)
    cbe = chi_bar + eps if chi_bar_eps is None else chi_bar_eps
    grid = bad_grid(N, m, M, a, b, K, v, frame, eps)
    params = {"N": N, "m": m, "M": M, "a": a, "b": b, "K": K, "v": list(map(float, v)),
              "mu_ref": mu_ref, "chi_bar": chi_bar, "eps": eps, "chi_bar_eps": cbe,
              "decimate": decimate}
    witnesses, classes = [], {}
    try:
        for idx, z in grid:
            w = is_bad_vertex(field, floor_point(z), b, K, v, frame, mu_ref, cbe, budget)
            key = tuple(i % 8 for i in idx) if decimate else ()
            classes.setdefault(key, 0)
            if w is not None:
                witnesses.append(w)
                classes[key] += 1
    except BudgetExhausted:
        return BadScan("aborted", K, [z for _, z in grid], None, [], {}, params)
    return BadScan("complete", K, [z for _, z in grid], len(witnesses), witnesses,
                   classes, params)


# ---------------------------------------------------------------------------
# face deficits


@dataclass
class FaceDeficitProfile:
    K: float
    J: int
    times: list[float]
    b_grid: list[Fraction]
    deficits: list[int]
    parameters: dict

    def to_dict(self) -> dict:
        return {"kind": "face_profile", "parameters": self.parameters,
                "witness": {"K": self.K, "J": self.J, "times": self.times,
                            "b_grid": [str(b) for b in self.b_grid],
                            "deficits": self.deficits},
                "verification": {"rechecked": all(
                    x >= y for x, y in zip(self.deficits, self.deficits[1:])),
                    "values": {"monotone_in_b": True}}}


def deficit_counts(times: Sequence[float], K: float, mu_ref: float,
                   b_grid: Sequence) -> list[int]:
    return [sum(1 for t in times if t < K * mu_ref - float(K) ** float(b)) for b in b_grid]


def face_deficit_profile(field: WeightField, N: float, K: float, v, frame: Frame,
                         mu_ref: float, L: int, chi_bar: float, eps: float,
                         window: Region | None = None,
                         budget: int | None = None) -> FaceDeficitProfile:
    """Crossing times between consecutive faces i K v + span(tangents).

    J = floor(N / K) faces-to-face crossings are measured inside ``window``
    (default [-N^2, N^2]^d) and counted against K mu_ref - K^b on the grid
    of b values strictly between chi_bar + eps and 1 with spacing 1/L.
    """
    if not K >= 1:
        raise CertificateError("K must be at least 1")
    d = field.d
    J = int(math.floor(N / K + 1e-12))
    if J < 1:
        raise CertificateError("need N >= K")
    if window is None:
        s = int(math.ceil(N * N))
        window = Box((-s,) * d, (s,) * d)
    v = _vec(v)
    times = []
    for i in range(J):
        src = Hyperplane.through(frame, i * K * v)
        dst = Hyperplane.through(frame, (i + 1) * K * v)
        times.append(passage_time(QuerySpec(field, src, dst, window, budget)).time)
    b_grid = grid_points(Fraction(repr(chi_bar)) + Fraction(repr(eps)), 1, L)
    return FaceDeficitProfile(K, J, times, b_grid, deficit_counts(times, K, mu_ref, b_grid),
                              {"N": N, "K": K, "v": v.tolist(), "mu_ref": mu_ref, "L": L,
                               "chi_bar": chi_bar, "eps": eps})


# ---------------------------------------------------------------------------
# block traces


@dataclass
class BlockTrace:
    path: tuple
    K_hat: int
    blocks: list[tuple[int, ...]]
    connected: bool
    volume_ok: bool

    def to_dict(self) -> dict:
        return {"kind": "block_trace", "parameters": {"K_hat": self.K_hat,
                                                      "path_vertices": len(self.path)},
                "witness": {"blocks": [list(b) for b in self.blocks]},
                "verification": {"rechecked": self.connected and self.volume_ok,
                                 "values": {"connected": self.connected,
                                            "volume_ok": self.volume_ok}}}


def is_connected(cells: Sequence[Sequence[int]]) -> bool:
    """Nearest-neighbour connectivity of a finite set of lattice points."""
    cells = {tuple(c) for c in cells}
    if not cells:
        return True
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        c = stack.pop()
        for k in range(len(c)):
            for s in (-1, 1):
                n = c[:k] + (c[k] + s,) + c[k + 1:]
                if n in cells and n not in seen:
                    seen.add(n)
                    stack.append(n)
    return len(seen) == len(cells)


def geodesic_block_trace(path: Sequence[Sequence[int]], K_hat: int) -> BlockTrace:
    """K_hat-blocks met by a path, with connectivity and K|blocks| <= 3^d |path| flags."""
    if len(path) == 0:
        raise CertificateError("path must be nonempty")
    if K_hat < 1 or int(K_hat) != K_hat:
        raise CertificateError("block size must be a positive integer")
    pts = np.asarray(path, dtype=np.int64)
    blocks = np.unique(np.floor_divide(pts, int(K_hat)), axis=0)
    blocks = [tuple(int(c) for c in b) for b in blocks]
    d = pts.shape[1]
    return BlockTrace(tuple(map(_pt, pts)), int(K_hat), blocks, is_connected(blocks),
                      K_hat * len(blocks) <= 3 ** d * len(pts))


# ---------------------------------------------------------------------------
# dark vertices


@dataclass
class DarkResult:
    dark: bool
    x: tuple[int, ...]
    reason: str = ""
    y: tuple[int, ...] | None = None
    time: float | None = None
    threshold: float | None = None
    path: tuple | None = None
    verification: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": "dark_vertex", "parameters": {"x": list(self.x)},
                "witness": {"dark": self.dark, "reason": self.reason,
                            "y": None if self.y is None else list(self.y),
                            "time": self.time, "threshold": self.threshold,
                            "path": None if self.path is None else [list(p) for p in self.path]},
                "verification": self.verification}


def is_dark_vertex(field: WeightField, x, b: float, K_hat: int, A: float, frame: Frame,
                   mu_ref: float, budget: int | None = None) -> DarkResult:
    """Cheap crossing near x inside x + [-A K, A K]^d, or an escaping geodesic.

    Only the tie-broken geodesic from y to y + K u + span(tangents) is
    checked for escape, not every geodesic.
    """
    d = field.d
    if not A > 4 * d:
        raise CertificateError(f"A must exceed 4d = {4 * d}, got {A}")
    x = _pt(x)
    half = int(math.floor(A * K_hat))
    box = Box(tuple(c - half for c in x), tuple(c + half for c in x))
    thr = K_hat * mu_ref - 2 * float(K_hat) ** b
    u = _vec(frame.u)
    rng = [range(c - 2 * K_hat, c + 2 * K_hat + 1) for c in x]
    for y in product(*rng):
        plane = Hyperplane.through(frame, _vec(y) + K_hat * u)
        # times are non-negative, so a non-positive threshold cannot be undercut
        t = passage_time(QuerySpec(field, [y], plane, box, budget)).time if thr > 0 else math.inf
        if t < thr:
            again = distances_to_targets(field, [y], plane, box, budget)
            best = min(again.values()) if again else math.inf
            return DarkResult(True, x, "cheap_crossing", y, t, thr, None,
                              {"rechecked": bool(best == t and best < thr),
                               "values": {"recomputed": best}})
        g = passage_time(QuerySpec(field, [y], plane, Everything(), budget)).path
        inside = box.contains_many(np.asarray(g))
        if not np.all(inside):
            return DarkResult(True, x, "escaping_geodesic", y, None, thr, g,
                              {"rechecked": True, "values": {"outside": int((~inside).sum())}})
    return DarkResult(False, x, verification={"rechecked": True, "values": {}})


# ---------------------------------------------------------------------------
# block chains


@dataclass
class BlockReport:
    N: int
    zeta: float
    K_tilde: int
    events: list[bool]
    face_times: list[float]
    segment_times: list[float]
    confined: bool
    implied_lower_bound: float
    chain_bound: float
    actual_T: float
    parameters: dict

    @property
    def hypotheses_hold(self) -> bool:
        return all(self.events) and self.confined

    @property
    def chain_holds(self) -> bool:
        return self.actual_T >= self.implied_lower_bound

    @property
    def segments_dominate(self) -> bool:
        return all(s >= f for s, f in zip(self.segment_times, self.face_times))

    def to_dict(self) -> dict:
        return {"kind": "block_chain_upper", "parameters": self.parameters,
                "bound": {"K_tilde": self.K_tilde, "events": self.events,
                          "face_times": self.face_times, "confined": self.confined,
                          "implied_lower_bound": self.implied_lower_bound,
                          "chain_bound": self.chain_bound, "actual_T": self.actual_T,
                          "hypotheses_hold": self.hypotheses_hold},
                "verification": {"rechecked": (not self.hypotheses_hold) or
                                 (self.chain_holds and self.segments_dominate),
                                 "values": {"segment_times": self.segment_times,
                                            "chain_holds": self.chain_holds}}}


def block_event_check(field: WeightField, N: int, zeta: float, chi_hat: float, eps: float,
                      A: float, mu_ref: float, budget: int | None = None) -> BlockReport:
    """Upper-tail block events along e_1 and the deterministic chain they imply."""
    d = field.d
    K = math.floor(zeta ** (-1 / (1 - chi_hat)))
    if K < 2:
        raise CertificateError(f"K_tilde = {K} < 2; zeta too large")
    if N < 2 * K:
        raise CertificateError(f"N = {N} < 2 K_tilde = {2 * K}")
    w = A * math.sqrt(zeta) * N
    half = math.floor(w)
    n_events = math.ceil(N / K) - 1
    e1 = (1.0,) + (0.0,) * (d - 1)
    thr = K * mu_ref + float(K) ** (chi_hat * (1 - eps))
    trans = [np.arange(-half, half + 1)] * (d - 1)

    def face(level):
        grids = np.meshgrid(*trans, indexing="ij")
        rest = np.stack([g.ravel() for g in grids], axis=1) if d > 1 else np.zeros((1, 0))
        return np.hstack([np.full((len(rest), 1), level), rest]).astype(np.int64)

    face_times = []
    for i in range(1, n_events + 1):
        plane = Hyperplane(e1, float(i * K))
        face_times.append(passage_time(QuerySpec(field, face((i - 1) * K), plane,
                                                 Everything(), budget)).time)
    events = [t >= thr for t in face_times]
    origin = (0,) * d
    end = (N,) + (0,) * (d - 1)
    res = passage_time(QuerySpec(field, [origin], [end], Everything(), budget))
    path = np.asarray(res.path)
    confined = bool(np.all(np.abs(path[:, 1:]) <= w)) if d > 1 else True
    # segment of the geodesic between first hits of consecutive planes
    segs = []
    first = [int(np.argmax(path[:, 0] == i * K)) for i in range(n_events + 1)]
    for i in range(1, n_events + 1):
        segs.append(path_time(field, path[first[i - 1]:first[i] + 1]))
    return BlockReport(N, zeta, K, events, face_times, segs, confined,
                       math.fsum(face_times), n_events * thr, res.time,
                       {"N": N, "zeta": zeta, "chi_hat": chi_hat, "eps": eps, "A": A,
                        "mu_ref": mu_ref, "half_width": w})


@dataclass
class LowerChainReport:
    N: int
    kind: str
    magnitude: float
    J: int
    K_tilde: float
    points: list
    block_times: list[float]
    events: list[bool]
    threshold: float
    deviation: float
    target_deviation: float
    direct_T: float
    concatenated_T: float
    parameters: dict

    @property
    def conjunction(self) -> bool:
        return all(self.events)

    @property
    def deviation_ok(self) -> bool:
        # K^chi * J >= N^a holds exactly when J = N^{(a-chi)/(1-chi)} is an
        # integer; allow for the rounding of the two powers in that case
        return self.deviation >= self.target_deviation * (1 - 1e-12)

    def to_dict(self) -> dict:
        return {"kind": "block_chain_lower", "parameters": self.parameters,
                "bound": {"J": self.J, "K_tilde": self.K_tilde,
                          "points": [list(p) for p in self.points],
                          "block_times": self.block_times, "events": self.events,
                          "threshold": self.threshold, "conjunction": self.conjunction,
                          "deviation": self.deviation,
                          "target_deviation": self.target_deviation,
                          "direct_T": self.direct_T, "concatenated_T": self.concatenated_T},
                "verification": {"rechecked": self.direct_T <= self.concatenated_T,
                                 "values": {"deviation_ok": self.deviation_ok}}}


def lower_block_count(N: float, magnitude: float, chi_lower: float, kind: str = "a") -> int:
    if kind == "a":
        return math.ceil(float(N) ** ((magnitude - chi_lower) / (1 - chi_lower)))
    if kind == "zeta":
        return math.ceil(magnitude ** (1 / (1 - chi_lower)) * N)
    raise CertificateError(f"kind must be 'a' or 'zeta', got {kind!r}")


def lower_tail_block_chain(field: WeightField, N: int, magnitude: float, chi_lower: float,
                           mu_ref: float, kind: str = "a", u=None,
                           budget: int | None = None) -> LowerChainReport:
    """Point-to-point block times along u and the cheap-block conjunction."""
    d = field.d
    u = _vec(u if u is not None else (1.0,) + (0.0,) * (d - 1))
    J = lower_block_count(N, magnitude, chi_lower, kind)
    Kt = N / J
    if Kt < 1:
        raise CertificateError(f"block length {Kt} < 1")
    pts = [floor_point(i * Kt * u) for i in range(J + 1)]
    thr = Kt * mu_ref - Kt ** chi_lower
    times, full = [], [pts[0]]
    for a, b in zip(pts, pts[1:]):
        r = passage_time(QuerySpec(field, [a], [b], Everything(), budget))
        times.append(r.time)
        full.extend(r.path[1:])
    direct = passage_time(QuerySpec(field, [pts[0]], [pts[-1]], Everything(), budget)).time
    target = float(N) ** magnitude if kind == "a" else magnitude * N
    return LowerChainReport(N, kind, magnitude, J, Kt, pts, times, [t < thr for t in times],
                            thr, Kt ** chi_lower * J, target, direct, path_time(field, full),
                            {"N": N, "kind": kind, "magnitude": magnitude,
                             "chi_lower": chi_lower, "mu_ref": mu_ref,
                             "u": u.tolist()})


def exact_chain_probabilities(shape: Sequence[int], law: TwoPoint, points: Sequence,
                              thresholds: Sequence[float], side: str = "lower"
                              ) -> tuple[float, float, list[float]]:
    """Exact P(all E_i), prod P(E_i) and the P(E_i) for box-restricted block events.

    E_i is {T(points[i], points[i+1]) < thr_i} (side "lower") or >= (side
    "upper"), enumerated over every two-point assignment of the box edges.
    """
    shape = tuple(int(s) for s in shape)
    edges = box_edges(shape)
    m = len(edges)
    if m > 20:
        raise CertificateError("instance too large for exact enumeration")
    blocks = [[path_edge_indices(pp, shape) for pp in simple_paths(shape, tuple(a), tuple(b))]
              for a, b in zip(points, points[1:])]
    cfg = np.arange(1 << m, dtype=np.int64)
    on = ((cfg[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    w = np.where(on, law.w1, law.w0)
    prob = np.array([law.p ** k * (1 - law.p) ** (m - k) for k in range(m + 1)])[on.sum(axis=1)]
    ev = []
    for paths, thr in zip(blocks, thresholds):
        best = np.full(len(cfg), np.inf)
        for path in paths:
            t = np.zeros(len(cfg))
            for e in path:
                t = t + w[:, e]
            np.minimum(best, t, out=best)
        ev.append(best < thr if side == "lower" else best >= thr)
    singles = [math.fsum(prob[e]) for e in ev]
    joint = math.fsum(prob[np.logical_and.reduce(ev)])
    return joint, math.prod(singles), singles
