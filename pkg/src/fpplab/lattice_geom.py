"""Directions, tangent frames, tilted cylinders, faces and rational grids."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

TOL = 1e-9          # membership slack for real-valued region tests
FACE_CAP = 10**7    # default cap on enumerated face sizes


class GeometryError(ValueError):
    """Degenerate geometric input (singular frame, bad tangent data, ...)."""


class FaceTooLarge(GeometryError):
    """A face enumeration would exceed its cardinality cap."""


def floor_point(x: Sequence[float]) -> tuple[int, ...]:
    """Unique lattice point z with x in z + [0,1)^d."""
    out = []
    for c in x:
        if isinstance(c, (int, np.integer)):
            out.append(int(c))
        elif isinstance(c, Fraction):
            out.append(math.floor(c))
        else:
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coordinate {c}")
            out.append(math.floor(c))
    return tuple(out)


def floor_points(xs: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(xs, dtype=float)).astype(np.int64)


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True, eq=False)
class Frame:
    """Orthonormal basis adapted to a direction u.

    ``basis[0]`` is the normal of the tangent hyperplane H_u at u and
    ``basis[1:]`` span it; H_u = u + span(basis[1:]).
    """

    u: np.ndarray
    basis: np.ndarray
    model: str = "euclidean_ball"

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def normal(self) -> np.ndarray:
        return self.basis[0]

    @property
    def tangents(self) -> np.ndarray:
        return self.basis[1:]

    @property
    def tangent_offset(self) -> float:
        """Value of normal . x on H_u."""
        return float(self.normal @ self.u)

    def to_dict(self) -> dict:
        return {"u": [float(c) for c in self.u], "model": self.model,
                "basis": [[float(c) for c in row] for row in self.basis]}


def _unit(u: Sequence[float]) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size < 2:
        raise GeometryError("direction must be a vector of length d >= 2")
    if not np.all(np.isfinite(u)):
        raise GeometryError("direction has non-finite entries")
    n = float(np.linalg.norm(u))
    if abs(n - 1.0) > 1e-9:
        raise GeometryError(f"direction must have unit length, got |u|={n}")
    return u


def _fix_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def _complete(normal: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Gram-Schmidt of the candidates against ``normal``; returns d x d rows."""
    d = normal.size
    rows = [normal]
    for c in candidates:
        w = c.astype(float).copy()
        for r in rows:
            w -= (w @ r) * r
        nrm = np.linalg.norm(w)
        if nrm > 1e-9:
            w = w / nrm
            # one re-orthogonalization pass keeps dot products at 1e-16
            for r in rows:
                w -= (w @ r) * r
            rows.append(_fix_sign(w / np.linalg.norm(w)))
        if len(rows) == d:
            break
    if len(rows) != d:
        raise GeometryError("could not complete an orthonormal basis")
    return np.array(rows)


def _candidate_order(d: int) -> np.ndarray:
    eye = np.eye(d)
    return np.vstack([eye[1:], eye[:1]])


def make_frame(u: Sequence[float], shape_model: str = "euclidean_ball",
               tangent_data: Sequence[Sequence[float]] | None = None) -> Frame:
    """Frame at direction u for a model of the limit shape.

    ``euclidean_ball`` uses u as the normal, ``l1_ball`` the normal of the
    l1 facet (or face) containing u, and ``empirical`` the hyperplane spanned
    by measured tangent vectors. Tangent vectors are Gram-Schmidt images of
    e_2, ..., e_d, e_1 with their first nonzero coordinate made positive.
    For u = e_1 the standard basis is returned in every model.
    """
    u = _unit(u)
    d = u.size
    if shape_model not in ("euclidean_ball", "l1_ball", "empirical"):
        raise GeometryError(f"unknown shape model {shape_model!r}")
    e1 = np.zeros(d)
    e1[0] = 1.0
    if shape_model == "empirical":
        if tangent_data is None:
            raise GeometryError("empirical model needs tangent vectors")
        data = np.atleast_2d(np.asarray(tangent_data, dtype=float))
        if data.shape[1] != d:
            raise GeometryError("tangent vectors have the wrong dimension")
        _, sv, vt = np.linalg.svd(data, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * max(sv.max(initial=0.0), 1e-300)))
        if rank < d - 1:
            raise GeometryError(f"degenerate tangent data: rank {rank} < {d - 1}")
        if rank > d - 1:
            raise GeometryError("tangent data spans all of R^d; no hyperplane")
    if np.array_equal(u, e1):
        return Frame(u.copy(), np.eye(d), shape_model)
    if shape_model == "euclidean_ball":
        normal = u.copy()
        candidates = _candidate_order(d)
    elif shape_model == "l1_ball":
        # the normal cone of the l1 ball at u contains sign(u); zeroing the
        # coordinates where u vanishes is the choice best aligned with u
        g = np.where(np.abs(u) > 1e-12, np.sign(u), 0.0)
        normal = g / np.linalg.norm(g)
        candidates = _candidate_order(d)
    else:
        normal = vt[d - 1].copy()
        if abs(normal @ u) < 1e-12:
            raise GeometryError("direction lies in the measured tangent hyperplane")
        if normal @ u < 0:
            normal = -normal
        span = vt[: d - 1]
        candidates = (_candidate_order(d) @ span.T) @ span
    basis = _complete(normal / np.linalg.norm(normal), candidates)
    return Frame(u.copy(), basis, shape_model)


# ---------------------------------------------------------------------------
# regions


class Region:
    """Base class: a pure membership predicate on R^d."""

    d: int | None = None

    def contains(self, x: Sequence[float]) -> bool:
        return bool(self.contains_many(np.asarray([x], dtype=float))[0])

    def contains_many(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, d: int) -> tuple[list[int | None], list[int | None]]:
        """Per-axis integer bounds of the lattice points inside (None = open)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Everything(Region):
    def contains_many(self, xs):
        return np.ones(len(xs), dtype=bool)

    def bounds(self, d):
        return [None] * d, [None] * d

    def to_dict(self):
        return {"kind": "everything"}


@dataclass(frozen=True)
class Box(Region):
    """Axis-parallel box, closed on both sides."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise GeometryError("box bounds have different lengths")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise GeometryError("box lower bound exceeds upper bound")

    @property
    def d(self):
        return len(self.lo)

    def contains_many(self, xs):
        xs = np.asarray(xs, dtype=float)
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((xs >= lo - TOL) & (xs <= hi + TOL), axis=1)

    def bounds(self, d):
        return ([math.ceil(a - TOL) for a in self.lo],
                [math.floor(b + TOL) for b in self.hi])

    def to_dict(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False)
class Cylinder(Region):
    """{base + y1 * axis + sum_i y_i * tangent_i : y1 in I, |y_i| <= height}.

    ``interval=None`` means y1 ranges over all of R.
    """

    base: tuple[float, ...]
    frame: Frame
    axis: tuple[float, ...]
    interval: tuple[float, float] | None
    height: float
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.frame.d
        if len(self.base) != d or len(self.axis) != d:
            raise GeometryError("cylinder base/axis dimension mismatch")
        if not self.height > 0:
            raise GeometryError(f"cylinder height must be positive, got {self.height}")
        if self.interval is not None and self.interval[0] > self.interval[1]:
            raise GeometryError("cylinder interval has lo > hi")
        a = np.vstack([np.asarray(self.axis, float), self.frame.tangents]).T
        if np.linalg.matrix_rank(a, tol=1e-12) < d:
            raise GeometryError("singular cylinder: axis lies in the tangent span")
        object.__setattr__(self, "_inv", np.linalg.inv(a))

    @property
    def d(self):
        return self.frame.d

    def coordinates(self, xs: np.ndarray) -> np.ndarray:
        """(y1, y2, ..., yd) of each point in the cylinder's own frame."""
        xs = np.asarray(xs, dtype=float) - np.asarray(self.base, float)
        return xs @ self._inv.T

    def contains_many(self, xs):
        y = self.coordinates(xs)
        ok = np.all(np.abs(y[:, 1:]) <= self.height + TOL, axis=1)
        if self.interval is not None:
            ok &= (y[:, 0] >= self.interval[0] - TOL) & (y[:, 0] <= self.interval[1] + TOL)
        return ok

    def bounds(self, d):
        base = np.asarray(self.base, float)
        axis = np.asarray(self.axis, float)
        spread = self.height * np.abs(self.frame.tangents).sum(axis=0)
        lo: list[int | None] = []
        hi: list[int | None] = []
        for k in range(d):
            if self.interval is None:
                if abs(axis[k]) > 0:
                    lo.append(None)
                    hi.append(None)
                    continue
                a_lo = a_hi = 0.0
            else:
                ends = (self.interval[0] * axis[k], self.interval[1] * axis[k])
                a_lo, a_hi = min(ends), max(ends)
            lo.append(math.floor(base[k] + a_lo - spread[k] - 1))
            hi.append(math.ceil(base[k] + a_hi + spread[k] + 1))
        return lo, hi

    def to_dict(self):
        return {"kind": "cylinder", "base": [float(c) for c in self.base],
                "axis": [float(c) for c in self.axis],
                "interval": None if self.interval is None else list(self.interval),
                "height": self.height, "frame": self.frame.to_dict()}


@dataclass(frozen=True, eq=False)
class Slab(Region):
    """Points whose coordinate along the frame normal lies in [lo, hi]."""

    frame: Frame
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise GeometryError("slab has lo > hi")

    @property
    def d(self):
        return self.frame.d

    def contains_many(self, xs):
        s = np.asarray(xs, dtype=float) @ self.frame.normal
        return (s >= self.lo - TOL) & (s <= self.hi + TOL)

    def bounds(self, d):
        n = self.frame.normal
        lo: list[int | None] = [None] * d
        hi: list[int | None] = [None] * d
        nz = np.flatnonzero(np.abs(n) > 0)
        if nz.size == 1:
            k = int(nz[0])
            ends = sorted((self.lo / n[k], self.hi / n[k]))
            lo[k] = math.ceil(ends[0] - TOL)
            hi[k] = math.floor(ends[1] + TOL)
        return lo, hi

    def to_dict(self):
        return {"kind": "slab", "lo": self.lo, "hi": self.hi,
                "frame": self.frame.to_dict()}


def region_contains(r: Region, x: Sequence[float]) -> bool:
    return r.contains(x)


def axis_cylinder(frame: Frame, axis: Sequence[float], interval, height: float,
                  base: Sequence[float] | None = None) -> Cylinder:
    d = frame.d
    base = tuple(0.0 for _ in range(d)) if base is None else tuple(float(c) for c in base)
    return Cylinder(base, frame, tuple(float(c) for c in axis),
                    None if interval is None else (float(interval[0]), float(interval[1])),
                    float(height))


# ---------------------------------------------------------------------------
# rational grids


def _rational(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    # shortest decimal that round-trips, so 0.3 means 3/10
    return Fraction(repr(float(x)))


def grid_points(a, b, L: int) -> list[Fraction]:
    """Multiples of 1/L in [a + 1/L, b - 1/L], ascending, as exact rationals."""
    if L <= 0:
        raise ValueError("L must be a positive integer")
    a, b = _rational(a), _rational(b)
    if not a < b:
        raise ValueError(f"grid needs a < b, got a={a}, b={b}")
    step = Fraction(1, L)
    lo = math.ceil((a + step) * L)
    hi = math.floor((b - step) * L)
    return [Fraction(k, L) for k in range(lo, hi + 1)]


# ---------------------------------------------------------------------------
# faces


def _face_offsets(radius: float, spacing: float) -> np.ndarray:
    k = math.floor(radius / spacing + 1e-12)
    return spacing * np.arange(-k, k + 1, dtype=float)


def _sorted_unique(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return points.reshape(0, points.shape[1] if points.ndim == 2 else 0)
    return np.unique(points, axis=0)  # rows sorted lexicographically


def enumerate_face(frame: Frame, axis: Sequence[float], axial: float, radius: float,
                   spacing: float | str = 1.0, base: Sequence[float] | None = None,
                   cap: int = FACE_CAP) -> np.ndarray:
    """Lattice images of {base + axial*axis + sum y_i tangent_i : |y_i| <= radius}.

    With a numeric spacing the y_i range over spacing * Z; with
    ``spacing="continuum"`` every lattice cell meeting the face is returned.
    Rows are distinct and lexicographically sorted.
    """
    d = frame.d
    if not radius > 0:
        raise GeometryError("face radius must be positive")
    center = np.asarray(axis, float) * float(axial)
    if base is not None:
        center = center + np.asarray(base, float)
    tang = frame.tangents
    if spacing == "continuum":
        return _continuum_face(center, tang, float(radius), cap)
    spacing = float(spacing)
    if not spacing >= 1:
        raise GeometryError("spacing must be at least 1 (or 'continuum')")
    offs = _face_offsets(radius, spacing)
    count = len(offs) ** (d - 1)
    if count > cap:
        raise FaceTooLarge(f"face would have {count} points, cap is {cap}")
    grids = np.meshgrid(*([offs] * (d - 1)), indexing="ij")
    ys = np.stack([g.ravel() for g in grids], axis=1)
    pts = center + ys @ tang
    return _sorted_unique(floor_points(pts))


def _continuum_face(center: np.ndarray, tang: np.ndarray, radius: float, cap: int) -> np.ndarray:
    d = center.size
    # axis-aligned faces have a closed form: a box of cells
    aligned = all(np.count_nonzero(np.abs(t) > 0) == 1 for t in tang)
    if aligned:
        lo = center.copy()
        hi = center.copy()
        for t in tang:
            k = int(np.flatnonzero(t)[0])
            lo[k] -= radius
            hi[k] += radius
        ranges = []
        for k in range(d):
            if lo[k] == hi[k]:
                ranges.append(np.array([math.floor(lo[k])]))
            else:
                # the closed interval [lo, hi] meets cells floor(lo)..floor(hi)
                ranges.append(np.arange(math.floor(lo[k]), math.floor(hi[k]) + 1))
        count = math.prod(len(r) for r in ranges)
        if count > cap:
            raise FaceTooLarge(f"face would have {count} points, cap is {cap}")
        grids = np.meshgrid(*ranges, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    return _continuum_face_lp(center, tang, radius, cap)


def _continuum_face_lp(center, tang, radius, cap):
    from scipy.optimize import linprog

    d = center.size
    m = d - 1
    n_side = max(2, math.ceil(2 * radius) + 1)
    est = (n_side * 3) ** m
    if est > cap:
        raise FaceTooLarge(f"face would have about {est} candidate cells, cap is {cap}")
    # sample spacing <= 1 keeps every touched cell within one step of a sample
    offs = np.linspace(-radius, radius, n_side)
    grids = np.meshgrid(*([offs] * m), indexing="ij")
    ys = np.stack([g.ravel() for g in grids], axis=1)
    base_cells = floor_points(center + ys @ tang)
    shifts = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
    cand = _sorted_unique((base_cells[:, None, :] + shifts[None, :, :]).reshape(-1, d))
    keep = []
    a_ub = np.zeros((2 * d, m + 1))
    a_ub[:d, :m] = -tang.T
    a_ub[d:, :m] = tang.T
    a_ub[d:, m] = 1.0
    bounds = [(-radius, radius)] * m + [(-1.0, 1.0)]
    c = np.zeros(m + 1)
    c[m] = -1.0
    for z in cand:
        b_ub = np.concatenate([center - z, z + 1 - center])
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        # the cell is half-open, so the face must reach strictly inside it
        if res.status == 0 and -res.fun > 1e-12:
            keep.append(z)
    if not keep:
        return np.zeros((0, d), dtype=np.int64)
    return np.array(keep, dtype=np.int64)


def hyperplane_cells(coords: np.ndarray, normal: np.ndarray, level: float) -> np.ndarray:
    """Which lattice points z have a cell z + [0,1)^d meeting {x : normal.x = level}."""
    normal = np.asarray(normal, float)
    s = np.asarray(coords, dtype=float) @ normal
    neg = normal[normal < 0].sum()
    pos = normal[normal > 0].sum()
    low = s + neg
    high = s + pos
    # the minimum over the half-open cell is attained only if no coefficient is negative
    lower_ok = (level > low) | ((level == low) & (neg == 0))
    upper_ok = (level < high) | ((level == high) & (pos == 0))
    return lower_ok & upper_ok


def transversal_distance(points: np.ndarray, anchor: Sequence[float],
                         direction: Sequence[float]) -> np.ndarray:
    """Euclidean distance of each point to the line anchor + R * direction."""
    direction = np.asarray(direction, float)
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise GeometryError("line direction must be nonzero")
    w = np.asarray(points, float) - np.asarray(anchor, float)
    along = w @ (direction / nrm)
    perp = w - np.outer(along, direction / nrm)
    return np.linalg.norm(perp, axis=1)


def hyperplane_points(normal: Sequence[float], level: float,
                      lo: Sequence[int], hi: Sequence[int], cap: int = FACE_CAP) -> np.ndarray:
    """Lattice points in the box [lo, hi] whose cells meet {normal . x = level}."""
    normal = np.asarray(normal, float)
    d = normal.size
    k = int(np.argmax(np.abs(normal)))
    others = [j for j in range(d) if j != k]
    count = math.prod(int(hi[j]) - int(lo[j]) + 1 for j in others)
    if count * 3 > cap:
        raise FaceTooLarge(f"hyperplane section would need {count * 3} candidates, cap is {cap}")
    if count <= 0 or hi[k] < lo[k]:
        return np.zeros((0, d), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(lo[j], hi[j] + 1) for j in others], indexing="ij")
    rest = np.stack([g.ravel() for g in grids], axis=1) if others else np.zeros((1, 0))
    # solve for the k-th coordinate, then widen by the cell extent
    partial = rest @ normal[others] if others else np.zeros(1)
    span = np.abs(normal[others]).sum() / abs(normal[k]) if others else 0.0
    centre = (level - partial) / normal[k]
    first = np.floor(centre - span - 1).astype(np.int64)
    width = int(math.ceil(2 * span)) + 3
    cand = np.empty((len(rest) * width, d), dtype=np.int64)
    for s in range(width):
        block = cand[s * len(rest):(s + 1) * len(rest)]
        block[:, others] = rest
        block[:, k] = first + s
    keep = (cand[:, k] >= lo[k]) & (cand[:, k] <= hi[k])
    cand = cand[keep]
    cand = cand[hyperplane_cells(cand, normal, level)]
    return _sorted_unique(cand)
