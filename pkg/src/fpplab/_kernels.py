"""Compiled inner loops: keyed edge hashing and windowed Dijkstra.

Everything here works on flat numpy arrays so numba can compile it. The
public modules wrap these functions with validation and friendlier types.

Search state lives in dense arrays over a rectangular window of Z^d. Vertex
ids are row-major window indices with the first coordinate most significant,
so comparing ids compares coordinates lexicographically. The frontier is a
bucket queue (ring of unsorted buckets, exact binary heap for the bucket
being drained) keyed by (time, id), which pops in exactly the same order as a
single heap would.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_SCALE53 = 1.0 / 9007199254740992.0  # 2**-53

KIND_CONSTANT = 0
KIND_UNIFORM = 1
KIND_TWO_POINT = 2
KIND_TRUNC_EXP = 3

STATUS_OK = 0
STATUS_DISCONNECTED = 1
STATUS_ESCAPED = 2
STATUS_BUDGET = 3
STATUS_OVERFLOW = 4

RING = 1024  # buckets in the ring, power of two

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G = np.uint64(GOLDEN)


def mix64_py(z: int) -> int:
    """splitmix64 finalizer on Python ints."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def field_key(seed: int, replica: int) -> int:
    """64-bit stream key for one (seed, replica) pair, as a signed int64."""
    k = mix64_py((seed & MASK64) + GOLDEN)
    k = mix64_py(k ^ ((replica * 0xD1B54A32D192ED03 + 0x8CB92BA72F3D8DD7) & MASK64))
    return k - (1 << 64) if k >= (1 << 63) else k


def coordinate_multipliers(d: int) -> np.ndarray:
    """Odd 64-bit multipliers, one per coordinate plus one for the axis."""
    out = [(mix64_py(0xA0761D6478BD642F * (i + 1)) | 1) for i in range(d + 1)]
    return np.array([m - (1 << 64) if m >= (1 << 63) else m for m in out],
                    dtype=np.int64)


@njit(cache=True, nogil=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _uniform_from_lin(key, lin):
    h = _mix(lin ^ np.uint64(key))
    return (np.float64(h >> np.uint64(11)) + 0.5) * _SCALE53


@njit(cache=True, nogil=True, inline="always")
def _vertex_lin(mults, coords):
    lin = np.uint64(0)
    for i in range(coords.shape[0]):
        lin += np.uint64(coords[i]) * np.uint64(mults[i])
    return lin


@njit(cache=True, nogil=True, inline="always")
def edge_uniform(key, mults, coords, axis):
    """Uniform in (0, 1) for the edge leaving ``coords`` along +axis.

    The edge is hashed through a linear form of its lower endpoint and axis,
    which lets the search update it incrementally between neighbours.
    """
    d = coords.shape[0]
    lin = _vertex_lin(mults, coords) + np.uint64(axis + 1) * np.uint64(mults[d])
    return _uniform_from_lin(key, lin)


@njit(cache=True, nogil=True, inline="always")
def weight_from_uniform(kind, p0, p1, p2, u):
    if kind == 0:
        return p0
    if kind == 1:
        w = p0 + (p1 - p0) * u
        return w if w < p1 else p1
    if kind == 2:
        return p1 if u < p2 else p0
    # truncated exponential: p0 = rate, p1 = cap, p2 = 1 - exp(-rate * cap)
    x = -np.log1p(-u * p2) / p0
    return x if x < p1 else p1


@njit(cache=True, nogil=True)
def planted_weight(plants, coords, axis, minus, w):
    """Apply override rows to the edge along ``axis`` at ``coords``.

    Rows are ``lo[0:d], hi[0:d], axis (-1 = any), value``; the lower
    endpoint is ``coords`` shifted by -1 on ``axis`` when ``minus`` is set.
    The last matching row wins.
    """
    d = coords.shape[0]
    for p in range(plants.shape[0]):
        ax = plants[p, 2 * d]
        if ax >= 0 and np.int64(ax) != axis:
            continue
        ok = True
        for c in range(d):
            x = coords[c]
            if minus and c == axis:
                x -= 1
            if x < plants[p, c] or x > plants[p, d + c]:
                ok = False
                break
        if ok:
            w = plants[p, 2 * d + 1]
    return w


@njit(cache=True, nogil=True, inline="always")
def edge_weight(key, mults, kind, p0, p1, p2, plants, coords, axis):
    w = weight_from_uniform(kind, p0, p1, p2,
                            edge_uniform(key, mults, coords, axis))
    if plants.shape[0] > 0:
        w = planted_weight(plants, coords, axis, False, w)
    return w


@njit(cache=True, nogil=True)
def weights_for_edges(key, mults, kind, p0, p1, p2, plants, lows, axes):
    """edge_weight over the rows of ``lows`` (shape m x d)."""
    m = lows.shape[0]
    out = np.empty(m, dtype=np.float64)
    for j in range(m):
        out[j] = edge_weight(key, mults, kind, p0, p1, p2, plants, lows[j],
                             axes[j])
    return out


@njit(cache=True, nogil=True)
def uniforms_for_edges(key, mults, lows, axes):
    m = lows.shape[0]
    out = np.empty(m, dtype=np.float64)
    for j in range(m):
        out[j] = edge_uniform(key, mults, lows[j], axes[j])
    return out


@njit(cache=True, nogil=True)
def weights_for_keys(keys, mults, kind, p0, p1, p2, plants, lows, axes):
    """Weights of a fixed edge list under many keys, shape (len(keys), m)."""
    m = lows.shape[0]
    out = np.empty((keys.shape[0], m), dtype=np.float64)
    for r in range(keys.shape[0]):
        for j in range(m):
            out[r, j] = edge_weight(keys[r], mults, kind, p0, p1, p2,
                                    plants, lows[j], axes[j])
    return out


# ---------------------------------------------------------------------------
# exact binary heap on (time, id) pairs


@njit(cache=True, nogil=True, inline="always")
def _less(ka, va, kb, vb):
    return ka < kb or (ka == kb and va < vb)


@njit(cache=True, nogil=True, inline="always")
def _heap_push(hk, hv, size, k, v):
    i = size
    while i > 0:
        p = (i - 1) >> 1
        if _less(k, v, hk[p], hv[p]):
            hk[i] = hk[p]
            hv[i] = hv[p]
            i = p
        else:
            break
    hk[i] = k
    hv[i] = v


@njit(cache=True, nogil=True, inline="always")
def _heap_drop_root(hk, hv, size):
    # ``size`` is the size after removal; the old last element sinks from 0
    k = hk[size]
    v = hv[size]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        r = c + 1
        if r < size and _less(hk[r], hv[r], hk[c], hv[c]):
            c = r
        if _less(hk[c], hv[c], k, v):
            hk[i] = hk[c]
            hv[i] = hv[c]
            i = c
        else:
            break
    hk[i] = k
    hv[i] = v


# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def dijkstra_window(key, mults, kind, p0, p1, p2, plants, inv_delta,
                    lo, shape, strides, closed_lo, closed_hi,
                    mask, use_mask, sources, target_flag, stop_first,
                    n_required, budget,
                    dist, pred, state, touched,
                    bhead, ek, ev, enext, hk, hv):
    """Dijkstra inside a rectangular window of Z^d.

    ``closed_lo/closed_hi`` mark window faces that coincide with the region
    boundary; stepping across any other face aborts with STATUS_ESCAPED so
    the caller can enlarge the window. Work arrays must be preset
    (dist=inf, pred=-1, state=0); every id written is appended to
    ``touched`` for a cheap reset.

    Returns (status, first_hit, settled_count, n_touched).
    """
    d = lo.shape[0]
    n_plants = plants.shape[0]
    coords = np.empty(d, dtype=np.int64)
    rel = np.empty(d, dtype=np.int64)
    nb = bhead.shape[0]
    for i in range(nb):
        bhead[i] = -1
    hcap = hk.shape[0]
    ecap = ek.shape[0]
    cur = 0          # bucket being drained through the heap
    size = 0         # heap size
    nring = 0        # entries parked in the ring
    free = -1        # recycled pool entries
    top = 0          # pool high-water mark
    n_touched = 0
    for s in range(sources.shape[0]):
        v = sources[s]
        if state[v] != 0:
            continue
        dist[v] = 0.0
        pred[v] = -1
        state[v] = 1
        touched[n_touched] = v
        n_touched += 1
        if size >= hcap:
            return STATUS_OVERFLOW, -1, 0, n_touched
        _heap_push(hk, hv, size, 0.0, v)
        size += 1
    settled = 0
    found = 0
    hit = -1
    while True:
        if size == 0:
            if nring == 0:
                break
            while size == 0:
                cur += 1
                b = cur & (nb - 1)
                e = bhead[b]
                if e < 0:
                    continue
                bhead[b] = -1
                while e >= 0:
                    nx = enext[e]
                    v = ev[e]
                    if state[v] != 2 and ek[e] == dist[v]:
                        if size >= hcap:
                            return STATUS_OVERFLOW, hit, settled, n_touched
                        _heap_push(hk, hv, size, ek[e], v)
                        size += 1
                    nring -= 1
                    enext[e] = free
                    free = e
                    e = nx
                if nring == 0 and size == 0:
                    break
            if size == 0:
                break
        du = hk[0]
        u = hv[0]
        size -= 1
        if size > 0:
            _heap_drop_root(hk, hv, size)
        if state[u] == 2 or du != dist[u]:
            continue
        state[u] = 2
        settled += 1
        if target_flag[u] != 0:
            if hit < 0:
                hit = u
            found += 1
            if stop_first or found >= n_required:
                return STATUS_OK, hit, settled, n_touched
        if settled > budget:
            return STATUS_BUDGET, hit, settled, n_touched
        rem = u
        for k in range(d):
            q = rem // strides[k]
            rem -= q * strides[k]
            rel[k] = q
            coords[k] = lo[k] + q
        ulin = _vertex_lin(mults, coords)
        axis_mult = np.uint64(mults[d])
        for j in range(2 * d):
            k = j >> 1
            if j & 1 == 0:
                if rel[k] + 1 >= shape[k]:
                    if closed_hi[k]:
                        continue
                    return STATUS_ESCAPED, hit, settled, n_touched
                v = u + strides[k]
                lin = ulin + np.uint64(k + 1) * axis_mult
            else:
                if rel[k] == 0:
                    if closed_lo[k]:
                        continue
                    return STATUS_ESCAPED, hit, settled, n_touched
                v = u - strides[k]
                lin = ulin + np.uint64(k + 1) * axis_mult - np.uint64(mults[k])
            sv = state[v]
            if sv == 2:
                continue
            if use_mask and mask[v] == 0:
                continue
            w = weight_from_uniform(kind, p0, p1, p2, _uniform_from_lin(key, lin))
            if n_plants > 0:
                w = planted_weight(plants, coords, k, j & 1 == 1, w)
            nd = du + w
            if sv == 0 or nd < dist[v]:
                if sv == 0:
                    state[v] = 1
                    touched[n_touched] = v
                    n_touched += 1
                dist[v] = nd
                pred[v] = u
                bid = np.int64(nd * inv_delta)
                if bid == cur:
                    if size >= hcap:
                        return STATUS_OVERFLOW, hit, settled, n_touched
                    _heap_push(hk, hv, size, nd, v)
                    size += 1
                else:
                    if free >= 0:
                        e = free
                        free = enext[e]
                    else:
                        if top >= ecap:
                            return STATUS_OVERFLOW, hit, settled, n_touched
                        e = top
                        top += 1
                    ek[e] = nd
                    ev[e] = v
                    b = bid & (nb - 1)
                    enext[e] = bhead[b]
                    bhead[b] = e
                    nring += 1
            elif nd == dist[v] and u < pred[v]:
                pred[v] = u
    return STATUS_DISCONNECTED, hit, settled, n_touched


@njit(cache=True, nogil=True)
def reset_work(dist, pred, state, touched, n_touched):
    for i in range(n_touched):
        v = touched[i]
        dist[v] = np.inf
        pred[v] = -1
        state[v] = 0


@njit(cache=True, nogil=True)
def batch_first_passage(keys, mults, kind, p0, p1, p2, plants, inv_delta,
                        lo, shape, strides, closed_lo, closed_hi,
                        mask, use_mask, sources, target_flag, budget,
                        dist, pred, state, touched,
                        bhead, ek, ev, enext, hk, hv):
    """First-hit passage time for each key over one fixed geometry.

    Returns (times, statuses, settled counts); a time is nan whenever its
    status is not STATUS_OK, and the caller handles those replicas again.
    """
    n = keys.shape[0]
    times = np.empty(n, dtype=np.float64)
    status = np.empty(n, dtype=np.int64)
    counts = np.empty(n, dtype=np.int64)
    for r in range(n):
        st, hit, settled, nt = dijkstra_window(
            keys[r], mults, kind, p0, p1, p2, plants, inv_delta, lo, shape, strides,
            closed_lo, closed_hi, mask, use_mask, sources, target_flag, True,
            1, budget, dist, pred, state, touched,
            bhead, ek, ev, enext, hk, hv)
        status[r] = st
        counts[r] = settled
        times[r] = dist[hit] if st == STATUS_OK else np.nan
        reset_work(dist, pred, state, touched, nt)
    return times, status, counts


@njit(cache=True, nogil=True)
def _edge_between(mults, lo, strides, a, b, low_coords):
    # (linear hash form, axis) of the edge joining adjacent window ids a, b;
    # its lower endpoint is written to low_coords
    d = lo.shape[0]
    low = a if a < b else b
    diff = (b - a) if b > a else (a - b)
    axis = 0
    for k in range(d):
        if strides[k] == diff:
            axis = k
    lin = np.uint64(axis + 1) * np.uint64(mults[d])
    rem = low
    for k in range(d):
        q = rem // strides[k]
        rem -= q * strides[k]
        low_coords[k] = lo[k] + q
        lin += np.uint64(lo[k] + q) * np.uint64(mults[k])
    return lin, axis


@njit(cache=True, nogil=True)
def bidirectional_time(key, mults, kind, p0, p1, p2, plants, inv_delta,
                       lo, shape, strides, closed_lo, closed_hi,
                       mask, use_mask, source, target, budget,
                       dist, pred, state, touched,
                       bhead, ek, ev, enext, hk, hv, path_buf):
    """Point-to-point time by a two-sided search (time only).

    Both searches share one frontier over doubled ids ``2 * v + side``, so
    the global minimum alternates the sides automatically. The search stops
    once twice the popped time reaches the best meeting value; the reported
    time is then re-accumulated along the meeting path from ``source`` in
    path order, so it is the running sum of an optimal path.

    Returns (status, time, settled_count, n_touched).
    """
    d = lo.shape[0]
    n_plants = plants.shape[0]
    coords = np.empty(d, dtype=np.int64)
    rel = np.empty(d, dtype=np.int64)
    nb = bhead.shape[0]
    for i in range(nb):
        bhead[i] = -1
    hcap = hk.shape[0]
    ecap = ek.shape[0]
    cur = 0
    size = 0
    nring = 0
    free = -1
    top = 0
    n_touched = 0
    if source == target:
        return STATUS_OK, 0.0, 0, 0
    for side in range(2):
        v = 2 * (source if side == 0 else target) + side
        dist[v] = 0.0
        pred[v] = -1
        state[v] = 1
        touched[n_touched] = v
        n_touched += 1
        _heap_push(hk, hv, size, 0.0, v)
        size += 1
    best = np.inf
    meet_a = -1
    meet_b = -1
    settled = 0
    axis_mult = np.uint64(mults[d])
    while True:
        if size == 0:
            if nring == 0:
                break
            while size == 0:
                cur += 1
                b = cur & (nb - 1)
                e = bhead[b]
                if e < 0:
                    continue
                bhead[b] = -1
                while e >= 0:
                    nx = enext[e]
                    v = ev[e]
                    if state[v] != 2 and ek[e] == dist[v]:
                        if size >= hcap:
                            return STATUS_OVERFLOW, np.nan, settled, n_touched
                        _heap_push(hk, hv, size, ek[e], v)
                        size += 1
                    nring -= 1
                    enext[e] = free
                    free = e
                    e = nx
                if nring == 0 and size == 0:
                    break
            if size == 0:
                break
        du = hk[0]
        su = hv[0]
        size -= 1
        if size > 0:
            _heap_drop_root(hk, hv, size)
        if state[su] == 2 or du != dist[su]:
            continue
        if du + du >= best:
            break
        state[su] = 2
        settled += 1
        if settled > budget:
            return STATUS_BUDGET, np.nan, settled, n_touched
        side = su & 1
        other = 1 - side
        u = su >> 1
        rem = u
        for k in range(d):
            q = rem // strides[k]
            rem -= q * strides[k]
            rel[k] = q
            coords[k] = lo[k] + q
        ulin = _vertex_lin(mults, coords)
        for j in range(2 * d):
            k = j >> 1
            if j & 1 == 0:
                if rel[k] + 1 >= shape[k]:
                    if closed_hi[k]:
                        continue
                    return STATUS_ESCAPED, np.nan, settled, n_touched
                v = u + strides[k]
                lin = ulin + np.uint64(k + 1) * axis_mult
            else:
                if rel[k] == 0:
                    if closed_lo[k]:
                        continue
                    return STATUS_ESCAPED, np.nan, settled, n_touched
                v = u - strides[k]
                lin = ulin + np.uint64(k + 1) * axis_mult - np.uint64(mults[k])
            if use_mask and mask[v] == 0:
                continue
            sv = state[2 * v + side]
            if sv == 2:
                continue
            w = weight_from_uniform(kind, p0, p1, p2, _uniform_from_lin(key, lin))
            if n_plants > 0:
                w = planted_weight(plants, coords, k, j & 1 == 1, w)
            nd = du + w
            if state[2 * v + other] != 0:
                cand = nd + dist[2 * v + other]
                if cand < best:
                    best = cand
                    meet_a = su
                    meet_b = 2 * v + other
            vv = 2 * v + side
            if sv == 0 or nd < dist[vv]:
                if sv == 0:
                    state[vv] = 1
                    touched[n_touched] = vv
                    n_touched += 1
                dist[vv] = nd
                pred[vv] = su
                bid = np.int64(nd * inv_delta)
                if bid == cur:
                    if size >= hcap:
                        return STATUS_OVERFLOW, np.nan, settled, n_touched
                    _heap_push(hk, hv, size, nd, vv)
                    size += 1
                else:
                    if free >= 0:
                        e = free
                        free = enext[e]
                    else:
                        if top >= ecap:
                            return STATUS_OVERFLOW, np.nan, settled, n_touched
                        e = top
                        top += 1
                    ek[e] = nd
                    ev[e] = vv
                    b = bid & (nb - 1)
                    enext[e] = bhead[b]
                    bhead[b] = e
                    nring += 1
    if meet_a < 0:
        return STATUS_DISCONNECTED, np.nan, settled, n_touched
    # assemble the meeting path source -> target in path_buf
    fa = meet_a if meet_a & 1 == 0 else meet_b
    fb = meet_b if meet_a & 1 == 0 else meet_a
    m = 0
    x = fa
    while x >= 0:
        path_buf[m] = x >> 1
        m += 1
        x = pred[x]
    # reverse the forward half in place
    i = 0
    j2 = m - 1
    while i < j2:
        t = path_buf[i]
        path_buf[i] = path_buf[j2]
        path_buf[j2] = t
        i += 1
        j2 -= 1
    x = fb
    while x >= 0:
        path_buf[m] = x >> 1
        m += 1
        x = pred[x]
    total = 0.0
    for i in range(m - 1):
        lin, ax = _edge_between(mults, lo, strides, path_buf[i],
                                path_buf[i + 1], coords)
        w = weight_from_uniform(kind, p0, p1, p2, _uniform_from_lin(key, lin))
        if n_plants > 0:
            w = planted_weight(plants, coords, ax, False, w)
        total += w
    return STATUS_OK, total, settled, n_touched


@njit(cache=True, nogil=True)
def batch_bidirectional(keys, mults, kind, p0, p1, p2, plants, inv_delta,
                        lo, shape, strides, closed_lo, closed_hi,
                        mask, use_mask, source, target, budget,
                        dist, pred, state, touched,
                        bhead, ek, ev, enext, hk, hv, path_buf):
    n = keys.shape[0]
    times = np.empty(n, dtype=np.float64)
    status = np.empty(n, dtype=np.int64)
    counts = np.empty(n, dtype=np.int64)
    for r in range(n):
        st, t, settled, nt = bidirectional_time(
            keys[r], mults, kind, p0, p1, p2, plants, inv_delta, lo, shape, strides,
            closed_lo, closed_hi, mask, use_mask, source, target, budget,
            dist, pred, state, touched, bhead, ek, ev, enext, hk, hv, path_buf)
        status[r] = st
        counts[r] = settled
        times[r] = t
        reset_work(dist, pred, state, touched, nt)
    return times, status, counts
