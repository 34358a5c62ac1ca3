"""Boolean operations and offsetting on LDNI solids as 1D interval algebra."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._parallel import chunks, pmap, resolve_workers
from .errors import GridMismatch, OffsetOverflow, ZeroRadius
from .mesh import Axis
from .sampler import Ldni, LdniSolid, NormalMode, PixelColumn, decode_normals, encode_normals

DEFAULT_EPSILON = 1e-5


class BooleanOp(enum.IntEnum):
    UNION = 0
    INTERSECTION = 1
    DIFFERENCE = 2

    @classmethod
    def parse(cls, name):
        aliases = {"union": cls.UNION, "intersect": cls.INTERSECTION,
                   "intersection": cls.INTERSECTION, "difference": cls.DIFFERENCE,
                   "subtract": cls.DIFFERENCE}
        if isinstance(name, cls):
            return name
        return aliases[str(name).lower()]


@dataclass(frozen=True)
class BooleanConfig:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")


@njit(cache=True, nogil=True, inline="always")
def _apply(op, a, b):
    if op == 0:
        return a or b
    if op == 1:
        return a and b
    return a and not b


@njit(cache=True, nogil=True)
def _merge_column(da, db, op, eps, out_depth, out_src, out_idx, base):
    """Sweep two sorted sample lists; write result endpoints from ``base``.

    out_src is 0 for an endpoint taken from a, 1 from b.  Events at equal
    depth are processed together, so touching intervals merge and
    zero-length pieces never appear; a's sample wins ties.  Intervals thinner
    than eps are dropped.  Returns the number of endpoints written.
    """
    na, nb = len(da), len(db)
    ia = 0
    ib = 0
    in_a = False
    in_b = False
    state = False
    n = 0
    while ia < na or ib < nb:
        if ib >= nb or (ia < na and da[ia] <= db[ib]):
            x = da[ia]
        else:
            x = db[ib]
        ev_a = ia < na and da[ia] == x
        ev_b = ib < nb and db[ib] == x
        if ev_a:
            in_a = not in_a
        if ev_b:
            in_b = not in_b
        new_state = _apply(op, in_a, in_b)
        if new_state != state:
            out_depth[base + n] = x
            if ev_a:
                out_src[base + n] = 0
                out_idx[base + n] = ia
            else:
                out_src[base + n] = 1
                out_idx[base + n] = ib
            n += 1
            state = new_state
        if ev_a:
            ia += 1
        if ev_b:
            ib += 1
    # small interval removal, in place
    m = 0
    for k in range(0, n, 2):
        lo = out_depth[base + k]
        hi = out_depth[base + k + 1]
        if np.float64(hi) - np.float64(lo) >= eps:
            for t in range(2):
                out_depth[base + m + t] = out_depth[base + k + t]
                out_src[base + m + t] = out_src[base + k + t]
                out_idx[base + m + t] = out_idx[base + k + t]
            m += 2
    return m


@njit(cache=True, nogil=True)
def _merge_image(off_a, da, off_b, db, op, eps, s_lo, s_hi, out_depth, out_src, out_idx,
                 out_count):
    for s in range(s_lo, s_hi):
        a0, a1 = off_a[s], off_a[s + 1]
        b0, b1 = off_b[s], off_b[s + 1]
        base = a0 + b0
        m = _merge_column(da[a0:a1], db[b0:b1], op, eps, out_depth, out_src, out_idx, base)
        for k in range(m):
            if out_src[base + k] == 0:
                out_idx[base + k] += a0
            else:
                out_idx[base + k] += b0
        out_count[s] = m


@njit(cache=True, nogil=True)
def _small_intervals(depths, eps, keep):
    for k in range(0, len(depths), 2):
        ok = np.float64(depths[k + 1]) - np.float64(depths[k]) >= eps
        keep[k] = ok
        keep[k + 1] = ok


def remove_small_intervals(column: PixelColumn, epsilon=DEFAULT_EPSILON) -> PixelColumn:
    """Drop inside-intervals thinner than epsilon."""
    keep = np.ones(len(column.depths), bool)
    _small_intervals(np.asarray(column.depths, np.float32), float(epsilon), keep)
    return PixelColumn(column.depths[keep], column.normals[keep])


def _common_normals(na, nb):
    if na.dtype == nb.dtype:
        return na, nb
    return (decode_normals(na).astype(np.float32), decode_normals(nb).astype(np.float32))


def boolean_columns(a: PixelColumn, b: PixelColumn, op, cfg=BooleanConfig()) -> PixelColumn:
    """Exact 1D set algebra on the inside-intervals of two columns.

    Result endpoints keep the normal of the contributing input sample; in a
    difference, endpoints coming from b have their normal negated.
    """
    op = BooleanOp.parse(op)
    da = np.ascontiguousarray(a.depths, np.float32)
    db = np.ascontiguousarray(b.depths, np.float32)
    n = len(da) + len(db)
    out_d = np.empty(n, np.float32)
    out_s = np.empty(n, np.int8)
    out_i = np.empty(n, np.int64)
    m = _merge_column(da, db, int(op), float(cfg.epsilon), out_d, out_s, out_i, 0)
    na, nb = _common_normals(np.asarray(a.normals), np.asarray(b.normals))
    src, idx = out_s[:m], out_i[:m]
    normals = np.empty((m, 3), na.dtype if len(na) or not len(nb) else nb.dtype)
    from_a = src == 0
    normals[from_a] = na[idx[from_a]]
    nb_sel = nb[idx[~from_a]]
    normals[~from_a] = -nb_sel if op is BooleanOp.DIFFERENCE else nb_sel
    return PixelColumn(out_d[:m].copy(), normals)


def _check_grids(a: LdniSolid, b: LdniSolid):
    if a.grid != b.grid:
        raise GridMismatch(
            f"operands must share one grid (same origin, width and resolution): {a.grid} vs {b.grid}")


def _merge_images(ia: Ldni, ib: Ldni, op, eps, workers):
    w = ia.resolution
    n_cols = w * w
    total = ia.n_samples + ib.n_samples
    out_d = np.empty(total, np.float32)
    out_s = np.empty(total, np.int8)
    out_i = np.empty(total, np.int64)
    count = np.zeros(n_cols, np.int64)

    def run(span):
        _merge_image(ia.offsets, ia.depths, ib.offsets, ib.depths, int(op), float(eps),
                     span[0], span[1], out_d, out_s, out_i, count)

    pmap(run, chunks(n_cols, 4 * resolve_workers(workers)), workers)
    base = ia.offsets[:-1] + ib.offsets[:-1]
    sel = np.repeat(base, count) + (np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count))
    src, idx = out_s[sel], out_i[sel]
    na, nb = _common_normals(ia.normals, ib.normals)
    normals = np.empty((len(sel), 3), na.dtype)
    from_a = src == 0
    normals[from_a] = na[idx[from_a]]
    nb_sel = nb[idx[~from_a]]
    normals[~from_a] = -nb_sel if op == BooleanOp.DIFFERENCE else nb_sel
    offsets = np.zeros(n_cols + 1, np.int64)
    np.cumsum(count, out=offsets[1:])
    return Ldni(ia.axis, ia.grid, offsets, out_d[sel], normals)


def boolean_solid(a: LdniSolid, b: LdniSolid, op, cfg=BooleanConfig(), workers=None) -> LdniSolid:
    """Column-wise boolean of two solids sampled on the identical grid."""
    op = BooleanOp.parse(op)
    _check_grids(a, b)
    mode = a.normal_mode if a.normal_mode == b.normal_mode else NormalMode.ACCURATE
    images = tuple(_merge_images(a[ax], b[ax], op, cfg.epsilon, workers) for ax in Axis)
    return LdniSolid(a.grid, images, mode)


# ---------------------------------------------------------------------------
# offsetting


@njit(cache=True, nogil=True)
def _grow(arr, n):
    out = np.empty(max(16, 2 * n), arr.dtype)
    out[:len(arr)] = arr
    return out


@njit(cache=True, nogil=True, inline="always")
def _f32_key(b):
    """Order-preserving map of float32 bits to uint32."""
    if b & np.uint32(0x80000000):
        return ~b
    return b | np.uint32(0x80000000)


@njit(cache=True, nogil=True, inline="always")
def _prunable(hd, lo, hi, mode):
    for k in range(0, len(hd), 2):
        if mode == 1:
            if hd[k] <= lo and hi <= hd[k + 1]:
                return True
        elif hi > hd[k] and lo < hd[k + 1]:
            return False
    return mode == 2


@njit(cache=True, nogil=True)
def _sphere_union_columns(centers, r, w, d, axis, bucket_off, bucket_ids, s_lo, s_hi,
                          h_off, h_depth, prune):
    """Union of sphere intervals on columns [s_lo, s_hi) of one image.

    ``centers`` are grid-relative and bucketed by the pixel containing their
    (u, v) projection.  Intervals are sorted by (entry depth, buffer order)
    so the result does not depend on worker count.  With prune = 1 chords
    lying inside the host column are skipped (they cannot change a union);
    with prune = 2 chords disjoint from it are skipped (they cannot change a
    difference).
    """
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    reach = int(np.ceil(r / d)) + 1
    r2 = r * r
    cap = 1024
    pix = np.empty(cap, np.int64)
    dep = np.empty(cap, np.float32)
    nor = np.empty((cap, 3), np.float64)
    n = 0
    lo_buf = np.empty(1024, np.float32)
    hi_buf = np.empty(1024, np.float32)
    id_buf = np.empty(1024, np.int64)
    h_buf = np.empty(1024, np.float64)
    for s in range(s_lo, s_hi):
        i = s // w
        j = s % w
        qu = (i + 0.5) * d
        qv = (j + 0.5) * d
        m = 0
        for bi in range(max(0, i - reach), min(w, i + reach + 1)):
            for bj in range(max(0, j - reach), min(w, j + reach + 1)):
                b = bi * w + bj
                for t in range(bucket_off[b], bucket_off[b + 1]):
                    c = bucket_ids[t]
                    du = qu - centers[c, u]
                    dv = qv - centers[c, v]
                    rho2 = du * du + dv * dv
                    if rho2 >= r2:
                        continue
                    h = np.sqrt(r2 - rho2)
                    lo = np.float32(centers[c, axis] - h)
                    hi = np.float32(centers[c, axis] + h)
                    if not lo < hi:
                        continue
                    if prune != 0 and _prunable(h_depth[h_off[s]:h_off[s + 1]], lo, hi, prune):
                        continue
                    if m == len(lo_buf):
                        lo_buf = _grow(lo_buf, m)
                        hi_buf = _grow(hi_buf, m)
                        id_buf = _grow(id_buf, m)
                        h_buf = _grow(h_buf, m)
                    lo_buf[m] = lo
                    hi_buf[m] = hi
                    id_buf[m] = c
                    h_buf[m] = h
                    m += 1
        if m == 0:
            continue
        # sort by (lo, centre id) through one packed integer key
        keys = np.empty(m, np.uint64)
        bits = lo_buf[:m].view(np.uint32)
        for t in range(m):
            keys[t] = (np.uint64(_f32_key(bits[t])) << np.uint64(32)) | np.uint64(t)
        keys.sort()
        order = np.empty(m, np.int64)
        for t in range(m):
            order[t] = np.int64(keys[t] & np.uint64(0xFFFFFFFF))
        k = 0
        while k < m:
            first = order[k]
            cur_lo = lo_buf[first]
            cur_hi = hi_buf[first]
            lo_src = first
            hi_src = first
            k += 1
            while k < m and lo_buf[order[k]] <= cur_hi:
                o = order[k]
                if hi_buf[o] > cur_hi:
                    cur_hi = hi_buf[o]
                    hi_src = o
                k += 1
            if n + 2 > len(pix):
                pix = _grow(pix, n)
                dep = _grow(dep, n)
                nor2 = np.empty((len(pix), 3), np.float64)
                nor2[:n] = nor[:n]
                nor = nor2
            for t in range(2):
                src = lo_src if t == 0 else hi_src
                c = id_buf[src]
                pix[n] = s
                dep[n] = cur_lo if t == 0 else cur_hi
                nor[n, u] = (qu - centers[c, u]) / r
                nor[n, v] = (qv - centers[c, v]) / r
                nor[n, axis] = (-h_buf[src] if t == 0 else h_buf[src]) / r
                n += 1
    return pix[:n], dep[:n], nor[:n]


def _offset_centers(h: LdniSolid):
    """All sample positions of all three images, grid-relative, sorted."""
    o = np.asarray(h.grid.origin)
    pts = np.concatenate([img.sample_points() for img in h.images]) - o
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    return np.ascontiguousarray(pts[order])


def sphere_union_image(centers, radius, grid, axis, mode=NormalMode.ACCURATE, workers=None,
                       host: Ldni | None = None, prune=0) -> Ldni:
    """One image of the union of equal spheres centred at grid-relative ``centers``.

    ``host``/``prune`` let the offset skip chords that cannot affect its
    final boolean with the host image; the plain union is returned otherwise.
    """
    w, d = grid.resolution, grid.pixel_width
    u, v = Axis(axis).plane_axes
    if len(centers):
        bi = np.clip(np.floor(centers[:, u] / d).astype(np.int64), 0, w - 1)
        bj = np.clip(np.floor(centers[:, v] / d).astype(np.int64), 0, w - 1)
        bucket = bi * w + bj
        ids = np.argsort(bucket, kind="stable")
        off = np.zeros(w * w + 1, np.int64)
        np.cumsum(np.bincount(bucket, minlength=w * w), out=off[1:])
    else:
        ids = np.zeros(0, np.int64)
        off = np.zeros(w * w + 1, np.int64)

    if host is None:
        host = Ldni.empty(axis, grid)
        prune = 0

    def run(span):
        return _sphere_union_columns(centers, float(radius), w, d, int(axis), off, ids,
                                     span[0], span[1], host.offsets, host.depths, int(prune))

    parts = pmap(run, chunks(w * w, 4 * resolve_workers(workers)), workers)
    pix = np.concatenate([p[0] for p in parts])
    dep = np.concatenate([p[1] for p in parts])
    nor = np.concatenate([p[2] for p in parts])
    return Ldni.from_records(axis, grid, pix, dep, encode_normals(nor, mode))


def offset_solid(h: LdniSolid, r, cfg=BooleanConfig(), workers=None) -> LdniSolid:
    """Approximate offset by union (r > 0) or subtraction (r < 0) of spheres
    of radius |r| centred at every Hermite sample of all three images."""
    r = float(r)
    if r == 0.0:
        raise ZeroRadius("offset radius must be non-zero")
    centers = _offset_centers(h)
    radius = abs(r)
    if r > 0 and len(centers):
        if centers.min() - radius < 0 or centers.max() + radius > h.grid.width:
            raise OffsetOverflow(
                f"dilation by {r} leaves the grid cube; enlarge the grid before sampling")
    op = BooleanOp.UNION if r > 0 else BooleanOp.DIFFERENCE
    images = []
    for ax in Axis:
        spheres = sphere_union_image(centers, radius, h.grid, ax, h.normal_mode, workers,
                                     host=h[ax], prune=1 if r > 0 else 2)
        images.append(_merge_images(h[ax], spheres, op, cfg.epsilon, workers))
    return LdniSolid(h.grid, tuple(images), h.normal_mode)
