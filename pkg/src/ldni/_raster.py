"""Axis-parallel ray/triangle kernels shared by the sampler and ray queries.

Triangles are projected onto the image plane of an axis with the cyclic
convention (u, v) = ((a + 1) % 3, (a + 2) % 3).  Edge functions are evaluated
in a canonical vertex order (lower global vertex index first) so that the two
faces sharing an edge always see bit-identical values; this is what keeps the
rasterization watertight.
"""
import numpy as np
from numba import njit

MISS = 0
HIT = 1
EDGE_HIT = 2
EDGE_SKIP = 3
VERTEX = 4


@njit(cache=True, nogil=True, inline="always")
def _orient(pu, pv, qu, qv, ru, rv):
    return (qu - pu) * (rv - pv) - (qv - pv) * (ru - pu)


@njit(cache=True, nogil=True, inline="always")
def _edge_fn(P, ia, ib, u, v, qu, qv):
    # canonical: always evaluated from the lower vertex index
    if ia < ib:
        return _orient(P[ia, u], P[ia, v], P[ib, u], P[ib, v], qu, qv)
    return -_orient(P[ib, u], P[ib, v], P[ia, u], P[ia, v], qu, qv)


@njit(cache=True, nogil=True)
def face_signs(P, F, axis):
    """Sign of each face's projected area: +1 faces +axis, -1 faces -axis, 0 parallel."""
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    out = np.zeros(F.shape[0], np.int8)
    for f in range(F.shape[0]):
        a, b, c = F[f, 0], F[f, 1], F[f, 2]
        s = _orient(P[a, u], P[a, v], P[b, u], P[b, v], P[c, u], P[c, v])
        if s > 0:
            out[f] = 1
        elif s < 0:
            out[f] = -1
    return out


@njit(cache=True, nogil=True)
def test_face(P, F, nbr, sgn, f, axis, qu, qv):
    """Classify the line through (qu, qv) against face f.

    Returns (status, depth) where depth is the absolute coordinate along axis.
    """
    s = sgn[f]
    if s == 0:
        return MISS, 0.0
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    i0, i1, i2 = F[f, 0], F[f, 1], F[f, 2]
    e0 = _edge_fn(P, i0, i1, u, v, qu, qv) * s
    e1 = _edge_fn(P, i1, i2, u, v, qu, qv) * s
    e2 = _edge_fn(P, i2, i0, u, v, qu, qv) * s
    if e0 < 0.0 or e1 < 0.0 or e2 < 0.0:
        return MISS, 0.0
    nz = 0
    k = -1
    if e0 == 0.0:
        nz += 1
        k = 0
    if e1 == 0.0:
        nz += 1
        k = 1
    if e2 == 0.0:
        nz += 1
        k = 2
    if nz >= 2:
        return VERTEX, 0.0
    tot = e0 + e1 + e2
    depth = (e1 * P[i0, axis] + e2 * P[i1, axis] + e0 * P[i2, axis]) / tot
    if nz == 0:
        return HIT, depth
    g = nbr[f, k]
    if g < 0 or sgn[g] != s:
        # silhouette edge, or the neighbour is parallel to the ray
        return EDGE_SKIP, depth
    if f < g:
        return EDGE_HIT, depth
    return EDGE_SKIP, depth


@njit(cache=True, nogil=True)
def raster_faces(P, F, nbr, sgn, axis, ou, ov, d, w, f_lo, f_hi,
                 out_pix, out_depth, out_face, fill):
    """Rasterize faces [f_lo, f_hi) against the w x w pixel-centre rays.

    With fill=False only counts records.  Vertex hits are emitted with
    face = -1 so the caller can re-cast those columns with a perturbed ray.
    """
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    n = 0
    for f in range(f_lo, f_hi):
        if sgn[f] == 0:
            continue
        umin = min(P[F[f, 0], u], P[F[f, 1], u], P[F[f, 2], u])
        umax = max(P[F[f, 0], u], P[F[f, 1], u], P[F[f, 2], u])
        vmin = min(P[F[f, 0], v], P[F[f, 1], v], P[F[f, 2], v])
        vmax = max(P[F[f, 0], v], P[F[f, 1], v], P[F[f, 2], v])
        i_lo = max(0, int(np.floor((umin - ou) / d - 0.5)))
        i_hi = min(w - 1, int(np.ceil((umax - ou) / d - 0.5)))
        j_lo = max(0, int(np.floor((vmin - ov) / d - 0.5)))
        j_hi = min(w - 1, int(np.ceil((vmax - ov) / d - 0.5)))
        for i in range(i_lo, i_hi + 1):
            qu = ou + (i + 0.5) * d
            if qu < umin or qu > umax:
                continue
            for j in range(j_lo, j_hi + 1):
                qv = ov + (j + 0.5) * d
                if qv < vmin or qv > vmax:
                    continue
                st, depth = test_face(P, F, nbr, sgn, f, axis, qu, qv)
                if st == HIT or st == EDGE_HIT or st == VERTEX:
                    if fill:
                        out_pix[n] = i * w + j
                        out_depth[n] = depth
                        out_face[n] = f if st != VERTEX else -1
                    n += 1
    return n


@njit(cache=True, nogil=True)
def cast_line(P, F, nbr, sgn, axis, qu, qv):
    """All hits of one axis-parallel line.  Returns (depths, faces, degenerate)."""
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    depths = np.empty(F.shape[0], np.float64)
    faces = np.empty(F.shape[0], np.int64)
    n = 0
    for f in range(F.shape[0]):
        if sgn[f] == 0:
            continue
        a, b, c = F[f, 0], F[f, 1], F[f, 2]
        if qu < min(P[a, u], P[b, u], P[c, u]) or qu > max(P[a, u], P[b, u], P[c, u]):
            continue
        if qv < min(P[a, v], P[b, v], P[c, v]) or qv > max(P[a, v], P[b, v], P[c, v]):
            continue
        st, depth = test_face(P, F, nbr, sgn, f, axis, qu, qv)
        if st == VERTEX:
            return depths[:0], faces[:0], True
        if st == HIT or st == EDGE_HIT:
            depths[n] = depth
            faces[n] = f
            n += 1
    order = np.argsort(depths[:n], kind="mergesort")
    return depths[:n][order], faces[:n][order], False
