"""Cell-edge dual contouring of LDNI solids.

Grid nodes sit at pixel-ray intersections.  The node lattice is padded with
one layer of virtual Outside nodes on every side, so the surface is closed
even where the solid reaches the outermost node layer.  Internally, padded
node index ``p`` along an axis corresponds to real node ``p - 1`` at
grid-relative coordinate ``(p - 0.5) * d``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy import sparse

from ._parallel import chunks, pmap, resolve_workers
from .errors import DegenerateQuad, MissingCluster
from .mesh import Axis, Inside, Membership, Outside, TriangleMesh, _topology
from .sampler import HermiteSample, LdniSolid, decode_normals

log = logging.getLogger(__name__)


class EdgeClass(enum.IntEnum):
    EMPTY = 0
    INTERSECT = 1
    NONE_INTERSECT = 2
    COMPLEX = 3


# diagnostic codes from edge regularisation
_DIAG_NONE = 0
_DIAG_SINGLE = 1       # equal Outside signs with a single crossing
_DIAG_INNER_GAP = 2    # equal Inside signs with crossings (gap thinner than a cell)

# corner c of a cell has offsets (c & 1, (c >> 1) & 1, (c >> 2) & 1)
_CORNER_OFF = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], np.int64)


def _cell_edge_table():
    """Cell edge e = 4*axis + du + 2*dv -> (lower corner, upper corner)."""
    out = np.zeros((12, 2), np.int64)
    for a in range(3):
        u, v = (a + 1) % 3, (a + 2) % 3
        for dv in range(2):
            for du in range(2):
                off = np.zeros(3, np.int64)
                off[u], off[v] = du, dv
                lo = off[0] | off[1] << 1 | off[2] << 2
                off[a] = 1
                hi = off[0] | off[1] << 1 | off[2] << 2
                out[4 * a + du + 2 * dv] = lo, hi
    return out


_EDGE_CORNERS = _cell_edge_table()


# ---------------------------------------------------------------------------
# node signs


@dataclass(frozen=True, eq=False)
class NodeSignField:
    """Inside flags of the w*w*w grid nodes, indexed [i, j, k] = (x, y, z)."""

    inside: np.ndarray

    def __getitem__(self, ijk) -> Membership:
        return Inside if self.inside[tuple(ijk)] else Outside

    @property
    def resolution(self):
        return self.inside.shape[0]

    def padded(self):
        return np.pad(self.inside, 1, constant_values=False)


@njit(cache=True, nogil=True)
def _column_votes(offsets, depths, w, d, s_lo, s_hi, out):
    for s in range(s_lo, s_hi):
        a0, a1 = offsets[s], offsets[s + 1]
        p = a0
        for k in range(w):
            t = (k + 0.5) * d
            while p < a1 and np.float64(depths[p]) < t:
                p += 1
            on = p < a1 and np.float64(depths[p]) == t
            out[s, k] = ((p - a0) % 2 == 1) and not on


def _to_xyz(arr, axis):
    """Reorder an image-indexed (u, v, depth) array to (x, y, z)."""
    u, v = Axis(axis).plane_axes
    where = {u: 0, v: 1, int(axis): 2}
    return np.transpose(arr, [where[t] for t in range(3)])


def axis_vote_field(solid: LdniSolid, axis, workers=None):
    """Per-node inside votes of one image, shape (w, w, w) in xyz order."""
    w, d = solid.grid.resolution, solid.grid.pixel_width
    img = solid[axis]
    out = np.zeros((w * w, w), np.bool_)

    def run(span):
        _column_votes(img.offsets, img.depths, w, d, span[0], span[1], out)

    pmap(run, chunks(w * w, 4 * resolve_workers(workers)), workers)
    return _to_xyz(out.reshape(w, w, w), axis)


def build_node_signs(solid: LdniSolid, workers=None) -> NodeSignField:
    """Inside iff at least two of the three images place the node inside."""
    votes = sum(axis_vote_field(solid, a, workers).astype(np.int8) for a in Axis)
    return NodeSignField(np.ascontiguousarray(votes >= 2))


# ---------------------------------------------------------------------------
# edge classification


@njit(cache=True, nogil=True)
def _regularize(dep, nax, lo, hi, in0, in1, ignore_complex):
    """Classify one grid edge; returns (class, keep0, keep1, diagnostic).

    ``keep`` entries index into ``dep`` (-1 when unused).
    """
    n = len(dep)
    if in0 != in1:
        if n == 0:
            return 2, -1, -1, 0
        mid = 0.5 * (lo + hi)
        best = -1
        best_d = np.inf
        for t in range(n):
            ok = nax[t] < 0.0 if in1 else nax[t] > 0.0
            if ok and abs(dep[t] - mid) < best_d:
                best_d = abs(dep[t] - mid)
                best = t
        if best < 0:
            for t in range(n):
                if abs(dep[t] - mid) < best_d:
                    best_d = abs(dep[t] - mid)
                    best = t
        return 1, best, -1, 0
    if n == 0:
        return 0, -1, -1, 0
    if in0:
        return 0, -1, -1, 2
    if n == 1:
        return 0, -1, -1, 1
    if ignore_complex:
        return 0, -1, -1, 0
    return 3, 0, n - 1, 0


@njit(cache=True, nogil=True)
def _edges_of_image(offsets, depths, nax, P, axis, w, d, ignore_complex, s_lo, s_hi):
    """Non-empty edges along ``axis`` for image columns [s_lo, s_hi).

    Returns padded lower-node coordinates, class, retained sample indices
    (global into the image), raw sample counts and diagnostic counters.
    """
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    cap = 256
    node = np.empty((cap, 3), np.int64)
    cls = np.empty(cap, np.int8)
    keep = np.empty((cap, 2), np.int64)
    raw = np.empty(cap, np.int64)
    diag = np.zeros(3, np.int64)
    n = 0
    pos = np.zeros(3, np.int64)
    for s in range(s_lo, s_hi):
        a0, a1 = offsets[s], offsets[s + 1]
        pos[u] = s // w + 1
        pos[v] = s % w + 1
        p = a0
        for kk in range(w + 1):
            lo = (kk - 1 + 0.5) * d
            hi = (kk + 0.5) * d
            while p < a1 and np.float64(depths[p]) <= lo:
                p += 1
            q = p
            while q < a1 and np.float64(depths[q]) < hi:
                q += 1
            pos[axis] = kk
            in0 = P[pos[0], pos[1], pos[2]]
            pos[axis] = kk + 1
            in1 = P[pos[0], pos[1], pos[2]]
            if q == p and in0 == in1:
                continue
            dep = depths[p:q].astype(np.float64)
            c, k0, k1, dg = _regularize(dep, nax[p:q], lo, hi, in0, in1, ignore_complex)
            diag[dg] += 1
            if c == 0:
                continue
            if n == len(cls):
                node2 = np.empty((2 * n, 3), np.int64)
                node2[:n] = node
                node = node2
                keep2 = np.empty((2 * n, 2), np.int64)
                keep2[:n] = keep
                keep = keep2
                cls2 = np.empty(2 * n, np.int8)
                cls2[:n] = cls
                cls = cls2
                raw2 = np.empty(2 * n, np.int64)
                raw2[:n] = raw
                raw = raw2
            node[n, 0] = pos[0]
            node[n, 1] = pos[1]
            node[n, 2] = pos[2]
            node[n, axis] = kk
            cls[n] = c
            keep[n, 0] = p + k0 if k0 >= 0 else -1
            keep[n, 1] = p + k1 if k1 >= 0 else -1
            raw[n] = q - p
            n += 1
    return node[:n], cls[:n], keep[:n], raw[:n], diag


@dataclass(frozen=True, eq=False)
class CellEdgeRecord:
    """One classified and regularised grid edge (materialised view)."""

    axis: Axis
    index: tuple
    end_signs: tuple
    raw_samples: tuple
    classification: EdgeClass
    regularized_samples: tuple


@dataclass(frozen=True, eq=False)
class EdgeTable:
    """All non-empty grid edges, sorted by (axis, padded lower node).

    ``node`` holds padded coordinates of the lower end node.  ``depth`` and
    ``normal`` hold the regularised samples (grid-relative depth, unit
    normal); unused slots are NaN.
    """

    resolution: int
    axis: np.ndarray
    node: np.ndarray
    cls: np.ndarray
    inside: np.ndarray
    raw_count: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    key: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cls)

    def records(self, solid: Optional[LdniSolid] = None):
        """CellEdgeRecord objects (raw samples filled when ``solid`` is given)."""
        out = []
        d = solid.grid.pixel_width if solid is not None else None
        for r in range(len(self)):
            a = Axis(int(self.axis[r]))
            idx = tuple(int(x) - 1 for x in self.node[r])
            raw = ()
            if solid is not None:
                u, v = a.plane_axes
                col = solid[a].column(idx[u], idx[v])
                lo, hi = (idx[a] + 0.5) * d, (idx[a] + 1.5) * d
                raw = tuple(s for s in col.samples if lo < s.depth < hi)
            reg = tuple(HermiteSample(float(self.depth[r, t]), self.normal[r, t].copy())
                        for t in range(2) if not np.isnan(self.depth[r, t]))
            signs = tuple(Inside if x else Outside for x in self.inside[r])
            out.append(CellEdgeRecord(a, idx, signs, raw, EdgeClass(int(self.cls[r])), reg))
        return out


def edge_key(axis, node, P):
    node = np.asarray(node, np.int64)
    return ((np.asarray(axis, np.int64) * P + node[..., 0]) * P + node[..., 1]) * P + node[..., 2]


def classify_and_regularize_edges(solid: LdniSolid, signs: NodeSignField, ignore_complex=False,
                                  workers=None) -> EdgeTable:
    """Classify every grid edge and apply the regularisation rules.

    With ``ignore_complex`` equal-sign edges are always treated as empty,
    which reproduces plain grid-node contouring.
    """
    w, d = solid.grid.resolution, solid.grid.pixel_width
    P = signs.padded()
    parts = []
    diag = np.zeros(3, np.int64)
    for a in Axis:
        img = solid[a]
        n_all = decode_normals(img.normals)
        nax = np.ascontiguousarray(n_all[:, int(a)])

        def run(span, img=img, nax=nax, a=a):
            return _edges_of_image(img.offsets, img.depths, nax, P, int(a), w, d,
                                   bool(ignore_complex), span[0], span[1])

        res = pmap(run, chunks(w * w, 4 * resolve_workers(workers)), workers)
        node = np.concatenate([r[0] for r in res])
        cls = np.concatenate([r[1] for r in res])
        keep = np.concatenate([r[2] for r in res])
        raw = np.concatenate([r[3] for r in res])
        for r in res:
            diag += r[4]
        depth = np.full(keep.shape, np.nan)
        normal = np.full(keep.shape + (3,), np.nan)
        m = keep >= 0
        depth[m] = img.depths[keep[m]].astype(np.float64)
        normal[m] = n_all[keep[m]]
        hi = node.copy()
        hi[:, int(a)] += 1
        inside = np.stack([P[tuple(node.T)], P[tuple(hi.T)]], axis=1) if len(node) else \
            np.zeros((0, 2), bool)
        parts.append((np.full(len(cls), int(a), np.int8), node, cls, inside, raw, depth, normal))
    cat = [np.concatenate([p[t] for p in parts]) for t in range(7)]
    axis, node, cls, inside, raw, depth, normal = cat
    node = node.reshape(-1, 3)
    key = edge_key(axis, node, w + 2)
    order = np.argsort(key, kind="stable")
    diagnostics = {"single_sample_edges": int(diag[_DIAG_SINGLE]),
                   "inner_gap_edges": int(diag[_DIAG_INNER_GAP]),
                   "none_intersect_edges": int((cls == EdgeClass.NONE_INTERSECT).sum()),
                   "complex_edges": int((cls == EdgeClass.COMPLEX).sum())}
    if diag[_DIAG_SINGLE]:
        log.info("%d equal-sign edges with a single crossing treated as empty",
                 int(diag[_DIAG_SINGLE]))
    return EdgeTable(w, axis[order], node[order], cls[order], inside[order].reshape(-1, 2),
                     raw[order], depth[order].reshape(-1, 2), normal[order].reshape(-1, 2, 3),
                     key[order], diagnostics)


def regularize_edge(end_signs, depths, normals, axis, lo, hi) -> CellEdgeRecord:
    """Classify a single edge given its raw samples (for inspection and tests).

    ``end_signs`` are the memberships of the lower and upper end nodes; the
    edge spans depths (lo, hi) along ``axis``.
    """
    depths = np.asarray(depths, np.float64)
    normals = np.asarray(normals, np.float64).reshape(-1, 3)
    order = np.argsort(depths, kind="stable")
    depths, normals = depths[order], normals[order]
    raw = tuple(HermiteSample(float(t), n) for t, n in zip(depths, normals))
    in0, in1 = (s is Inside for s in end_signs)
    c, k0, k1, _ = _regularize(depths, np.ascontiguousarray(normals[:, int(axis)]),
                               float(lo), float(hi), in0, in1, False)
    reg = tuple(raw[k] for k in (k0, k1) if k >= 0)
    return CellEdgeRecord(Axis(axis), (), tuple(end_signs), raw, EdgeClass(int(c)), reg)


# ---------------------------------------------------------------------------
# per-cell clustering and vertex placement


@njit(cache=True, nogil=True)
def _cluster_corners(inside8, ecls12, edge_corners):
    """Label outside corners by empty-edge connectivity; -1 for inside."""
    parent = np.arange(8)
    for e in range(12):
        c0, c1 = edge_corners[e, 0], edge_corners[e, 1]
        if ecls12[e] == 0 and not inside8[c0] and not inside8[c1]:
            r0 = c0
            while parent[r0] != r0:
                r0 = parent[r0]
            r1 = c1
            while parent[r1] != r1:
                r1 = parent[r1]
            if r0 != r1:
                parent[max(r0, r1)] = min(r0, r1)
    label = np.full(8, -1, np.int64)
    root_label = np.full(8, -1, np.int64)
    n = 0
    for c in range(8):
        if inside8[c]:
            continue
        r = c
        while parent[r] != r:
            r = parent[r]
        if root_label[r] < 0:
            root_label[r] = n
            n += 1
        label[c] = root_label[r]
    return label, n


@njit(cache=True, nogil=True)
def _qef_solve(pts, nrm, lo, hi, trunc):
    """Minimise sum (n . (x - p))^2 around the point centroid; clamp to box."""
    m = len(pts)
    A = np.zeros((3, 3))
    b = np.zeros(3)
    c = np.zeros(3)
    for t in range(m):
        dot = 0.0
        for r in range(3):
            dot += nrm[t, r] * pts[t, r]
            c[r] += pts[t, r]
        for r in range(3):
            b[r] += nrm[t, r] * dot
            for s in range(3):
                A[r, s] += nrm[t, r] * nrm[t, s]
    c /= m
    rhs = b - A @ c
    lam, V = np.linalg.eigh(A)
    x = c.copy()
    lmax = lam[2]
    rank = 0
    if lmax > 0.0:
        for r in range(3):
            if lam[r] >= trunc * lmax:
                rank += 1
                coef = (V[0, r] * rhs[0] + V[1, r] * rhs[1] + V[2, r] * rhs[2]) / lam[r]
                for s in range(3):
                    x[s] += coef * V[s, r]
    outside = False
    for s in range(3):
        if x[s] < lo[s] or x[s] > hi[s]:
            outside = True
    if outside and rank == 2:
        # minimisers form a line; take its point inside the box nearest the centroid
        smin = -np.inf
        smax = np.inf
        for s in range(3):
            t = V[s, 0]
            if abs(t) > 1e-12:
                a0 = (lo[s] - x[s]) / t
                a1 = (hi[s] - x[s]) / t
                smin = max(smin, min(a0, a1))
                smax = min(smax, max(a0, a1))
            elif x[s] < lo[s] or x[s] > hi[s]:
                smin = np.inf
        if smin <= smax:
            step = min(max(0.0, smin), smax)
            for s in range(3):
                x[s] += step * V[s, 0]
    for s in range(3):
        x[s] = min(max(x[s], lo[s]), hi[s])
    return x


@njit(cache=True, nogil=True)
def _process_cells(cells, P, ekey, ecls, edepth, enormal, edge_corners, corner_off, Pn, d,
                   trunc, c_lo, c_hi, out_label, out_count, out_pos, out_fixed):
    pts = np.empty((24, 3))
    nrm = np.empty((24, 3))
    owner = np.empty(24, np.int64)
    inside8 = np.empty(8, np.bool_)
    ecls12 = np.empty(12, np.int64)
    erec = np.empty(12, np.int64)
    lo = np.empty(3)
    hi = np.empty(3)
    for ci in range(c_lo, c_hi):
        cx, cy, cz = cells[ci, 0], cells[ci, 1], cells[ci, 2]
        for c in range(8):
            inside8[c] = P[cx + corner_off[c, 0], cy + corner_off[c, 1], cz + corner_off[c, 2]]
        for e in range(12):
            a = e // 4
            c0 = edge_corners[e, 0]
            nx = cx + corner_off[c0, 0]
            ny = cy + corner_off[c0, 1]
            nz = cz + corner_off[c0, 2]
            key = ((a * Pn + nx) * Pn + ny) * Pn + nz
            r = np.searchsorted(ekey, key)
            if r < len(ekey) and ekey[r] == key:
                erec[e] = r
                ecls12[e] = ecls[r]
            else:
                erec[e] = -1
                ecls12[e] = 0
        label, n = _cluster_corners(inside8, ecls12, edge_corners)
        m = 0
        for e in range(12):
            r = erec[e]
            if r < 0:
                continue
            a = e // 4
            c0 = edge_corners[e, 0]
            c1 = edge_corners[e, 1]
            for t in range(2):
                if np.isnan(edepth[r, t]):
                    continue
                if ecls12[e] == 1:
                    cl = label[c1] if inside8[c0] else label[c0]
                else:
                    cl = label[c0] if t == 0 else label[c1]
                for s in range(3):
                    pts[m, s] = (cells[ci, s] + corner_off[c0, s] - 0.5) * d
                    nrm[m, s] = enormal[r, t, s]
                pts[m, a] = edepth[r, t]
                owner[m] = cl
                m += 1
        for s in range(3):
            lo[s] = (cells[ci, s] - 0.5) * d
            hi[s] = (cells[ci, s] + 0.5) * d
        out_count[ci] = n
        for c in range(8):
            out_label[ci, c] = label[c]
        for cl in range(n):
            k = 0
            for t in range(m):
                if owner[t] == cl:
                    k += 1
            if k == 0:
                # no Hermite data: start at the centroid of the cluster corners
                cnt = 0
                for s in range(3):
                    out_pos[ci, cl, s] = 0.0
                for c in range(8):
                    if label[c] == cl:
                        cnt += 1
                        for s in range(3):
                            out_pos[ci, cl, s] += (cells[ci, s] + corner_off[c, s] - 0.5) * d
                for s in range(3):
                    out_pos[ci, cl, s] /= cnt
                out_fixed[ci, cl] = False
                continue
            cp = np.empty((k, 3))
            cn = np.empty((k, 3))
            k = 0
            for t in range(m):
                if owner[t] == cl:
                    cp[k] = pts[t]
                    cn[k] = nrm[t]
                    k += 1
            x = _qef_solve(cp, cn, lo, hi, trunc)
            for s in range(3):
                out_pos[ci, cl, s] = x[s]
            out_fixed[ci, cl] = True


@dataclass
class QefData:
    """Accumulated terms of sum (n . (x - p))^2 = x'Ax - 2b'x + c."""

    A: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    c: float = 0.0
    point_sum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    count: int = 0

    def add(self, p, n):
        p = np.asarray(p, float)
        n = np.asarray(n, float)
        dot = float(n @ p)
        self.A += np.outer(n, n)
        self.b += n * dot
        self.c += dot * dot
        self.point_sum += p
        self.count += 1

    @property
    def centroid(self):
        return self.point_sum / max(self.count, 1)

    def error(self, x):
        x = np.asarray(x, float)
        return float(x @ self.A @ x - 2.0 * self.b @ x + self.c)


@dataclass
class VertexCluster:
    cell: tuple
    color: int
    corners: tuple
    hermite_points: list
    placed_position: Optional[np.ndarray] = None

    @property
    def needs_smoothing(self):
        return len(self.hermite_points) == 0


QEF_TRUNCATION = 0.1


def place_vertex(points, normals, cell_lo, cell_hi, truncation=QEF_TRUNCATION):
    """QEF minimiser of Hermite points, regularised towards their centroid."""
    pts = np.ascontiguousarray(points, np.float64).reshape(-1, 3)
    nrm = np.ascontiguousarray(normals, np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("place_vertex needs at least one Hermite point")
    return _qef_solve(pts, nrm, np.asarray(cell_lo, float), np.asarray(cell_hi, float),
                      float(truncation))


def cluster_cell_nodes(corner_inside, edge_classes, edge_samples=None, cell=(0, 0, 0)):
    """Cluster the outside corners of one cell.

    ``corner_inside``: 8 flags, corner c at offsets (c&1, c>>1&1, c>>2&1).
    ``edge_classes``: 12 EdgeClass values, edge e = 4*axis + du + 2*dv.
    ``edge_samples``: optional 12 lists of (position, normal) regularised
    samples, ordered by depth along the edge.
    """
    inside8 = np.asarray([bool(x) for x in corner_inside], np.bool_)
    ecls = np.asarray([int(x) for x in edge_classes], np.int64)
    label, n = _cluster_corners(inside8, ecls, _EDGE_CORNERS)
    clusters = [VertexCluster(tuple(cell), k, tuple(int(c) for c in np.flatnonzero(label == k)), [])
                for k in range(n)]
    if edge_samples is not None:
        for e, samples in enumerate(edge_samples):
            c0, c1 = _EDGE_CORNERS[e]
            for t, (p, nv) in enumerate(samples):
                if ecls[e] == EdgeClass.INTERSECT:
                    owner = label[c1] if inside8[c0] else label[c0]
                elif ecls[e] == EdgeClass.COMPLEX:
                    owner = label[c0] if t == 0 else label[c1]
                else:
                    continue
                clusters[owner].hermite_points.append((np.asarray(p, float), np.asarray(nv, float)))
    return clusters


# ---------------------------------------------------------------------------
# quad assembly and repair


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Contouring output before triangulation; ``fixed`` marks QEF-placed vertices."""

    vertices: np.ndarray
    quads: np.ndarray
    fixed: np.ndarray
    cell_lo: Optional[np.ndarray] = None    # owning cell box per vertex, model space
    cell_hi: Optional[np.ndarray] = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    def _carry(self, vertices, quads, fixed, take=None):
        """New mesh keeping per-vertex cell boxes (``take`` maps new -> old)."""
        if self.cell_lo is None:
            return QuadMesh(vertices, quads, fixed)
        take = np.arange(len(vertices)) if take is None else take
        return QuadMesh(vertices, quads, fixed, self.cell_lo[take], self.cell_hi[take])


@dataclass
class ContourReport:
    mesh: TriangleMesh
    quads: QuadMesh
    n_active_cells: int = 0
    singular_edges: int = 0
    split_vertices: int = 0
    removed_quad_pairs: int = 0
    degenerate_quads: int = 0
    smoothing_iterations: int = 0
    edge_diagnostics: dict = field(default_factory=dict)


_QUAD_CELLS = ((1, 1), (0, 1), (0, 0), (1, 0))


def _quad_faces(edges: EdgeTable, cell_keys, label, vbase, Pc):
    """One quad per (non-empty edge, outside end); complex edges give two."""
    rows = []
    for upper in (False, True):
        in_end = edges.inside[:, 1 if upper else 0]
        sel = np.flatnonzero(~in_end)
        if not len(sel):
            continue
        a = edges.axis[sel].astype(np.int64)
        node = edges.node[sel]
        corner = node.copy()
        corner[np.arange(len(sel)), a] += int(upper)
        u, v = (a + 1) % 3, (a + 2) % 3
        vids = np.empty((len(sel), 4), np.int64)
        for q, (du, dv) in enumerate(_QUAD_CELLS):
            cell = node.copy()
            cell[np.arange(len(sel)), u] -= du
            cell[np.arange(len(sel)), v] -= dv
            key = (cell[:, 0] * Pc + cell[:, 1]) * Pc + cell[:, 2]
            ci = np.searchsorted(cell_keys, key)
            ok = (ci < len(cell_keys))
            ok[ok] = cell_keys[ci[ok]] == key[ok]
            if not ok.all():
                raise MissingCluster(f"{int((~ok).sum())} quads reference inactive cells")
            off = corner - cell
            cid = off[:, 0] | off[:, 1] << 1 | off[:, 2] << 2
            lab = label[ci, cid]
            if (lab < 0).any():
                raise MissingCluster("an outside corner has no cluster in a neighbouring cell")
            vids[:, q] = vbase[ci] + lab
        if not upper:
            vids = vids[:, ::-1]
        rows.append((sel, int(upper), vids))
    if not rows:
        return np.zeros((0, 4), np.int64)
    sel = np.concatenate([r[0] for r in rows])
    up = np.concatenate([np.full(len(r[0]), r[1]) for r in rows])
    quads = np.concatenate([r[2] for r in rows])
    order = np.lexsort((up, sel))
    return quads[order]


def _drop_back_to_back(quads):
    """Remove pairs of quads over the same vertices with opposite winding."""
    if not len(quads):
        return quads, 0
    skey = np.sort(quads, axis=1)
    _, inv, cnt = np.unique(skey, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    drop = cnt[inv] == 2
    return quads[~drop], int(drop.sum()) // 2


def _face_normal(V, faces):
    """Newell-style normal of a polygon via its diagonals (quads) or edges."""
    if faces.shape[1] == 4:
        n = np.cross(V[faces[:, 2]] - V[faces[:, 0]], V[faces[:, 3]] - V[faces[:, 1]])
    else:
        n = np.cross(V[faces[:, 1]] - V[faces[:, 0]], V[faces[:, 2]] - V[faces[:, 0]])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, ln, out=np.zeros_like(n), where=ln > 0)


def _pair_singular_edge(V, faces, normals, halves):
    """Pair faces around one singular edge across the solid wedges."""
    k = faces.shape[1]
    f = halves // k
    c = halves % k
    s = faces[f, c]
    v1, v2 = min(s[0], faces[f[0], (c[0] + 1) % k]), max(s[0], faces[f[0], (c[0] + 1) % k])
    t = V[v2] - V[v1]
    t = t / np.linalg.norm(t)
    cen = V[faces[f]].mean(axis=1) - V[v1]
    r = cen - np.outer(cen @ t, t)
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    ref = r[0]
    ref2 = np.cross(t, ref)
    ang = np.arctan2(r @ ref2, r @ ref)
    order = np.lexsort((f, ang))
    n = len(order)
    partner = np.empty(n, np.int64)
    for pos, i in enumerate(order):
        tau = np.cross(t, r[i])
        step = -1 if normals[f[i]] @ tau > 0 else 1
        partner[i] = order[(pos + step) % n]
    if np.all(partner[partner] == np.arange(n)):
        return [(halves[i], halves[partner[i]]) for i in range(n) if i < partner[i]]
    # geometry too degenerate to decide: pair neighbours in angular order
    return [(halves[order[i]], halves[order[i + 1]]) for i in range(0, n - 1, 2)]


def fix_nonmanifold(mesh: QuadMesh, return_counts=False):
    """Split singular edges across solid wedges, then split vertex fans.

    Vertices that need a copy keep their original index for the first fan
    (lowest corner) and append new indices for the others, so an already
    manifold mesh comes back unchanged.
    """
    faces = np.asarray(mesh.quads, np.int64)
    V = np.asarray(mesh.vertices, np.float64)
    fixed = np.asarray(mesh.fixed, bool)
    source = np.arange(len(V))
    n_sing = 0
    n_split = 0
    for _ in range(4):
        if not len(faces):
            break
        nv = len(V)
        topo = _topology(faces, nv)
        sing = np.flatnonzero(topo.edge_count > 2)
        n_sing += len(sing)
        normals = _face_normal(V, faces)
        manifold = topo.edge_first[topo.edge_count == 2]
        h1 = list(topo.edge_order[manifold])
        h2 = list(topo.edge_order[manifold + 1])
        for e in sing:
            start = topo.edge_first[e]
            halves = topo.edge_order[start:start + topo.edge_count[e]]
            for x, y in _pair_singular_edge(V, faces, normals, halves):
                h1.append(x)
                h2.append(y)
        links = (np.asarray(h1, np.int64), np.asarray(h2, np.int64))
        topo = _topology(faces, nv, links)
        vert = faces.reshape(-1)
        comp = topo.corner_component
        corner = np.arange(len(vert))
        # first corner of each (vertex, component) group
        order = np.lexsort((corner, comp))
        comp_first = np.full(comp.max() + 1, -1, np.int64)
        first_idx = order[np.r_[True, comp[order][1:] != comp[order][:-1]]]
        comp_first[comp[first_idx]] = first_idx
        rep = comp_first[comp]
        # per vertex, components ordered by their first corner
        groups = np.unique(np.stack([vert, rep], axis=1), axis=0)
        is_first = np.r_[True, groups[1:, 0] != groups[:-1, 0]]
        extra = groups[~is_first]
        if not len(extra) and not len(sing):
            break
        new_id = {}
        for vtx, rp in groups[is_first]:
            new_id[(vtx, rp)] = vtx
        for t, (vtx, rp) in enumerate(extra):
            new_id[(vtx, rp)] = nv + t
        faces = np.asarray([new_id[(a, b)] for a, b in zip(vert, rep)], np.int64).reshape(faces.shape)
        if len(extra):
            V = np.concatenate([V, V[extra[:, 0]]])
            fixed = np.concatenate([fixed, fixed[extra[:, 0]]])
            source = np.concatenate([source, source[extra[:, 0]]])
            n_split += len(extra)
        if not len(extra):
            break
    out = mesh._carry(V, faces, fixed, source)
    return (out, n_sing, n_split) if return_counts else out


def _adjacency(faces, nv):
    k = faces.shape[1]
    a = faces.reshape(-1)
    b = np.roll(faces, -1, axis=1).reshape(-1)
    A = sparse.coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(nv, nv)).tocsr()
    A.data[:] = 1.0
    return A


def smooth_unconstrained(mesh: QuadMesh, unconstrained=None, pixel_width=1.0, max_iter=50,
                         return_iterations=False):
    """Jacobi Laplacian smoothing of vertices without Hermite data.

    Each free vertex moves to the average of its 1-ring until the largest
    displacement drops below 1e-6 * pixel_width or ``max_iter`` sweeps.
    """
    V = np.array(mesh.vertices, np.float64)
    if unconstrained is None:
        free = ~np.asarray(mesh.fixed, bool)
    else:
        free = np.zeros(len(V), bool)
        free[np.asarray(unconstrained, np.int64)] = True
    it = 0
    if free.any() and len(mesh.quads):
        A = _adjacency(np.asarray(mesh.quads, np.int64), len(V))
        rows = np.flatnonzero(free & (np.diff(A.indptr) > 0))
        Af = A[rows]
        deg = np.asarray(Af.sum(axis=1)).reshape(-1, 1)
        tol = 1e-6 * pixel_width
        for it in range(1, max_iter + 1):
            new = (Af @ V) / deg
            delta = np.abs(new - V[rows]).max() if len(rows) else 0.0
            V[rows] = new
            if delta < tol:
                break
    out = mesh._carry(V, np.asarray(mesh.quads), np.asarray(mesh.fixed))
    return (out, it) if return_iterations else out


def _polygon_edge_neighbours(faces):
    """(F, k) array: face across edge (f[t], f[t+1]) when unique, else -1."""
    nf, k = faces.shape
    out = np.full(nf * k, -1, np.int64)
    if not nf:
        return out.reshape(nf, k)
    nv = int(faces.max()) + 1
    a = faces.reshape(-1)
    b = np.roll(faces, -1, axis=1).reshape(-1)
    key = np.minimum(a, b) * nv + np.maximum(a, b)
    order = np.argsort(key, kind="stable")
    ks = key[order]
    start = np.r_[0, np.flatnonzero(np.diff(ks)) + 1]
    count = np.diff(np.r_[start, len(ks)])
    pairs = start[count == 2]
    h1, h2 = order[pairs], order[pairs + 1]
    out[h1] = h2 // k
    out[h2] = h1 // k
    return out.reshape(nf, k)


def _angle(a, b):
    return np.arccos(np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0))


def triangulate(mesh: QuadMesh, return_counts=False, strict=False):
    """Split each quad along the diagonal that best agrees with its neighbours.

    Cost of a split: for each triangle, the angle between its normal and the
    mean normal of the quads across its two quad edges.  Ties go to the
    shorter diagonal, then to the diagonal holding the lowest vertex index.
    A diagonal already present as a mesh edge is avoided.  Zero-area quads
    are split anyway and counted; ``strict`` raises DegenerateQuad instead.
    """
    V = np.asarray(mesh.vertices, np.float64)
    Q = np.asarray(mesh.quads, np.int64)
    if not len(Q):
        tri = TriangleMesh.unchecked(V, np.zeros((0, 3), np.int64))
        return (tri, 0) if return_counts else tri
    qn = _face_normal(V, Q)
    nb = _polygon_edge_neighbours(Q)
    nbn = np.where((nb >= 0)[..., None], qn[np.maximum(nb, 0)], qn[:, None, :])

    def mean_dir(x, y):
        m = x + y
        ln = np.linalg.norm(m, axis=1, keepdims=True)
        return np.divide(m, ln, out=np.zeros_like(m), where=ln > 0)

    def tri_n(i, j, k):
        return _face_normal(V, np.stack([Q[:, i], Q[:, j], Q[:, k]], axis=1))

    def dev(tn, ref):
        ang = _angle(tn, ref)
        return np.where(np.linalg.norm(tn, axis=1) > 0, ang, np.pi)

    cost0 = dev(tri_n(0, 1, 2), mean_dir(nbn[:, 0], nbn[:, 1])) + \
        dev(tri_n(0, 2, 3), mean_dir(nbn[:, 2], nbn[:, 3]))
    cost1 = dev(tri_n(0, 1, 3), mean_dir(nbn[:, 0], nbn[:, 3])) + \
        dev(tri_n(1, 2, 3), mean_dir(nbn[:, 1], nbn[:, 2]))
    len0 = np.linalg.norm(V[Q[:, 2]] - V[Q[:, 0]], axis=1)
    len1 = np.linalg.norm(V[Q[:, 3]] - V[Q[:, 1]], axis=1)
    tol = 1e-9
    scale = np.maximum(len0, len1)
    pick = np.where(cost1 < cost0 - tol, 1, 0)
    tie = np.abs(cost0 - cost1) <= tol
    ltie = np.abs(len0 - len1) <= 1e-12 * np.maximum(scale, 1e-300)
    pick = np.where(tie & ~ltie, np.where(len1 < len0, 1, 0), pick)
    low0 = np.minimum(Q[:, 0], Q[:, 2])
    low1 = np.minimum(Q[:, 1], Q[:, 3])
    pick = np.where(tie & ltie, np.where(low1 < low0, 1, 0), pick)

    nv = len(V)
    a = Q.reshape(-1)
    b = np.roll(Q, -1, axis=1).reshape(-1)
    edge_keys = set((np.minimum(a, b) * nv + np.maximum(a, b)).tolist())
    d0 = np.minimum(Q[:, 0], Q[:, 2]) * nv + np.maximum(Q[:, 0], Q[:, 2])
    d1 = np.minimum(Q[:, 1], Q[:, 3]) * nv + np.maximum(Q[:, 1], Q[:, 3])
    used = set()
    for qi in range(len(Q)):
        keys = (int(d0[qi]), int(d1[qi]))
        p = int(pick[qi])
        if keys[p] in edge_keys or keys[p] in used:
            other = keys[1 - p]
            if other not in edge_keys and other not in used:
                p = 1 - p
        pick[qi] = p
        used.add(keys[p])
    t0 = np.where(pick[:, None] == 0, Q[:, [0, 1, 2]], Q[:, [0, 1, 3]])
    t1 = np.where(pick[:, None] == 0, Q[:, [0, 2, 3]], Q[:, [1, 2, 3]])
    tris = np.stack([t0, t1], axis=1).reshape(-1, 3)
    tri = TriangleMesh.unchecked(V, tris)
    degenerate = int((np.linalg.norm(np.cross(V[tris[:, 1]] - V[tris[:, 0]],
                                              V[tris[:, 2]] - V[tris[:, 0]]), axis=1) == 0).sum())
    if degenerate and strict:
        raise DegenerateQuad(f"{degenerate} zero-area triangles after splitting quads")
    if degenerate:
        log.warning("%d zero-area triangles after splitting quads", degenerate)
    return (tri, degenerate) if return_counts else tri


# ---------------------------------------------------------------------------
# pipeline


def _active_cells(edges: EdgeTable, Pc):
    if not len(edges):
        return np.zeros((0, 3), np.int64), np.zeros(0, np.int64)
    a = edges.axis.astype(np.int64)
    u, v = (a + 1) % 3, (a + 2) % 3
    idx = np.arange(len(a))
    cells = []
    for du, dv in _QUAD_CELLS:
        c = edges.node.copy()
        c[idx, u] -= du
        c[idx, v] -= dv
        cells.append(c)
    cells = np.concatenate(cells)
    keys = np.unique((cells[:, 0] * Pc + cells[:, 1]) * Pc + cells[:, 2])
    coords = np.stack([keys // (Pc * Pc), (keys // Pc) % Pc, keys % Pc], axis=1)
    return coords, keys


def build_quads(solid: LdniSolid, edges: EdgeTable, signs: NodeSignField, workers=None,
                truncation=QEF_TRUNCATION):
    """Cluster and place vertices in every active cell, then emit quads.

    Returns the QuadMesh (grid-relative coordinates shifted to model space)
    and the number of back-to-back quad pairs removed.
    """
    w, d = solid.grid.resolution, solid.grid.pixel_width
    Pc = w + 1
    cells, cell_keys = _active_cells(edges, Pc)
    n = len(cells)
    label = np.full((n, 8), -1, np.int64)
    count = np.zeros(n, np.int64)
    pos = np.zeros((n, 8, 3))
    fixed = np.zeros((n, 8), np.bool_)
    P = signs.padded()
    depth = np.ascontiguousarray(edges.depth)
    normal = np.ascontiguousarray(edges.normal)

    def run(span):
        _process_cells(cells, P, edges.key, edges.cls, depth, normal, _EDGE_CORNERS,
                       _CORNER_OFF, w + 2, d, float(truncation), span[0], span[1],
                       label, count, pos, fixed)

    pmap(run, chunks(n, 4 * resolve_workers(workers)), workers)
    vbase = np.zeros(n, np.int64)
    if n:
        np.cumsum(count[:-1], out=vbase[1:])
    take = np.arange(8)[None, :] < count[:, None]
    origin = np.asarray(solid.grid.origin)
    verts = pos[take] + origin
    vfixed = fixed[take]
    owner = np.repeat(np.arange(n), count)
    cell_lo = (cells[owner] - 0.5) * d + origin
    quads = _quad_faces(edges, cell_keys, label, vbase, Pc)
    quads, removed = _drop_back_to_back(quads)
    return QuadMesh(verts, quads, vfixed, cell_lo, cell_lo + d), removed, n


def _compact(mesh: QuadMesh):
    used = np.zeros(len(mesh.vertices), bool)
    used[mesh.quads.reshape(-1)] = True
    remap = np.cumsum(used) - 1
    take = np.flatnonzero(used)
    return mesh._carry(mesh.vertices[used], remap[mesh.quads], mesh.fixed[used], take)


def contour_report(solid: LdniSolid, workers=None, ignore_complex=False) -> ContourReport:
    """Full pipeline with intermediate diagnostics."""
    signs = build_node_signs(solid, workers)
    edges = classify_and_regularize_edges(solid, signs, ignore_complex, workers)
    quads, removed, n_cells = build_quads(solid, edges, signs, workers)
    quads = _compact(quads)
    quads, n_sing, n_split = fix_nonmanifold(quads, return_counts=True)
    quads, iters = smooth_unconstrained(quads, pixel_width=solid.grid.pixel_width,
                                        return_iterations=True)
    mesh, degenerate = triangulate(quads, return_counts=True)
    return ContourReport(mesh, quads, n_cells, n_sing, n_split, removed, degenerate, iters,
                         edges.diagnostics)


def contour(solid: LdniSolid, workers=None, ignore_complex=False) -> TriangleMesh:
    """Closed, consistently oriented triangle mesh of an LDNI solid."""
    return contour_report(solid, workers, ignore_complex).mesh
