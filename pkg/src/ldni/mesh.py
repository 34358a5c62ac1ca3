"""Triangle mesh model, topology audit, grid spec and ray/point primitives."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from numba import njit
from scipy.spatial import cKDTree

from . import _raster
from .errors import DegenerateHit, EmptyMesh, MeshError, OnSurface


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2

    @property
    def plane_axes(self):
        """The (u, v) image axes, cyclic so that u x v = axis."""
        return (self + 1) % 3, (self + 2) % 3


class Membership(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"

    def __bool__(self):
        return self is Membership.INSIDE


Inside = Membership.INSIDE
Outside = Membership.OUTSIDE


def _face_normals(vertices, faces):
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(b - a, c - a)
    length = np.linalg.norm(n, axis=1)
    return n, length


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh; faces wind counterclockwise seen from outside.

    ``face_normals`` is derived on construction.  Construction validates the
    index range and rejects zero-area faces.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        n, length = _face_normals(v, f)
        bad = np.flatnonzero(length == 0.0)
        if bad.size:
            raise MeshError(f"{bad.size} degenerate (zero-area) faces, first is {bad[0]}")
        v.setflags(write=False)
        f.setflags(write=False)
        n = n / length[:, None]
        n.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "face_normals", n)

    @classmethod
    def unchecked(cls, vertices, faces):
        """Build without the zero-area check; degenerate faces get zero normals."""
        obj = object.__new__(cls)
        v = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        n, length = _face_normals(v, f)
        n = np.divide(n, length[:, None], out=np.zeros_like(n), where=length[:, None] > 0)
        for arr in (v, f, n):
            arr.setflags(write=False)
        object.__setattr__(obj, "vertices", v)
        object.__setattr__(obj, "faces", f)
        object.__setattr__(obj, "face_normals", n)
        return obj

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def bounds(self):
        if self.n_faces == 0:
            raise EmptyMesh("mesh has no faces")
        used = self.vertices[np.unique(self.faces)]
        return used.min(axis=0), used.max(axis=0)

    def face_areas(self):
        return 0.5 * _face_normals(self.vertices, self.faces)[1]

    def signed_volume(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def surface_area(self):
        return float(self.face_areas().sum())

    def transformed(self, rotation=None, translation=None, scale=1.0):
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation, float).T
        if translation is not None:
            v = v + np.asarray(translation, float)
        return TriangleMesh(v, self.faces)

    def edge_neighbours(self):
        """(F, 3) array: face across edge k = (f[k], f[k+1]), or -1."""
        return _edge_neighbours(self.faces)


def _edge_neighbours(faces):
    nf = len(faces)
    a = faces.reshape(-1)
    b = np.roll(faces, -1, axis=1).reshape(-1)
    key = np.minimum(a, b) * (int(faces.max()) + 1 if nf else 1) + np.maximum(a, b)
    order = np.argsort(key, kind="stable")
    ks = key[order]
    out = np.full(3 * nf, -1, dtype=np.int64)
    if nf == 0:
        return out.reshape(-1, 3)
    start = np.r_[0, np.flatnonzero(np.diff(ks)) + 1]
    count = np.diff(np.r_[start, len(ks)])
    pairs = start[count == 2]
    h1, h2 = order[pairs], order[pairs + 1]
    out[h1] = h2 // 3
    out[h2] = h1 // 3
    return out.reshape(-1, 3)


@dataclass(frozen=True)
class MeshAudit:
    is_closed: bool
    is_two_manifold: bool
    is_consistently_oriented: bool
    euler_characteristic: int
    boundary_edge_count: int
    nonmanifold_edge_count: int
    nonmanifold_vertex_count: int

    @property
    def is_watertight(self):
        return self.is_closed and self.is_two_manifold and self.is_consistently_oriented


@dataclass
class _Topology:
    """Edge and corner incidence for a polygon mesh with fixed arity."""

    edge_key: np.ndarray        # per half-edge undirected key
    half_start: np.ndarray      # per half-edge start vertex
    half_end: np.ndarray
    edge_first: np.ndarray      # sorted half-edge order grouped per edge
    edge_order: np.ndarray
    edge_count: np.ndarray      # incident half-edges per unique edge
    edge_of_half: np.ndarray    # unique edge id per half-edge
    corner_component: np.ndarray
    n_edges: int


def _topology(faces, n_vertices, links=None):
    """Build incidence tables; ``links`` optionally overrides corner pairing
    across non-manifold edges (pairs of half-edge ids)."""
    nf, k = faces.shape
    hs = faces.reshape(-1)
    he = np.roll(faces, -1, axis=1).reshape(-1)
    lo, hi = np.minimum(hs, he), np.maximum(hs, he)
    key = lo * np.int64(max(n_vertices, 1)) + hi
    order = np.argsort(key, kind="stable")
    ks = key[order]
    if len(ks):
        first = np.r_[0, np.flatnonzero(np.diff(ks)) + 1]
    else:
        first = np.zeros(0, np.int64)
    count = np.diff(np.r_[first, len(ks)])
    edge_of_half = np.empty(len(ks), np.int64)
    edge_of_half[order] = np.repeat(np.arange(len(first)), count)

    # corner graph: corners of the same vertex joined across manifold edges
    if links is None:
        pairs = first[count == 2]
        h1, h2 = order[pairs], order[pairs + 1]
    else:
        h1, h2 = links
    rows, cols = [], []
    f1, c1 = h1 // k, h1 % k
    f2, c2 = h2 // k, h2 % k
    for x1 in (hs[h1], he[h1]):
        # corners holding vertex x1 in both faces
        corner1 = np.where(faces[f1, c1] == x1, f1 * k + c1, f1 * k + (c1 + 1) % k)
        corner2 = np.where(faces[f2, c2] == x1, f2 * k + c2, f2 * k + (c2 + 1) % k)
        rows.append(corner1)
        cols.append(corner2)
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    nc = nf * k
    g = sparse.coo_matrix((np.ones(len(rows), np.int8), (rows, cols)), shape=(nc, nc))
    _, comp = csgraph.connected_components(g, directed=False)
    return _Topology(key, hs, he, first, order, count, edge_of_half, comp, len(first))


def audit_faces(faces, n_vertices=None):
    """Audit a polygon mesh given as an (F, k) index array."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or len(faces) == 0:
        raise EmptyMesh("audit needs at least one face")
    if n_vertices is None:
        n_vertices = int(faces.max()) + 1
    t = _topology(faces, n_vertices)
    boundary = int((t.edge_count == 1).sum())
    nonmanifold_edges = int((t.edge_count > 2).sum())

    # vertex fans: more than one corner component at a vertex
    vert = faces.reshape(-1)
    pair = np.unique(np.stack([vert, t.corner_component]), axis=1)
    comps_per_vertex = np.bincount(pair[0], minlength=n_vertices)
    nonmanifold_vertices = int((comps_per_vertex > 1).sum())

    # orientation: each directed half-edge at most once, manifold edges opposite
    directed = t.half_start * np.int64(max(n_vertices, 1)) + t.half_end
    oriented = len(np.unique(directed)) == len(directed)
    if oriented:
        pairs = t.edge_first[t.edge_count == 2]
        h1, h2 = t.edge_order[pairs], t.edge_order[pairs + 1]
        oriented = bool(np.all(t.half_start[h1] == t.half_end[h2]))

    n_used = len(np.unique(vert))
    chi = n_used - t.n_edges + len(faces)
    return MeshAudit(
        is_closed=boundary == 0,
        is_two_manifold=nonmanifold_edges == 0 and nonmanifold_vertices == 0,
        is_consistently_oriented=bool(oriented),
        euler_characteristic=int(chi),
        boundary_edge_count=boundary,
        nonmanifold_edge_count=nonmanifold_edges,
        nonmanifold_vertex_count=nonmanifold_vertices,
    )


def audit_mesh(mesh: TriangleMesh) -> MeshAudit:
    return audit_faces(mesh.faces, mesh.n_vertices)


@dataclass(frozen=True)
class GridSpec:
    """Cubic sampling grid shared by the three images.

    Pixel centre ``i`` along any axis sits at ``origin[a] + (i + 0.5) * d``.
    """

    origin: tuple
    width: float
    resolution: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "width", float(self.width))
        if not self.width > 0:
            raise ValueError("grid width must be positive")
        if self.resolution is not None:
            if int(self.resolution) < 2:
                raise ValueError("grid resolution must be >= 2")
            object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def pixel_width(self):
        return self.width / self.resolution

    def with_resolution(self, w):
        return GridSpec(self.origin, self.width, w)

    def centers(self, axis):
        """Absolute coordinates of the pixel centres / grid nodes along axis."""
        return self.origin[axis] + (np.arange(self.resolution) + 0.5) * self.pixel_width

    def node_depths(self):
        """Node depths measured from the origin, identical on every axis."""
        return (np.arange(self.resolution) + 0.5) * self.pixel_width

    def node_position(self, i, j, k):
        d = self.pixel_width
        return np.array([self.origin[a] + (idx + 0.5) * d for a, idx in enumerate((i, j, k))])

    def contains_box(self, lo, hi):
        o = np.asarray(self.origin)
        return bool(np.all(np.asarray(lo) >= o) and np.all(np.asarray(hi) <= o + self.width))


def bounding_cube(mesh: TriangleMesh, padding_fraction=0.05, resolution=None) -> GridSpec:
    """Cube centred on the mesh bounding box, edge = max extent * (1 + padding)."""
    if padding_fraction < 0:
        raise ValueError("padding_fraction must be >= 0")
    lo, hi = mesh.bounds()
    width = float((hi - lo).max()) * (1.0 + padding_fraction)
    if width <= 0:
        raise EmptyMesh("mesh has zero extent")
    center = 0.5 * (lo + hi)
    return GridSpec(tuple(center - 0.5 * width), width, resolution)


# fixed, distinct in-plane jitter directions for vertex-piercing rays
_JITTER_DIRS = ((0.6, 0.8), (-0.8, 0.6), (0.28, -0.96))


class _RayCaster:
    """Per-axis face orientation tables for repeated axis-parallel queries."""

    def __init__(self, mesh):
        self.P = mesh.vertices
        self.F = mesh.faces
        self.nbr = mesh.edge_neighbours()
        self._sgn = {}

    def signs(self, axis):
        if axis not in self._sgn:
            self._sgn[axis] = _raster.face_signs(self.P, self.F, int(axis))
        return self._sgn[axis]

    def line(self, axis, qu, qv, jitter):
        """Cast with the perturbation fallback; returns (depths, faces)."""
        sgn = self.signs(axis)
        depths, faces, degenerate = _raster.cast_line(self.P, self.F, self.nbr, sgn, int(axis), qu, qv)
        for du, dv in _JITTER_DIRS:
            if not degenerate:
                return depths, faces
            depths, faces, degenerate = _raster.cast_line(
                self.P, self.F, self.nbr, sgn, int(axis), qu + du * jitter, qv + dv * jitter)
        if degenerate:
            raise DegenerateHit(f"ray ({qu!r}, {qv!r}) along axis {int(axis)} pierces a vertex")
        return depths, faces


def ray_surface_hits(mesh: TriangleMesh, ray_origin, axis, pixel_width=None):
    """Hits of the axis-parallel line through ``ray_origin`` with the surface.

    Returns a list of ``(depth, face_id)`` sorted by depth, where depth is
    measured from ``ray_origin`` along the positive axis (hits behind the
    origin have negative depth).  Edge hits follow the silhouette rule; a ray
    through a vertex is retried with a tiny in-plane offset.
    """
    axis = Axis(axis)
    p = np.asarray(ray_origin, dtype=np.float64)
    u, v = axis.plane_axes
    if pixel_width is None:
        lo, hi = mesh.bounds()
        pixel_width = float((hi - lo).max()) / 256.0
    depths, faces = _RayCaster(mesh).line(axis, p[u], p[v], 1e-7 * pixel_width)
    return [(float(t - p[axis]), int(f)) for t, f in zip(depths, faces)]


# ---------------------------------------------------------------------------
# point / triangle distance and brute-force membership


def closest_points_on_triangles(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, row-wise (Ericson's method)."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        out = a + ab * v_in[:, None] + ac * w_in[:, None]

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)          # edge ab
        t = d1 / (d1 - d3)
        out = np.where(m[:, None], a + ab * t[:, None], out)
        m2 = (vb <= 0) & (d2 >= 0) & (d6 <= 0)         # edge ac
        t = d2 / (d2 - d6)
        out = np.where((m2 & ~m)[:, None], a + ac * t[:, None], out)
        m3 = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)   # edge bc
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where((m3 & ~m & ~m2)[:, None], b + (c - b) * t[:, None], out)

    # vertex regions take precedence
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


def point_triangle_distance(p, a, b, c):
    q = closest_points_on_triangles(p, a, b, c)
    return np.linalg.norm(np.asarray(p, float) - q, axis=1)


class TriangleIndex:
    """Exact nearest-triangle queries backed by a k-d tree over centroids.

    A candidate ball of radius (best centroid-candidate distance + largest
    triangle radius) is guaranteed to contain the centroid of the true
    closest triangle.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces == 0:
            raise EmptyMesh("cannot index an empty mesh")
        self.mesh = mesh
        tri = mesh.vertices[mesh.faces]
        self._a, self._b, self._c = tri[:, 0], tri[:, 1], tri[:, 2]
        self.centroids = tri.mean(axis=1)
        self.rmax = float(np.linalg.norm(tri - self.centroids[:, None, :], axis=2).max())
        self.tree = cKDTree(self.centroids)

    def query(self, points, chunk=4096):
        """Return (distance, face_id, closest_point) for each query point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        dist = np.empty(n)
        face = np.empty(n, np.int64)
        closest = np.empty((n, 3))
        k = min(4, self.mesh.n_faces)
        for s in range(0, n, chunk):
            p = points[s:s + chunk]
            _, near = self.tree.query(p, k=k)
            near = near.reshape(len(p), k)
            rep = np.repeat(np.arange(len(p)), k)
            ub = point_triangle_distance(p[rep], self._a[near.ravel()], self._b[near.ravel()],
                                         self._c[near.ravel()]).reshape(len(p), k).min(axis=1)
            balls = self.tree.query_ball_point(p, ub + self.rmax + 1e-12)
            lens = np.fromiter((len(x) for x in balls), np.int64, len(balls))
            cand = np.fromiter((i for x in balls for i in x), np.int64, int(lens.sum()))
            owner = np.repeat(np.arange(len(p)), lens)
            q = closest_points_on_triangles(p[owner], self._a[cand], self._b[cand], self._c[cand])
            dd = np.linalg.norm(p[owner] - q, axis=1)
            # stable min per owner: sort by (owner, distance, face)
            order = np.lexsort((cand, dd, owner))
            firsts = order[np.r_[0, np.flatnonzero(np.diff(owner[order])) + 1]]
            dist[s:s + len(p)] = dd[firsts]
            face[s:s + len(p)] = cand[firsts]
            closest[s:s + len(p)] = q[firsts]
        return dist, face, closest


_ORACLE_DIRS = np.array([
    [0.1234, 0.2345, 0.9642],
    [-0.3141, 0.1592, 0.9359],
    [0.2718, -0.2818, 0.9201],
    [0.5772, 0.1566, -0.8015],
])


@njit(cache=True, nogil=True)
def _crossing_kernel(points, a, e1, e2, h, inv, ok, direction, tol, counts, ambiguous):
    for p in range(points.shape[0]):
        n = 0
        amb = False
        for f in range(a.shape[0]):
            if not ok[f]:
                continue
            sx = points[p, 0] - a[f, 0]
            sy = points[p, 1] - a[f, 1]
            sz = points[p, 2] - a[f, 2]
            uu = (sx * h[f, 0] + sy * h[f, 1] + sz * h[f, 2]) * inv[f]
            if uu < -tol or uu > 1 + tol:
                continue
            qx = sy * e1[f, 2] - sz * e1[f, 1]
            qy = sz * e1[f, 0] - sx * e1[f, 2]
            qz = sx * e1[f, 1] - sy * e1[f, 0]
            vv = (qx * direction[0] + qy * direction[1] + qz * direction[2]) * inv[f]
            tt = (qx * e2[f, 0] + qy * e2[f, 1] + qz * e2[f, 2]) * inv[f]
            if uu > tol and vv > tol and uu + vv < 1 - tol and tt > tol:
                n += 1
            elif uu > -tol and vv > -tol and uu + vv < 1 + tol and tt > -tol:
                amb = True
        counts[p] = n
        ambiguous[p] = amb


def _crossings(mesh, points, direction):
    """Count crossings of rays p + t*dir (t > 0); flag near-degenerate rays."""
    direction = direction / np.linalg.norm(direction)
    tri = mesh.vertices[mesh.faces]
    a = np.ascontiguousarray(tri[:, 0])
    e1 = np.ascontiguousarray(tri[:, 1] - a)
    e2 = np.ascontiguousarray(tri[:, 2] - a)
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    counts = np.zeros(len(points), np.int64)
    ambiguous = np.zeros(len(points), bool)
    _crossing_kernel(np.ascontiguousarray(points, dtype=np.float64), a, e1, e2, h, inv, ok,
                     direction, 1e-10, counts, ambiguous)
    return counts, ambiguous


def points_in_solid(mesh: TriangleMesh, points, surface_tol=1e-9):
    """Vectorised brute-force membership by ray parity (test oracle).

    Rays use fixed skew directions, re-cast when a ray grazes an edge.
    Raises OnSurface when any point is within ``surface_tol`` of the surface.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist, _, _ = TriangleIndex(mesh).query(points)
    if np.any(dist < surface_tol):
        raise OnSurface(f"{int((dist < surface_tol).sum())} point(s) lie on the surface")
    result = np.zeros(len(points), bool)
    todo = np.arange(len(points))
    for direction in _ORACLE_DIRS:
        counts, amb = _crossings(mesh, points[todo], direction)
        result[todo[~amb]] = (counts[~amb] % 2) == 1
        todo = todo[amb]
        if todo.size == 0:
            break
    if todo.size:
        raise OnSurface("could not find a clean ray for some points")
    return result


def point_in_solid_oracle(mesh: TriangleMesh, p) -> Membership:
    return Inside if points_in_solid(mesh, [p])[0] else Outside
