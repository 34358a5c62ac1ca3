"""Layered depth-normal images: construction, validation and queries.

A solid is stored as three images, one per axis.  Each image keeps its
columns in compressed-row form: ``offsets`` (w*w + 1) indexes into flat
``depths`` / ``normals`` arrays, column (i, j) living at row-major slot
``i * w + j`` where i runs along the image's u axis and j along v
(see :attr:`Axis.plane_axes`).  Depths are float32, measured from the grid
origin along the positive axis.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from . import _raster
from ._parallel import chunks, pmap, resolve_workers
from .errors import DegenerateHit, OpenMesh, OutOfGrid, ParityViolation
from .mesh import (Axis, GridSpec, Inside, Membership, Outside, TriangleMesh, _JITTER_DIRS,
                   _RayCaster, audit_mesh)


class NormalMode(enum.Enum):
    ACCURATE = "accurate"
    QUANTIZED8 = "quant8"

    @property
    def normal_dtype(self):
        return np.float32 if self is NormalMode.ACCURATE else np.int8

    @property
    def normal_bytes(self):
        return 12 if self is NormalMode.ACCURATE else 3


def quantize_normals(n):
    """Signed 8-bit code per component (127 steps per unit)."""
    return np.clip(np.rint(np.asarray(n, np.float64) * 127.0), -127, 127).astype(np.int8)


def decode_normals(n):
    """Unit float64 normals from either stored representation."""
    n = np.asarray(n)
    if n.dtype == np.int8:
        f = n.astype(np.float64) / 127.0
        length = np.linalg.norm(f, axis=-1, keepdims=True)
        return f / np.where(length == 0, 1.0, length)
    return n.astype(np.float64)


def encode_normals(n, mode: NormalMode):
    if mode is NormalMode.QUANTIZED8:
        return quantize_normals(n)
    return np.asarray(n, np.float64).astype(np.float32)


@dataclass(frozen=True)
class HermiteSample:
    depth: float
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class PixelColumn:
    """Sorted samples along one ray; pairs (2k, 2k+1) bound inside intervals."""

    depths: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.depths)

    @classmethod
    def empty(cls, normal_dtype=np.float32):
        return cls(np.zeros(0, np.float32), np.zeros((0, 3), normal_dtype))

    @classmethod
    def from_intervals(cls, intervals, normals=None, normal_dtype=np.float32):
        """Build from [(lo, hi), ...]; default normals point -axis / +axis."""
        depths = np.asarray([x for iv in intervals for x in iv], np.float32)
        if normals is None:
            normals = np.zeros((len(depths), 3))
            normals[0::2, 2] = -1.0
            normals[1::2, 2] = 1.0
        normals = np.asarray(normals)
        if normal_dtype == np.int8 and normals.dtype != np.int8:
            normals = quantize_normals(normals)
        return cls(depths, normals.astype(normal_dtype).reshape(-1, 3))

    @property
    def samples(self):
        un = decode_normals(self.normals)
        return [HermiteSample(float(t), un[k]) for k, t in enumerate(self.depths)]

    def intervals(self):
        d = self.depths.astype(np.float64)
        return list(zip(d[0::2].tolist(), d[1::2].tolist()))

    def is_valid(self):
        return len(self.depths) % 2 == 0 and bool(np.all(np.diff(self.depths) > 0))


def column_membership(column: PixelColumn, depth) -> Membership:
    """Inside iff an odd number of samples lie strictly before ``depth``.

    A depth equal to a sample depth is Outside (intervals are open).
    """
    d = column.depths.astype(np.float64)
    depth = float(depth)
    if np.any(d == depth):
        return Outside
    return Inside if int(np.count_nonzero(d < depth)) % 2 == 1 else Outside


@dataclass(frozen=True, eq=False)
class Ldni:
    axis: Axis
    grid: GridSpec
    offsets: np.ndarray
    depths: np.ndarray
    normals: np.ndarray

    @classmethod
    def empty(cls, axis, grid, mode=NormalMode.ACCURATE):
        w = grid.resolution
        return cls(Axis(axis), grid, np.zeros(w * w + 1, np.int64), np.zeros(0, np.float32),
                   np.zeros((0, 3), mode.normal_dtype))

    @classmethod
    def from_records(cls, axis, grid, pix, depths, normals):
        """Build from per-sample pixel ids; records must be sorted by (pix, depth)."""
        w = grid.resolution
        counts = np.bincount(pix, minlength=w * w) if len(pix) else np.zeros(w * w, np.int64)
        offsets = np.zeros(w * w + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(Axis(axis), grid, offsets, np.ascontiguousarray(depths, np.float32),
                   np.ascontiguousarray(normals))

    @property
    def resolution(self):
        return self.grid.resolution

    @property
    def counts(self):
        return np.diff(self.offsets)

    @property
    def n_samples(self):
        return int(self.offsets[-1])

    @property
    def max_layers(self):
        c = self.counts
        return int(c.max()) if c.size else 0

    def pixel_ids(self):
        return np.repeat(np.arange(len(self.offsets) - 1), self.counts)

    def column(self, i, j) -> PixelColumn:
        s = int(i) * self.resolution + int(j)
        lo, hi = self.offsets[s], self.offsets[s + 1]
        return PixelColumn(self.depths[lo:hi], self.normals[lo:hi])

    def sample_points(self):
        """Absolute 3D positions of all samples, in storage order."""
        w = self.resolution
        pix = self.pixel_ids()
        u, v = self.axis.plane_axes
        d = self.grid.pixel_width
        pts = np.empty((len(pix), 3))
        pts[:, u] = self.grid.origin[u] + (pix // w + 0.5) * d
        pts[:, v] = self.grid.origin[v] + (pix % w + 0.5) * d
        pts[:, self.axis] = self.grid.origin[self.axis] + self.depths.astype(np.float64)
        return pts


@dataclass(frozen=True, eq=False)
class LdniSolid:
    grid: GridSpec
    images: tuple
    normal_mode: NormalMode = NormalMode.ACCURATE

    def __post_init__(self):
        if len(self.images) != 3:
            raise ValueError("an LDNI solid needs exactly three images")
        for a, img in enumerate(self.images):
            if img.axis != a or img.grid != self.grid:
                raise ValueError("images must be ordered X, Y, Z and share the solid's grid")

    @classmethod
    def empty(cls, grid, mode=NormalMode.ACCURATE):
        return cls(grid, tuple(Ldni.empty(a, grid, mode) for a in Axis), mode)

    @property
    def ldni_x(self):
        return self.images[0]

    @property
    def ldni_y(self):
        return self.images[1]

    @property
    def ldni_z(self):
        return self.images[2]

    @property
    def total_samples(self):
        return sum(img.n_samples for img in self.images)

    def __getitem__(self, axis):
        return self.images[int(axis)]


@dataclass(frozen=True)
class LdniStats:
    total_samples: int
    max_layers: tuple
    bytes_estimate: int
    nonempty_columns: int = 0


def stats(solid: LdniSolid) -> LdniStats:
    """Sample totals and a byte estimate of the sparse in-memory layout.

    Per sample: 4-byte depth + 3 normal components (4 bytes each for accurate,
    1 byte each for quantized).  Per image: a w*w occupancy bitmap plus a
    2-byte layer count for every non-empty column.
    """
    w = solid.grid.resolution
    per_sample = 4 + solid.normal_mode.normal_bytes
    total = solid.total_samples
    nonempty = sum(int(np.count_nonzero(img.counts)) for img in solid.images)
    overhead = 3 * ((w * w + 7) // 8) + 2 * nonempty
    return LdniStats(
        total_samples=total,
        max_layers=tuple(img.max_layers for img in solid.images),
        bytes_estimate=total * per_sample + overhead,
        nonempty_columns=nonempty,
    )


def validate_parity(solid: LdniSolid):
    """List of (axis, i, j) whose column holds an odd number of samples."""
    out = []
    w = solid.grid.resolution
    for img in solid.images:
        for s in np.flatnonzero(img.counts % 2):
            out.append((int(img.axis), int(s // w), int(s % w)))
    return out


def node_depth(k, pixel_width):
    # single definition shared by every node/sample comparison
    return (np.asarray(k, np.float64) + 0.5) * pixel_width


def axis_votes(solid: LdniSolid, i, j, k):
    """Per-axis inside votes for grid node (i, j, k)."""
    idx = (i, j, k)
    d = solid.grid.pixel_width
    votes = []
    for a in Axis:
        u, v = a.plane_axes
        col = solid[a].column(idx[u], idx[v])
        votes.append(column_membership(col, node_depth(idx[a], d)) is Inside)
    return votes


def classify_grid_node(solid: LdniSolid, i, j, k) -> Membership:
    """Inside iff at least two of the three images place the node inside."""
    w = solid.grid.resolution
    if not all(0 <= x < w for x in (i, j, k)):
        raise IndexError("grid node out of range")
    return Inside if sum(axis_votes(solid, i, j, k)) >= 2 else Outside


# ---------------------------------------------------------------------------
# sampling


@njit(cache=True)
def _collapse_ties(pix, depths, normal_axis, keep):
    """Drop pairs of equal-depth samples with opposing normals in a column."""
    n = len(pix)
    i = 0
    while i < n:
        if (i + 1 < n and pix[i] == pix[i + 1] and depths[i] == depths[i + 1]
                and (normal_axis[i] > 0) != (normal_axis[i + 1] > 0)):
            keep[i] = False
            keep[i + 1] = False
            i += 2
        else:
            i += 1


def _finish_columns(pix, depths32, faces, normals_src, axis):
    """Sort, collapse zero-thickness ties; returns arrays and the keep mask."""
    order = np.lexsort((faces, depths32, pix))
    pix, depths32, faces = pix[order], depths32[order], faces[order]
    keep = np.ones(len(pix), bool)
    _collapse_ties(pix, depths32, normals_src[faces, axis], keep)
    return pix[keep], depths32[keep], faces[keep]


def _raster_axis(mesh, caster, grid, axis, workers):
    P, F = mesh.vertices, mesh.faces
    sgn = caster.signs(axis)
    u, v = axis.plane_axes
    ou, ov = grid.origin[u], grid.origin[v]
    d, w = grid.pixel_width, grid.resolution

    def run(span):
        lo, hi = span
        dummy_i = np.zeros(0, np.int64)
        dummy_f = np.zeros(0, np.float64)
        n = _raster.raster_faces(P, F, caster.nbr, sgn, int(axis), ou, ov, d, w, lo, hi,
                                 dummy_i, dummy_f, dummy_i, False)
        pix = np.empty(n, np.int64)
        dep = np.empty(n, np.float64)
        fac = np.empty(n, np.int64)
        _raster.raster_faces(P, F, caster.nbr, sgn, int(axis), ou, ov, d, w, lo, hi,
                             pix, dep, fac, True)
        return pix, dep, fac

    parts = pmap(run, chunks(len(F), 4 * resolve_workers(workers)), workers)
    pix = np.concatenate([p[0] for p in parts])
    dep = np.concatenate([p[1] for p in parts])
    fac = np.concatenate([p[2] for p in parts])
    return pix, dep, fac


def _recast_column(mesh, caster, grid, axis, s, vertex_hit):
    """Re-cast one column with in-plane perturbations until it is clean."""
    w, d = grid.resolution, grid.pixel_width
    u, v = axis.plane_axes
    qu = grid.origin[u] + (s // w + 0.5) * d
    qv = grid.origin[v] + (s % w + 0.5) * d
    sgn = caster.signs(axis)
    attempts = [(0.0, 0.0)] if vertex_hit else []
    attempts += list(_JITTER_DIRS)
    degenerate = False
    for du, dv in attempts:
        depths, faces, degenerate = _raster.cast_line(
            mesh.vertices, mesh.faces, caster.nbr, sgn, int(axis),
            qu + du * 1e-7 * d, qv + dv * 1e-7 * d)
        if degenerate:
            continue
        d32 = (depths - grid.origin[axis]).astype(np.float32)
        pix = np.full(len(faces), s, np.int64)
        pix, d32, faces = _finish_columns(pix, d32, faces, mesh.face_normals, int(axis))
        if len(faces) % 2 == 0:
            return d32, faces
    if degenerate:
        raise DegenerateHit(f"column axis={int(axis)} i={s // w} j={s % w} pierces a vertex "
                            "after perturbation retries")
    raise ParityViolation(int(axis), s // w, s % w)


def _sample_axis(mesh, caster, grid, axis, mode, workers):
    w = grid.resolution
    pix, dep, fac = _raster_axis(mesh, caster, grid, axis, workers)
    bad_vertex = np.unique(pix[fac < 0])
    good = ~np.isin(pix, bad_vertex)
    pix, dep, fac = pix[good], dep[good], fac[good]
    d32 = (dep - grid.origin[axis]).astype(np.float32)
    pix, d32, fac = _finish_columns(pix, d32, fac, mesh.face_normals, int(axis))

    counts = np.bincount(pix, minlength=w * w)
    bad_odd = np.flatnonzero(counts % 2)
    redo = [(int(s), True) for s in bad_vertex] + [(int(s), False) for s in bad_odd]
    if redo:
        drop = np.isin(pix, bad_odd)
        pix, d32, fac = pix[~drop], d32[~drop], fac[~drop]
        extra = [(s,) + _recast_column(mesh, caster, grid, axis, s, vh) for s, vh in redo]
        pix = np.concatenate([pix] + [np.full(len(e[2]), e[0], np.int64) for e in extra])
        d32 = np.concatenate([d32] + [e[1] for e in extra])
        fac = np.concatenate([fac] + [e[2] for e in extra])
        order = np.lexsort((fac, d32, pix))
        pix, d32, fac = pix[order], d32[order], fac[order]

    normals = encode_normals(mesh.face_normals[fac], mode)
    return Ldni.from_records(axis, grid, pix, d32, normals)


def sample_solid(mesh: TriangleMesh, grid: GridSpec, normal_mode=NormalMode.ACCURATE,
                 workers=None) -> LdniSolid:
    """Ray-cast a closed 2-manifold mesh into three orthogonal LDNIs.

    Rays pass through pixel centres.  Hits on shared edges count once unless
    the edge is a silhouette; faces parallel to the ray are skipped; rays that
    pierce a vertex are re-cast with a 1e-7 * d in-plane offset.
    """
    normal_mode = NormalMode(normal_mode)
    if grid.resolution is None:
        raise ValueError("grid resolution is not set")
    audit = audit_mesh(mesh)
    if not (audit.is_closed and audit.is_two_manifold):
        raise OpenMesh(f"mesh must be closed and two-manifold: {audit}")
    lo, hi = mesh.bounds()
    if not grid.contains_box(lo, hi):
        raise OutOfGrid("mesh bounding box exceeds the grid cube")
    caster = _RayCaster(mesh)
    images = tuple(_sample_axis(mesh, caster, grid, a, normal_mode, workers) for a in Axis)
    return LdniSolid(grid, images, normal_mode)


def sphere_columns(center, radius, grid, axis):
    """Analytic ray/sphere intersections for one image.

    Returns (pixel ids, entry depths, exit depths, entry normals, exit normals)
    for every pixel centre strictly inside the sphere's projected disk.
    """
    w, d = grid.resolution, grid.pixel_width
    u, v = Axis(axis).plane_axes
    c = np.asarray(center, np.float64)
    cu = (c[u] - grid.origin[u]) / d - 0.5
    cv = (c[v] - grid.origin[v]) / d - 0.5
    rp = radius / d
    i = np.arange(max(0, int(np.floor(cu - rp))), min(w - 1, int(np.ceil(cu + rp))) + 1)
    j = np.arange(max(0, int(np.floor(cv - rp))), min(w - 1, int(np.ceil(cv + rp))) + 1)
    ii, jj = np.meshgrid(i, j, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    du = grid.origin[u] + (ii + 0.5) * d - c[u]
    dv = grid.origin[v] + (jj + 0.5) * d - c[v]
    rho2 = du * du + dv * dv
    m = rho2 < radius * radius
    ii, jj, du, dv = ii[m], jj[m], du[m], dv[m]
    h = np.sqrt(radius * radius - rho2[m])
    ca = c[axis] - grid.origin[axis]
    lo = (ca - h).astype(np.float32)
    hi = (ca + h).astype(np.float32)
    keep = lo < hi
    ii, jj, du, dv, h, lo, hi = (x[keep] for x in (ii, jj, du, dv, h, lo, hi))
    n_lo = np.zeros((len(h), 3))
    n_lo[:, u], n_lo[:, v], n_lo[:, axis] = du, dv, -h
    n_hi = n_lo.copy()
    n_hi[:, axis] = h
    n_lo /= radius
    n_hi /= radius
    return ii * w + jj, lo, hi, n_lo, n_hi


def sample_sphere(center, radius, grid: GridSpec, normal_mode=NormalMode.ACCURATE) -> LdniSolid:
    """Sample a sphere analytically (no mesh): two samples per covered column."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    normal_mode = NormalMode(normal_mode)
    c = np.asarray(center, float)
    if not grid.contains_box(c - radius, c + radius):
        raise OutOfGrid("sphere exceeds the grid cube")
    images = []
    for a in Axis:
        pix, lo, hi, n_lo, n_hi = sphere_columns(c, radius, grid, a)
        depths = np.stack([lo, hi], axis=1).ravel()
        normals = np.stack([n_lo, n_hi], axis=1).reshape(-1, 3)
        images.append(Ldni.from_records(a, grid, np.repeat(pix, 2), depths,
                                        encode_normals(normals, normal_mode)))
    return LdniSolid(grid, tuple(images), normal_mode)


def solid_from_columns(grid: GridSpec, columns: Sequence[dict], mode=NormalMode.ACCURATE):
    """Build a solid from {(i, j): PixelColumn} maps, one per axis (tests, tools)."""
    w = grid.resolution
    images = []
    for a in Axis:
        cols = columns[a] if a < len(columns) else {}
        pix, dep, nor = [], [], []
        for (i, j), col in sorted(cols.items()):
            pix.append(np.full(len(col), i * w + j, np.int64))
            dep.append(np.asarray(col.depths, np.float32))
            nor.append(np.asarray(col.normals, mode.normal_dtype).reshape(-1, 3))
        if pix:
            images.append(Ldni.from_records(a, grid, np.concatenate(pix), np.concatenate(dep),
                                            np.concatenate(nor)))
        else:
            images.append(Ldni.empty(a, grid, mode))
    return LdniSolid(grid, tuple(images), mode)


__all__ = [
    "NormalMode", "HermiteSample", "PixelColumn", "Ldni", "LdniSolid", "LdniStats",
    "sample_solid", "sample_sphere", "validate_parity", "classify_grid_node",
    "column_membership", "stats", "quantize_normals", "decode_normals",
]
