"""Surface error measurement and memory statistics."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._parallel import chunks, pmap, resolve_workers
from .contour import contour
from .errors import EmptyMesh
from .mesh import TriangleIndex, TriangleMesh
from .sampler import LdniSolid, LdniStats, stats


class Normalization(enum.Enum):
    ABSOLUTE = "absolute"
    BBOX_DIAGONAL = "bbox_diagonal"


@dataclass(frozen=True)
class ErrorReport:
    e_max: float
    e_mean: float
    sample_count: int
    normalization: Normalization = Normalization.ABSOLUTE

    def normalized(self, diagonal):
        """Same report divided by a bounding-box diagonal."""
        return ErrorReport(self.e_max / diagonal, self.e_mean / diagonal, self.sample_count,
                           Normalization.BBOX_DIAGONAL)

    def as_dict(self):
        return {"e_max": self.e_max, "e_mean": self.e_mean,
                "sample_count": self.sample_count, "normalization": self.normalization.value}


def _stratified_barycentric(k):
    """Centroids of the k*k congruent sub-triangles of the unit triangle."""
    pts = []
    for i in range(k):
        for j in range(k - i):
            pts.append(((i + 1 / 3) / k, (j + 1 / 3) / k))
            if i + j <= k - 2:
                pts.append(((i + 2 / 3) / k, (j + 2 / 3) / k))
    return np.asarray(pts)


def sample_surface(mesh: TriangleMesh, samples_per_area):
    """Stratified area samples plus the mesh vertices.

    Each triangle of area A is split into k*k congruent pieces with
    k = ceil(sqrt(A * samples_per_area)); the piece centroids are returned
    with weight A / k^2.  Vertices carry zero weight, so they enter maxima
    but not means.
    """
    if mesh.n_faces == 0:
        raise EmptyMesh("cannot sample an empty mesh")
    area = mesh.face_areas()
    k = np.maximum(1, np.ceil(np.sqrt(area * float(samples_per_area)))).astype(np.int64)
    tri = mesh.vertices[mesh.faces]
    pts, wts = [], []
    for kk in np.unique(k):
        sel = np.flatnonzero(k == kk)
        bary = _stratified_barycentric(int(kk))
        a, b, c = tri[sel, 0], tri[sel, 1], tri[sel, 2]
        p = (a[:, None, :] + bary[None, :, 0, None] * (b - a)[:, None, :]
             + bary[None, :, 1, None] * (c - a)[:, None, :])
        pts.append(p.reshape(-1, 3))
        wts.append(np.repeat(area[sel] / kk ** 2, len(bary)))
    order_pts = np.concatenate(pts)
    order_w = np.concatenate(wts)
    used = np.unique(mesh.faces)
    return (np.concatenate([order_pts, mesh.vertices[used]]),
            np.concatenate([order_w, np.zeros(len(used))]))


def _reduce(dist, weights, n):
    # np.sum uses pairwise summation in a fixed order: deterministic
    return ErrorReport(float(dist.max()), float(np.sum(dist * weights) / np.sum(weights)), n)


def one_sided_distance(src: TriangleMesh, dst: TriangleMesh, samples_per_area=1e5,
                       workers=None) -> ErrorReport:
    """Distances from points sampled on ``src`` to the surface of ``dst``."""
    if dst.n_faces == 0:
        raise EmptyMesh("target mesh is empty")
    pts, wts = sample_surface(src, samples_per_area)
    index = TriangleIndex(dst)
    parts = pmap(lambda s: index.query(pts[s[0]:s[1]])[0],
                 chunks(len(pts), 4 * resolve_workers(workers)), workers)
    return _reduce(np.concatenate(parts), wts, len(pts))


def surface_distance(a: TriangleMesh, b: TriangleMesh, samples_per_area=1e5, symmetric=True,
                     workers=None) -> ErrorReport:
    """Metro-style surface distance; symmetric by default.

    The symmetric report takes the larger of the two one-sided maxima and
    the mean of the two one-sided means.
    """
    ab = one_sided_distance(a, b, samples_per_area, workers)
    if not symmetric:
        return ab
    ba = one_sided_distance(b, a, samples_per_area, workers)
    return ErrorReport(max(ab.e_max, ba.e_max), 0.5 * (ab.e_mean + ba.e_mean),
                       ab.sample_count + ba.sample_count)


def sphere_distance(mesh: TriangleMesh, center, radius, samples_per_area=1e5) -> ErrorReport:
    """Distance from ``mesh`` to an exact sphere (one-sided, mesh to sphere)."""
    pts, wts = sample_surface(mesh, samples_per_area)
    dist = np.abs(np.linalg.norm(pts - np.asarray(center, float), axis=1) - float(radius))
    return _reduce(dist, wts, len(pts))


def radial_deviation(mesh: TriangleMesh, center, radius):
    """Largest |distance to centre - radius| over the mesh vertices."""
    used = mesh.vertices[np.unique(mesh.faces)]
    return float(np.abs(np.linalg.norm(used - np.asarray(center, float), axis=1) - radius).max())


def bbox_diagonal(mesh: TriangleMesh):
    lo, hi = mesh.bounds()
    return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class MemoryReport:
    stats: LdniStats
    layer_histogram: tuple = field(default_factory=tuple)   # per axis {layers: columns}

    @property
    def bytes_estimate(self):
        return self.stats.bytes_estimate

    def as_dict(self):
        return {
            "total_samples": self.stats.total_samples,
            "max_layers": list(self.stats.max_layers),
            "bytes_estimate": self.stats.bytes_estimate,
            "nonempty_columns": self.stats.nonempty_columns,
            "layer_histogram": [{str(k): v for k, v in h.items()} for h in self.layer_histogram],
        }


def memory_report(solid: LdniSolid) -> MemoryReport:
    """LdniStats plus, per axis, how many non-empty columns hold each layer count."""
    hist = []
    for img in solid.images:
        c = img.counts
        vals, cnt = np.unique(c[c > 0], return_counts=True)
        hist.append({int(v): int(n) for v, n in zip(vals, cnt)})
    return MemoryReport(stats(solid), tuple(hist))


def reference_gridnode_contour(solid: LdniSolid, workers=None) -> TriangleMesh:
    """Baseline contouring that ignores complex edges (grid-node signs only)."""
    return contour(solid, workers=workers, ignore_complex=True)
