"""Fixture solids used by tests, scripts and the acceptance suite."""
import numpy as np

from .mesh import TriangleMesh

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],      # z = lo
    [4, 5, 6], [4, 6, 7],      # z = hi
    [0, 1, 5], [0, 5, 4],      # y = lo
    [2, 3, 7], [2, 7, 6],      # y = hi
    [0, 4, 7], [0, 7, 3],      # x = lo
    [1, 2, 6], [1, 6, 5],      # x = hi
])


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ])
    return TriangleMesh(v, _BOX_FACES)


def rotation_z(degrees):
    t = np.radians(degrees)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(axis, degrees):
    """Rodrigues rotation about an arbitrary axis."""
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    t = np.radians(degrees)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(t) * K + (1 - np.cos(t)) * K @ K


def rotated_cube(center=(0.5, 0.5, 0.5), size=0.5, degrees=30.0):
    """Cube of edge ``size`` rotated about the z axis through its centre."""
    c = np.asarray(center, float)
    h = 0.5 * size
    cube = box(-h * np.ones(3), h * np.ones(3))
    return cube.transformed(rotation=rotation_z(degrees), translation=c)


def cube_edges(center=(0.5, 0.5, 0.5), size=0.5, degrees=30.0):
    """The 12 edges of :func:`rotated_cube` as (start, end) segment pairs."""
    h = 0.5 * size
    R = rotation_z(degrees)
    corners = np.array([[sx, sy, sz] for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)])
    corners = corners @ R.T + np.asarray(center, float)
    segs = []
    for i in range(8):
        for j in range(i + 1, 8):
            if bin(i ^ j).count("1") == 1:
                segs.append((corners[i], corners[j]))
    return segs


def icosphere(center=(0.5, 0.5, 0.5), radius=0.3, subdivisions=4):
    """Subdivided icosahedron; 4 subdivisions give 2562 vertices."""
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
         [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
         [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.asarray(x, float) / np.linalg.norm(x) for x in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    verts = np.asarray(verts) * radius + np.asarray(center, float)
    return TriangleMesh(verts, np.asarray(faces))


def torus(center=(0.5, 0.5, 0.5), major=0.25, minor=0.1, n_major=48, n_minor=24):
    """Torus around the z axis."""
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    u = 2 * np.pi * i / n_major
    v = 2 * np.pi * j / n_minor
    # irrational phase offsets keep vertices off the pixel-centre lattice
    u = u + 0.0123
    v = v + 0.0371
    r = major + minor * np.cos(v)
    pts = np.stack([r * np.cos(u), r * np.sin(u), minor * np.sin(v)], axis=-1).reshape(-1, 3)
    pts = pts + np.asarray(center, float)
    faces = []
    for a in range(n_major):
        for b in range(n_minor):
            p00 = a * n_minor + b
            p10 = ((a + 1) % n_major) * n_minor + b
            p01 = a * n_minor + (b + 1) % n_minor
            p11 = ((a + 1) % n_major) * n_minor + (b + 1) % n_minor
            faces.append([p00, p10, p11])
            faces.append([p00, p11, p01])
    return TriangleMesh(pts, np.asarray(faces))


def plate(z_lo, thickness, xy_lo=0.3, xy_hi=0.7):
    """Thin square plate perpendicular to z."""
    return box((xy_lo, xy_lo, z_lo), (xy_hi, xy_hi, z_lo + thickness))
