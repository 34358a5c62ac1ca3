"""Mesh and LDNI file formats, plus report serialisation."""
from __future__ import annotations

import enum
import json
import os
import struct

import numpy as np

from .errors import (BadMagic, EmptyMesh, NonTriangulablePolygon, ParityViolation, ParseError,
                     TruncatedFile, VersionUnsupported)
from .mesh import Axis, GridSpec, TriangleMesh
from .sampler import Ldni, LdniSolid, NormalMode, validate_parity


class MeshFormat(enum.Enum):
    OBJ = "obj"
    STL_BINARY = "stl"
    STL_ASCII = "stl-ascii"

    @classmethod
    def from_path(cls, path):
        ext = os.path.splitext(str(path))[1].lower()
        if ext == ".obj":
            return cls.OBJ
        if ext == ".stl":
            return cls.STL_BINARY
        raise ParseError(f"cannot infer mesh format from extension {ext!r}")


# ---------------------------------------------------------------------------
# meshes


def _fan(poly, where):
    if len(poly) < 3:
        raise NonTriangulablePolygon(f"{where}: polygon with {len(poly)} vertices")
    return [(poly[0], poly[t], poly[t + 1]) for t in range(1, len(poly) - 1)]


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "f":
                    poly = []
                    for tok in parts[1:]:
                        k = int(tok.split("/")[0])
                        poly.append(k - 1 if k > 0 else len(verts) + k)
                    faces.extend(_fan(poly, f"{path}:{lineno}"))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return _build(verts, faces, path)


def _build(verts, faces, path):
    v = np.asarray(verts, np.float64).reshape(-1, 3)
    f = np.asarray(faces, np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise ParseError(f"{path}: face index out of range")
    return TriangleMesh(v, f)


def _weld(raw):
    """Merge exactly equal coordinates, keeping first-appearance order."""
    _, first, inv = np.unique(raw, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return raw[np.sort(first)], rank[inv].reshape(-1, 3)


def _is_binary_stl(data):
    if len(data) < 84:
        return not data.lstrip().startswith(b"solid")
    n = struct.unpack_from("<I", data, 80)[0]
    return len(data) == 84 + 50 * n or not data.lstrip().startswith(b"solid")


def read_stl(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    if _is_binary_stl(data):
        if len(data) < 84:
            raise ParseError(f"{path}: binary STL shorter than its header")
        n = struct.unpack_from("<I", data, 80)[0]
        if len(data) < 84 + 50 * n:
            raise ParseError(f"{path}: binary STL truncated at offset {len(data)}")
        rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                                  ("attr", "<u2")]), count=n, offset=84)
        raw = rec["v"].reshape(-1, 3).astype(np.float64)
    else:
        pts = []
        for lineno, line in enumerate(data.decode("ascii", errors="replace").splitlines(), 1):
            parts = line.split()
            if parts and parts[0] == "vertex":
                try:
                    pts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad vertex line") from None
        if len(pts) % 3:
            raise ParseError(f"{path}: vertex count {len(pts)} is not a multiple of 3")
        raw = np.asarray(pts, np.float64).reshape(-1, 3)
    if not len(raw):
        raise EmptyMesh(f"{path}: no facets")
    verts, faces = _weld(raw)
    return _build(verts, faces, path)


def read_mesh(path, fmt=None) -> TriangleMesh:
    fmt = MeshFormat(fmt) if fmt is not None else MeshFormat.from_path(path)
    return read_obj(path) if fmt is MeshFormat.OBJ else read_stl(path)


def write_mesh(mesh: TriangleMesh, path, fmt=None):
    """Write OBJ (exact decimal round trip) or STL (float32 coordinates)."""
    if mesh.n_faces == 0:
        raise EmptyMesh("refusing to write a mesh without faces")
    fmt = MeshFormat(fmt) if fmt is not None else MeshFormat.from_path(path)
    if fmt is MeshFormat.OBJ:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        return
    tri = mesh.vertices[mesh.faces]
    if fmt is MeshFormat.STL_BINARY:
        rec = np.zeros(mesh.n_faces, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)),
                                                     ("attr", "<u2")]))
        rec["n"] = mesh.face_normals
        rec["v"] = tri
        with open(path, "wb") as fh:
            fh.write(b"ldni".ljust(80, b"\0"))
            fh.write(struct.pack("<I", mesh.n_faces))
            fh.write(rec.tobytes())
        return
    out = ["solid ldni"]
    for n, t in zip(mesh.face_normals.tolist(), tri.tolist()):
        out.append("  facet normal {:.9g} {:.9g} {:.9g}".format(*n))
        out.append("    outer loop")
        out += ["      vertex {!r} {!r} {!r}".format(*p) for p in t]
        out.append("    endloop")
        out.append("  endfacet")
    out.append("endsolid ldni")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# LDNI container

MAGIC = b"LDNI"
VERSION = 1
_HEADER = struct.Struct("<4sHBBI3dd")
_MODE_CODE = {NormalMode.ACCURATE: 0, NormalMode.QUANTIZED8: 1}


def _sample_dtype(mode):
    if mode is NormalMode.ACCURATE:
        return np.dtype([("depth", "<f4"), ("normal", "<f4", 3)])
    return np.dtype([("depth", "<f4"), ("normal", "i1", 3)])


def ldni_bytes(solid: LdniSolid) -> bytes:
    g = solid.grid
    parts = [_HEADER.pack(MAGIC, VERSION, _MODE_CODE[solid.normal_mode], 0, g.resolution,
                          *g.origin, g.width)]
    dt = _sample_dtype(solid.normal_mode)
    for img in solid.images:
        parts.append(img.counts.astype("<u4").tobytes())
        rec = np.empty(img.n_samples, dt)
        rec["depth"] = img.depths
        rec["normal"] = img.normals
        parts.append(rec.tobytes())
    return b"".join(parts)


def write_ldni(solid: LdniSolid, path):
    with open(path, "wb") as fh:
        fh.write(ldni_bytes(solid))


def parse_ldni(data: bytes, validate=True, source="<bytes>") -> LdniSolid:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{source}: not an LDNI file")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{source}: header truncated at offset {len(data)}")
    _, version, mode_code, _, w, ox, oy, oz, width = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise VersionUnsupported(f"{source}: version {version}, expected {VERSION}")
    modes = {v: k for k, v in _MODE_CODE.items()}
    if mode_code not in modes:
        raise ParseError(f"{source}: unknown normal mode {mode_code}")
    mode = modes[mode_code]
    grid = GridSpec((ox, oy, oz), width, w)
    dt = _sample_dtype(mode)
    pos = _HEADER.size
    images = []
    for a in Axis:
        need = 4 * w * w
        if pos + need > len(data):
            raise TruncatedFile(f"{source}: column counts of axis {a.name} end past the file")
        counts = np.frombuffer(data, "<u4", w * w, pos).astype(np.int64)
        pos += need
        n = int(counts.sum())
        if pos + n * dt.itemsize > len(data):
            raise TruncatedFile(f"{source}: samples of axis {a.name} end past the file "
                                f"(need {n} samples at offset {pos})")
        rec = np.frombuffer(data, dt, n, pos)
        pos += n * dt.itemsize
        offsets = np.zeros(w * w + 1, np.int64)
        np.cumsum(counts, out=offsets[1:])
        images.append(Ldni(a, grid, offsets, rec["depth"].astype(np.float32),
                           np.ascontiguousarray(rec["normal"], mode.normal_dtype)))
    if pos != len(data):
        raise ParseError(f"{source}: {len(data) - pos} trailing bytes")
    solid = LdniSolid(grid, tuple(images), mode)
    if validate:
        bad = validate_parity(solid)
        if bad:
            a, i, j = bad[0]
            raise ParityViolation(a, i, j, f"{source}: {len(bad)} odd columns, first at "
                                           f"axis {Axis(a).name} pixel ({i}, {j})")
    return solid


def read_ldni(path, validate=True) -> LdniSolid:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_ldni(data, validate, str(path))


# ---------------------------------------------------------------------------
# reports


def format_report(fields: dict) -> str:
    """Line-oriented ``key=value`` text, one field per line, in insertion order."""
    lines = []
    for k, v in fields.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, dict):
            v = ",".join(f"{a}:{b}" for a, b in v.items())
        elif isinstance(v, float):
            v = f"{v:.9g}"
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def report_json(fields: dict) -> str:
    return json.dumps(fields, sort_keys=False, indent=2)
