"""Command-line driver: sample, boolean, offset, contour, measure, info.

Exit codes: 0 success, 1 operation error, 2 usage error.  Failures print a
single ``error=<Code> <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import csg, io
from .contour import contour
from .errors import LdniError
from .mesh import GridSpec, bounding_cube
from .metrics import memory_report, surface_distance
from .sampler import NormalMode, decode_normals, sample_solid


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class JobConfig:
    """User-facing parameters of one CLI job."""

    resolution: int = 128
    padding_fraction: float = 0.05
    normal_mode: NormalMode = NormalMode.ACCURATE
    epsilon: float = csg.DEFAULT_EPSILON
    radius: Optional[float] = None
    inputs: tuple = ()
    output: Optional[str] = None
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.resolution < 2:
            raise UsageError("--res must be at least 2")
        if self.padding_fraction < 0:
            raise UsageError("--padding must be >= 0")
        if self.epsilon < 0:
            raise UsageError("--epsilon must be >= 0")
        if self.threads is not None and self.threads < 1:
            raise UsageError("--threads must be >= 1")


def build_parser():
    p = _Parser(prog="ldni", description="Layered depth-normal image solid modelling")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: LDNI_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample a closed mesh into an LDNI file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--res", type=int, required=True)
    s.add_argument("--normals", choices=["accurate", "quant8"], default="accurate")
    s.add_argument("--padding", type=float, default=0.05)
    s.add_argument("--out", required=True)

    b = sub.add_parser("boolean", help="union / intersect / difference of two solids")
    b.add_argument("--op", choices=["union", "intersect", "difference"], required=True)
    b.add_argument("--a")
    b.add_argument("--b")
    b.add_argument("--mesh-a")
    b.add_argument("--mesh-b")
    b.add_argument("--res", type=int)
    b.add_argument("--normals", choices=["accurate", "quant8"], default="accurate")
    b.add_argument("--padding", type=float, default=0.05)
    b.add_argument("--epsilon", type=float, default=csg.DEFAULT_EPSILON)
    b.add_argument("--out", required=True)

    o = sub.add_parser("offset", help="grow (r > 0) or shrink (r < 0) a solid")
    o.add_argument("--in", dest="input", required=True)
    o.add_argument("--r", type=float, required=True)
    o.add_argument("--epsilon", type=float, default=csg.DEFAULT_EPSILON)
    o.add_argument("--out", required=True)

    c = sub.add_parser("contour", help="convert an LDNI file to a triangle mesh")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--format", choices=[f.value for f in io.MeshFormat], default=None)

    m = sub.add_parser("measure", help="surface distance between two meshes")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--density", type=float, default=1e5, help="samples per unit area")
    m.add_argument("--json", action="store_true")

    i = sub.add_parser("info", help="statistics of an LDNI file")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--json", action="store_true")
    i.add_argument("--dump-points", metavar="PATH",
                   help="write 'x y z nx ny nz' per sample ('-' for stdout)")
    return p


def _mode(name):
    return NormalMode(name)


def _cmd_sample(args, out):
    cfg = JobConfig(resolution=args.res, padding_fraction=args.padding,
                    normal_mode=_mode(args.normals), inputs=(args.input,), output=args.out,
                    threads=args.threads)
    mesh = io.read_mesh(args.input)
    grid = bounding_cube(mesh, cfg.padding_fraction, cfg.resolution)
    solid = sample_solid(mesh, grid, cfg.normal_mode, workers=cfg.threads)
    io.write_ldni(solid, cfg.output)
    st = memory_report(solid).stats
    print(io.format_report({"wrote": cfg.output, "resolution": grid.resolution,
                            "total_samples": st.total_samples}), file=out)


def _shared_grid(mesh_a, mesh_b, padding, res):
    lo = np.minimum(mesh_a.bounds()[0], mesh_b.bounds()[0])
    hi = np.maximum(mesh_a.bounds()[1], mesh_b.bounds()[1])
    width = float((hi - lo).max()) * (1.0 + padding)
    origin = 0.5 * (lo + hi) - 0.5 * width
    return GridSpec(tuple(origin), width, res)


def _cmd_boolean(args, out):
    meshes = args.mesh_a is not None or args.mesh_b is not None
    files = args.a is not None or args.b is not None
    if meshes == files:
        raise UsageError("give either --a/--b (LDNI files) or --mesh-a/--mesh-b with --res")
    if meshes:
        if args.mesh_a is None or args.mesh_b is None or args.res is None:
            raise UsageError("co-sampling needs --mesh-a, --mesh-b and --res")
        cfg = JobConfig(resolution=args.res, padding_fraction=args.padding,
                        normal_mode=_mode(args.normals), epsilon=args.epsilon,
                        threads=args.threads)
        ma, mb = io.read_mesh(args.mesh_a), io.read_mesh(args.mesh_b)
        grid = _shared_grid(ma, mb, cfg.padding_fraction, cfg.resolution)
        a = sample_solid(ma, grid, cfg.normal_mode, workers=cfg.threads)
        b = sample_solid(mb, grid, cfg.normal_mode, workers=cfg.threads)
    else:
        if args.a is None or args.b is None:
            raise UsageError("boolean needs both --a and --b")
        cfg = JobConfig(epsilon=args.epsilon, threads=args.threads)
        a, b = io.read_ldni(args.a), io.read_ldni(args.b)
    res = csg.boolean_solid(a, b, args.op, csg.BooleanConfig(cfg.epsilon), workers=cfg.threads)
    io.write_ldni(res, args.out)
    print(io.format_report({"wrote": args.out, "op": args.op,
                            "total_samples": res.total_samples}), file=out)


def _cmd_offset(args, out):
    cfg = JobConfig(epsilon=args.epsilon, radius=args.r, threads=args.threads)
    solid = io.read_ldni(args.input)
    res = csg.offset_solid(solid, cfg.radius, csg.BooleanConfig(cfg.epsilon), workers=cfg.threads)
    io.write_ldni(res, args.out)
    print(io.format_report({"wrote": args.out, "radius": cfg.radius,
                            "total_samples": res.total_samples}), file=out)


def _cmd_contour(args, out):
    solid = io.read_ldni(args.input)
    mesh = contour(solid, workers=args.threads)
    io.write_mesh(mesh, args.out, args.format)
    print(io.format_report({"wrote": args.out, "vertices": mesh.n_vertices,
                            "faces": mesh.n_faces}), file=out)


def _cmd_measure(args, out):
    a, b = io.read_mesh(args.a), io.read_mesh(args.b)
    rep = surface_distance(a, b, args.density, workers=args.threads)
    print(io.report_json(rep.as_dict()) if args.json else io.format_report(rep.as_dict()),
          file=out)


def _cmd_info(args, out):
    solid = io.read_ldni(args.input)
    rep = memory_report(solid)
    fields = {"resolution": solid.grid.resolution, "width": solid.grid.width,
              "origin": list(solid.grid.origin), "normal_mode": solid.normal_mode.value}
    fields.update(rep.as_dict())
    fields["max_layers_per_axis"] = fields.pop("max_layers")
    fields["max_layers"] = max(rep.stats.max_layers)
    if args.json:
        print(io.report_json(fields), file=out)
    else:
        fields["layer_histogram"] = ";".join(
            ",".join(f"{k}:{v}" for k, v in h.items()) for h in rep.layer_histogram)
        print(io.format_report(fields), file=out)
    if args.dump_points:
        rows = []
        for img in solid.images:
            rows.append(np.hstack([img.sample_points(), decode_normals(img.normals)]))
        pts = np.vstack(rows)
        if args.dump_points == "-":
            np.savetxt(out, pts, fmt="%.9g")
        else:
            np.savetxt(args.dump_points, pts, fmt="%.9g")


_COMMANDS = {"sample": _cmd_sample, "boolean": _cmd_boolean, "offset": _cmd_offset,
             "contour": _cmd_contour, "measure": _cmd_measure, "info": _cmd_info}


def _one_line(msg):
    return " ".join(str(msg).split())


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.threads is None and os.environ.get("LDNI_THREADS"):
            try:
                args.threads = int(os.environ["LDNI_THREADS"])
            except ValueError:
                raise UsageError("LDNI_THREADS must be an integer") from None
        _COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error=Usage {_one_line(exc)}", file=err)
        return 2
    except LdniError as exc:
        print(f"error={exc.code} {_one_line(exc)}", file=err)
        return 1
    except OSError as exc:
        print(f"error=IoError {_one_line(exc)}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
