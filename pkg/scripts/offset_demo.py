"""Grow and shrink a sphere by a range of radii and compare with exact spheres."""
import argparse
import time

from ldni.contour import contour
from ldni.csg import offset_solid
from ldni.errors import OffsetOverflow
from ldni.mesh import GridSpec, audit_mesh
from ldni.metrics import radial_deviation
from ldni.sampler import sample_sphere, validate_parity

CENTER = (0.5, 0.5, 0.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--radius", type=float, default=0.3)
    ap.add_argument("--offsets", type=float, nargs="+",
                    default=[-0.1, -0.05, -0.01, 0.01, 0.05, 0.1, 0.25])
    args = ap.parse_args()

    g = GridSpec((0.0, 0.0, 0.0), 1.0, args.res)
    d = g.pixel_width
    h = sample_sphere(CENTER, args.radius, g)
    print(f"{'r':>7} {'r/d':>7} {'samples':>9} {'dev/d':>7} {'watertight':>10} {'secs':>6}")
    for r in args.offsets:
        t0 = time.perf_counter()
        try:
            o = offset_solid(h, r)
        except OffsetOverflow as exc:
            print(f"{r:7.3f} {r / d:7.2f}  {exc.code}")
            continue
        assert validate_parity(o) == []
        mesh = contour(o)
        dev = radial_deviation(mesh, CENTER, args.radius + r) / d
        print(f"{r:7.3f} {r / d:7.2f} {o.total_samples:9d} {dev:7.3f} "
              f"{str(audit_mesh(mesh).is_watertight):>10} {time.perf_counter() - t0:6.2f}")


if __name__ == "__main__":
    main()
