"""Contouring error of a sphere against resolution.

Samples a sphere (analytically, or from an icosphere mesh with --mesh), contours it
at each resolution and prints E_max / E_mean in absolute units and in cells.
"""
import argparse
import time

from ldni import shapes
from ldni.contour import contour
from ldni.mesh import GridSpec, audit_mesh
from ldni.metrics import sphere_distance
from ldni.sampler import sample_solid, sample_sphere

CENTER = (0.5, 0.5, 0.5)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--radius", type=float, default=0.3)
    ap.add_argument("--mesh", action="store_true", help="sample a 2562-vertex icosphere")
    ap.add_argument("--density", type=float, default=1e5)
    args = ap.parse_args()

    print(f"{'w':>5} {'faces':>8} {'E_max':>10} {'E_mean':>10} {'E_max/d':>8} {'E_mean/d':>9} "
          f"{'ratio':>6} {'secs':>6}")
    prev = None
    for w in args.res:
        g = GridSpec((0.0, 0.0, 0.0), 1.0, w)
        t0 = time.perf_counter()
        if args.mesh:
            solid = sample_solid(shapes.icosphere(CENTER, args.radius, 4), g)
        else:
            solid = sample_sphere(CENTER, args.radius, g)
        mesh = contour(solid)
        secs = time.perf_counter() - t0
        assert audit_mesh(mesh).is_watertight
        rep = sphere_distance(mesh, CENTER, args.radius, args.density)
        ratio = f"{prev / rep.e_mean:6.2f}" if prev else "     -"
        print(f"{w:5d} {mesh.n_faces:8d} {rep.e_max:10.3e} {rep.e_mean:10.3e} {rep.e_max * w:8.3f} "
              f"{rep.e_mean * w:9.4f} {ratio} {secs:6.2f}")
        prev = rep.e_mean


if __name__ == "__main__":
    main()
