"""Co-sample a rotated cube and a sphere, apply all three booleans, contour each."""
import argparse
from pathlib import Path

from ldni import shapes
from ldni.contour import contour_report
from ldni.csg import BooleanOp, boolean_solid
from ldni.io import write_mesh
from ldni.mesh import GridSpec, audit_mesh
from ldni.sampler import sample_solid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, default=128)
    ap.add_argument("--out", type=Path, help="directory for OBJ output")
    args = ap.parse_args()

    g = GridSpec((0.0, 0.0, 0.0), 1.0, args.res)
    a = sample_solid(shapes.rotated_cube(size=0.45), g)
    b = sample_solid(shapes.icosphere((0.62, 0.6, 0.58), 0.28), g)
    for op in BooleanOp:
        solid = boolean_solid(a, b, op)
        rep = contour_report(solid)
        audit = audit_mesh(rep.mesh)
        print(f"{op.name.lower():>12}: samples={solid.total_samples} faces={rep.mesh.n_faces} "
              f"chi={audit.euler_characteristic} watertight={audit.is_watertight} "
              f"volume={rep.mesh.signed_volume():.5f}")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            write_mesh(rep.mesh, args.out / f"{op.name.lower()}.obj")
    # (A & B) - A is exactly empty on a shared grid
    left = boolean_solid(boolean_solid(a, b, BooleanOp.INTERSECTION), a, BooleanOp.DIFFERENCE)
    print(f"(A & B) - A samples: {left.total_samples}")


if __name__ == "__main__":
    main()
