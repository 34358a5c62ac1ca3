"""Sample counts and storage against resolution for the fixture meshes."""
import argparse
import time

from ldni import shapes
from ldni.mesh import GridSpec
from ldni.metrics import memory_report
from ldni.sampler import NormalMode, sample_solid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--mode", choices=[m.value for m in NormalMode], default="quant8")
    args = ap.parse_args()

    fixtures = {"icosphere": shapes.icosphere(), "torus": shapes.torus(),
                "rotated_cube": shapes.rotated_cube()}
    print(f"{'shape':>13} {'w':>5} {'samples':>9} {'growth':>7} {'bytes':>10} {'layers':>10} {'secs':>6}")
    for name, mesh in fixtures.items():
        prev = None
        for w in args.res:
            t0 = time.perf_counter()
            solid = sample_solid(mesh, GridSpec((0.0, 0.0, 0.0), 1.0, w), NormalMode(args.mode))
            secs = time.perf_counter() - t0
            rep = memory_report(solid)
            n = rep.stats.total_samples
            growth = f"{n / prev:7.3f}" if prev else "      -"
            print(f"{name:>13} {w:5d} {n:9d} {growth} {rep.bytes_estimate:10d} "
                  f"{str(rep.stats.max_layers):>10} {secs:6.2f}")
            prev = n


if __name__ == "__main__":
    main()
