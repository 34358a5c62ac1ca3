"""Accurate vs 8-bit quantized normals: storage and contouring error."""
import argparse

from ldni import shapes
from ldni.contour import contour
from ldni.mesh import GridSpec
from ldni.metrics import memory_report, surface_distance
from ldni.sampler import NormalMode, sample_solid

FIXTURES = {
    "rotated_cube": shapes.rotated_cube,
    "icosphere": shapes.icosphere,
    "torus": shapes.torus,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--res", type=int, nargs="+", default=[64, 128])
    ap.add_argument("--shape", choices=sorted(FIXTURES), default="rotated_cube")
    ap.add_argument("--density", type=float, default=2e4)
    args = ap.parse_args()

    truth = FIXTURES[args.shape]()
    print(f"{'w':>5} {'mode':>11} {'bytes':>10} {'E_max':>10} {'E_mean':>10}")
    for w in args.res:
        g = GridSpec((0.0, 0.0, 0.0), 1.0, w)
        sizes = {}
        for mode in NormalMode:
            solid = sample_solid(truth, g, mode)
            sizes[mode] = memory_report(solid).bytes_estimate
            rep = surface_distance(contour(solid), truth, args.density)
            print(f"{w:5d} {mode.value:>11} {sizes[mode]:10d} {rep.e_max:10.3e} {rep.e_mean:10.3e}")
        ratio = sizes[NormalMode.QUANTIZED8] / sizes[NormalMode.ACCURATE]
        print(f"{'':5} {'q8/acc':>11} {ratio:10.3f}")


if __name__ == "__main__":
    main()
