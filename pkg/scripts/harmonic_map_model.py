"""Sym-Bobenko harmonic map near a puncture, for the model loop and the benchmark."""
import argparse

import numpy as np

from twistorlines.hyperpolygon import benchmark_alpha, benchmark_config, benchmark_punctures
from twistorlines.loops import CircleGrid
from twistorlines.twistor import TwistorProblem, continuation, harmonic_map, model_harmonic_map


def show(label, rep):
    print(label)
    for z, d, fd in zip(rep.z, rep.distance, rep.f_distance):
        print(f"  z = {z:.3f}: distance to model {d:.3e}, distance of f to Id {fd:.3e}")
    print(f"  hermitian {rep.hermitian_defect:.1e}, det {rep.det_defect:.1e}, failures {len(rep.failures)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--beta", type=complex, default=0.3)
    ap.add_argument("--t", type=float, default=0.064)
    args = ap.parse_args()
    radii = [0.4, 0.2, 0.1, 0.05, 0.025]
    show(f"model alpha={args.alpha} beta={args.beta}", model_harmonic_map(args.alpha, args.beta, radii))
    pr = TwistorProblem(benchmark_config(), benchmark_alpha(), benchmark_punctures())
    ts = [t for t in (1e-3 * 2 ** k for k in range(12)) if t <= args.t]
    st = continuation(pr, ts).states[-1]
    for j in range(len(pr.alpha)):
        show(f"benchmark t={st.t:.3g} puncture {j + 1}", harmonic_map(pr, st, j, [0.2, 0.1, 0.05], CircleGrid(32)))


if __name__ == "__main__":
    main()
