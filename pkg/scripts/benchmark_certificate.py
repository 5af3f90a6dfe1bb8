"""Solve the benchmark family on a dyadic t-grid and print its certificate."""
import argparse
import time

import numpy as np

from twistorlines.hyperpolygon import benchmark_alpha, benchmark_config, benchmark_punctures
from twistorlines.twistor import SolverSettings, TwistorProblem, continuation, verify_twistor


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-min", type=float, default=1e-3)
    ap.add_argument("--t-max", type=float, default=1e-1)
    ap.add_argument("--N", type=int, default=SolverSettings.N)
    args = ap.parse_args()
    ts = [args.t_min * 2 ** k for k in range(64) if args.t_min * 2 ** k <= args.t_max]
    pr = TwistorProblem(benchmark_config(), benchmark_alpha(), benchmark_punctures(), SolverSettings(N=args.N))
    t0 = time.perf_counter()
    run = continuation(pr, ts)
    cert = verify_twistor(run)
    print(f"{'t':>9} {'iter':>4} {'|sum P|':>9} {'unitarity':>9} {'det':>9} {'|B herm|':>9}")
    for k, st in enumerate(run.states):
        print(f"{st.t:9.2e} {st.iterations:4d} {cert.sum_P[k]:9.1e} {cert.unitarity[k].max():9.1e} "
              f"{cert.det_residual[k]:9.1e} {cert.B_hermitian[k].max():9.1e}")
    print(f"B_j(0) + 2 pi i A_j: {np.array2string(cert.B0_error, precision=2)}")
    print(f"failed at: {run.failed_at}; {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
