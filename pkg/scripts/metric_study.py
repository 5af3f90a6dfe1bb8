"""Metric convergence on the benchmark: deviation rate, t -> 0 limit, g1 stability."""
import argparse
import time
import warnings

import numpy as np

from twistorlines.hyperpolygon import benchmark_alpha, benchmark_config, benchmark_punctures
from twistorlines.metrics import FORM_NAMES, RegimeWarning, calibrate_pairing, metric_study
from twistorlines.twistor import TwistorProblem


def run(ts, problem, calibration):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        return metric_study(problem, ts, 2, 1e-4, calibration).report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=7, help="dyadic points starting at 1e-3")
    args = ap.parse_args()
    pr = TwistorProblem(benchmark_config(), benchmark_alpha(), benchmark_punctures())
    cal = calibrate_pairing(pr.alpha)
    base = [1e-3 * 2 ** k for k in range(args.count)]
    fine = [1e-3 * 2 ** (k / 2) for k in range(2 * args.count - 1)]
    t0 = time.perf_counter()
    rb, rf = run(base, pr, cal), run(fine, pr, cal)
    print(f"{'t':>9} {'D(t)':>10}")
    for t, d in zip(base, rb.deviation):
        print(f"{t:9.2e} {d:10.3e}")
    print(f"slope {rb.slope:.4f}, monotone {rb.monotone}, energy slope {rb.energy.slope:.4f}")
    print(f"t->0 mismatch {rb.extrapolation_error:.1e}")
    for f, name in enumerate(FORM_NAMES):
        print(f"g1[{name}] base {np.array2string(rb.expansion.g1[f], precision=6)}")
    gap = np.abs(rb.expansion.g1 - rf.expansion.g1).max()
    print(f"g1 change under sqrt(2) refinement {gap:.1e}, error bars {rb.expansion.error:.1e} / "
          f"{rf.expansion.error:.1e}; {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
