"""Closed-form exponential example against the Toeplitz Iwasawa factorization.

Prints the coefficient error on an (alpha, r, x) grid and locates the
breakdown of the tilde variant.
"""
import argparse

import numpy as np

from twistorlines.loops import (BigCellError, exponential_example, exponential_example_breakdown, iwasawa)


def coefficient_error(alpha, r, x):
    ex = exponential_example(alpha, r, x)
    f = iwasawa(ex.Psi)
    return max(max(np.abs(f.p.coeff(k) - ex.B.coeff(k)).max(), np.abs(f.u.coeff(k) - ex.F.coeff(k)).max())
               for k in range(-4, 5))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alpha", type=float, nargs="+", default=[0.1, 0.3])
    ap.add_argument("--r", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    args = ap.parse_args()
    xs = np.round(np.arange(0.1, 1.0, 0.1), 1)
    print(f"{'alpha':>6} {'r':>5} {'max error':>10} {'tilde x_r':>10}  tilde status (x = 0.1 .. 0.9)")
    for alpha in args.alpha:
        for r in args.r:
            err = max(coefficient_error(alpha, r, x) for x in xs)
            xt = exponential_example_breakdown(alpha, r, tilde=True)
            status = []
            for x in xs:
                try:
                    exponential_example(alpha, r, x, tilde=True)
                    status.append("ok")
                except BigCellError:
                    status.append("--")
            print(f"{alpha:6.2f} {r:5.2f} {err:10.1e} {xt:10.4f}  {' '.join(status)}")


if __name__ == "__main__":
    main()
