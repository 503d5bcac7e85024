"""Noise scale at which the contraction condition holds, for a fixed ratio tau / sigma.

The condition quantity depends on the noise only through the ratio, so the
threshold scale is ``sigma* = w_n / r``.  The script prints the threshold,
checks one point on each side, and confirms that two extreme starting
functions reach the same fixed point above it.
"""

import argparse

from gglab import GameParams, GridFunction, IntegrationScheme, banach_params, check_conditions
from gglab import compute_coefficients, solve
from gglab.grid import default_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ratio", type=float, default=3.0)
    ap.add_argument("--n", type=int, nargs="+", default=[2, 3])
    args = ap.parse_args()

    for n in args.n:
        r = args.ratio
        w = compute_coefficients(GameParams(n, 1.0, r * r)).w_n
        star = w / r
        print(f"n={n} r={r}: w_n = {w:.4f}, threshold sigma* = {star:.4f}")
        for f in (0.99, 1.01):
            s = f * star
            ok = check_conditions(GameParams(n, s * s, (r * s) ** 2)).banach_ok
            print(f"  sigma = {f:.2f} sigma*: banach_ok = {ok}")
        params = banach_params(n, r)
        coeffs = compute_coefficients(params)
        points = None if n == 2 else 17
        spec = default_grid(coeffs, points=points)
        scheme = IntegrationScheme.gauss_hermite(32 if n == 2 else 12)
        finals = []
        for start in (1.0, float(n)):
            tf, diag = solve(params, scheme, g0=GridFunction.constant(spec, start, coeffs), tol=1e-8)
            finals.append(tf.g)
            print(f"  start {start:g}: {diag.iterations} iterations, deltas "
                  + ", ".join(f"{d:.1e}" for d in diag.sup_deltas))
        print(f"  factor {check_conditions(params).contraction_factor:.3f}; "
              f"gap between fixed points {finals[0].sup_distance(finals[1]):.1e}")


if __name__ == "__main__":
    main()
