"""Weak-error rate table: fitted slopes for mean, covariance and the cubic
payoff across a set of roughness exponents, against the predicted v_n rate.

Run from the repo root:  python3 scripts/weak_rate_table.py [--fast]
"""

import argparse

from roughvol import ModelParams, fit_loglog, fit_rate, weak_error_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="smaller grids (seconds, not minutes)")
    args = ap.parse_args()

    n_list = (32, 64, 128, 256) if args.fast else (64, 128, 256, 512, 1024)
    p = ModelParams(x0=0.2, kappa1=0.3, kappa2=-1.0, sigma=1.0, rho=0.7, alpha=0.75, T=1.0)

    print(f"grids n = {n_list}")
    print(f"{'alpha':>7} {'quantity':>9} {'slope':>8} {'target':>12} {'r^2':>8}  verdict")
    for alpha in (0.6, 2.0 / 3.0, 0.8):
        for quantity in ("mean_X", "var_X", "cubic_L"):
            curve = weak_error_curve(quantity, alpha, p, n_list)
            if quantity == "mean_X":
                # the scheme mean converges at rate 1 for every alpha
                slope, _, r_squared = fit_loglog(curve.n_values, curve.errors)
                target, passed = "n^-1", abs(slope - 1.0) <= 0.15
            else:
                fit = fit_rate(curve, alpha)
                slope, r_squared = fit.slope, fit.r_squared
                target, passed = fit.theoretical, fit.passed
            verdict = "ok" if passed else "OUT OF BAND"
            print(
                f"{alpha:7.4f} {quantity:>9} {slope:8.4f} {target:>12}"
                f" {r_squared:8.5f}  {verdict}"
            )


if __name__ == "__main__":
    main()
