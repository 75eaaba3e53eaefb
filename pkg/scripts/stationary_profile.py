"""Relaxation of the factor law toward its stationary regime (kappa2 < 0).

Writes mean(t) and var(t) on a log-spaced time ladder together with the
limiting values -kappa1/kappa2 and the stationary variance integral, as a
CSV ready for plotting.

Run from the repo root:  python3 scripts/stationary_profile.py [--out FILE]
"""

import argparse

import numpy as np

from roughvol import ModelParams, cov_exact, mean_exact, stationary_variance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="stationary_profile.csv")
    args = ap.parse_args()

    p = ModelParams(x0=0.2, kappa1=0.5, kappa2=-1.0, sigma=1.0, rho=0.0, alpha=0.75, T=1.0)
    mean_limit = -p.kappa1 / p.kappa2
    var_limit = stationary_variance(p)

    times = np.geomspace(0.05, 40.0, 25)
    lines = ["t,mean,var,mean_limit,var_limit"]
    for t in times:
        m, v = mean_exact(p, float(t)), cov_exact(p, float(t), float(t))
        lines.append(f"{t!r},{m!r},{v!r},{mean_limit!r},{var_limit!r}")
        print(f"t = {t:8.3f}   mean {m:+.6f} (-> {mean_limit:+.4f})   var {v:.6f} (-> {var_limit:.6f})")

    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
