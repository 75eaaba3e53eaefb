"""How fast the kernel-freezing variance gap approaches its zeta asymptote.

Prints gap(n), the predicted -zeta(2-2a) T^(2a-1) / (Gamma(a)^2 n^(2a-1)),
and their ratio, which should drift to 1 as n grows.

Run from the repo root:  python3 scripts/freeze_gap_asymptote.py
"""

from roughvol import TimeGrid, kernel_freeze_gap, zeta_alternating


def main() -> None:
    T = 1.0
    for alpha in (0.6, 0.75, 0.9):
        z = zeta_alternating(2.0 * (1.0 - alpha))
        print(f"alpha = {alpha}:  zeta({2 * (1 - alpha):.2f}) = {z:.12f}")
        print(f"{'n':>6} {'gap':>14} {'asymptote':>14} {'ratio':>9}")
        for n in (16, 64, 256, 1024, 4096):
            gap, asym = kernel_freeze_gap(TimeGrid(n, T), alpha)
            print(f"{n:6d} {gap:14.6e} {asym:14.6e} {gap / asym:9.5f}")
        print()


if __name__ == "__main__":
    main()
