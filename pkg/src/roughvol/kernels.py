"""Time grids, fractional-kernel cell weights, and kernel cross integrals.

Everything here is about the power kernel K(u) = u^(alpha-1)/Gamma(alpha)
on a uniform grid t_k = k*T/n:

* ``c_weight(i, k)``  = integral of K(t_k - u) over the cell [t_i, t_{i+1}]
                      = dt^alpha * ((k-i)^alpha - (k-i-1)^alpha) / Gamma(alpha+1)
* ``cross_kernel_integral(a, b, c)`` = int_0^c (a-s)^(alpha-1) (b-s)^(alpha-1) ds,
  closed form via 2F1 when c = min(a, b), Gauss-Legendre panels otherwise
* ``beta_convolution`` = int_s^t (u-s)^(alpha-1)/Gamma(alpha) *
  (t-u)^(beta-1)/Gamma(beta) du = (t-s)^(alpha+beta-1)/Gamma(alpha+beta)

plus the quadrature helpers (Gauss-Jacobi / Gauss-Legendre rules, graded
panel splits) shared by the law/moment modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import ValidationError
from .specfun import gamma, hyp2f1, hyp2f1_b1

__all__ = [
    "TimeGrid",
    "c_weight",
    "c_matrix",
    "cross_kernel_integral",
    "cross_kernel_table",
    "beta_convolution",
    "jacobi_rule",
    "legendre_rule",
    "graded_panels",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_n = T with t_k = k*T/n."""

    n: int
    T: float
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValidationError(f"TimeGrid.n must be a positive integer, got {self.n}")
        if not self.T > 0.0:
            raise ValidationError(f"TimeGrid.T must be > 0, got {self.T}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(
            self, "times", np.linspace(0.0, self.T, self.n + 1)
        )

    @property
    def dt(self) -> float:
        return self.T / self.n

    def eta(self, s):
        """Left grid point of the cell containing s: eta(s) = t_k on [t_k, t_{k+1})."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0.0) or np.any(s_arr > self.T):
            raise ValidationError("eta: argument outside [0, T]")
        idx = np.minimum(np.floor(s_arr / self.dt), self.n - 1).astype(int)
        out = idx * self.dt
        return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.5 < alpha <= 1.0):
        raise ValidationError(f"alpha must be in (1/2, 1], got {alpha}")
    return alpha


def c_weight(i: int, k: int, grid: TimeGrid, alpha: float) -> float:
    """Exact kernel mass of cell [t_i, t_{i+1}] seen from t_k (requires i < k).

    c_{i,k} = int_{t_i}^{t_{i+1}} (t_k-u)^(alpha-1)/Gamma(alpha) du
            = dt^alpha ((k-i)^alpha - (k-i-1)^alpha) / Gamma(alpha+1)
    """
    alpha = _check_alpha(alpha)
    if not (0 <= i < k <= grid.n):
        raise ValidationError(f"c_weight: need 0 <= i < k <= n, got i={i}, k={k}")
    j = k - i
    return grid.dt**alpha * (j**alpha - (j - 1) ** alpha) / gamma(alpha + 1.0)


def c_weight_diffs(grid: TimeGrid, alpha: float) -> np.ndarray:
    """Vector d with d[j] = c_{k-j,k} (depends on the gap j only), j = 1..n.

    d[0] is a padding zero so that c_{i,k} = d[k-i].
    """
    alpha = _check_alpha(alpha)
    j = np.arange(grid.n + 1, dtype=float)
    powers = j**alpha
    d = np.zeros(grid.n + 1)
    d[1:] = grid.dt**alpha * np.diff(powers) / gamma(alpha + 1.0)
    return d


def c_matrix(grid: TimeGrid, alpha: float) -> np.ndarray:
    """Full (n+1)x(n+1) array with C[i, k] = c_{i,k} for i < k, zero elsewhere."""
    d = c_weight_diffs(grid, alpha)
    n = grid.n
    ii, kk = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    gap = kk - ii
    C = np.where(gap > 0, d[np.clip(gap, 0, n)], 0.0)
    return C


def cross_kernel_integral(a: float, b: float, c: float, alpha: float) -> float:
    """int_0^c (a-s)^(alpha-1) (b-s)^(alpha-1) ds for 0 < c <= min(a, b).

    Closed form when c = min(a,b):
        m^alpha M^(alpha-1)/alpha * 2F1(1-alpha, 1; alpha+1; m/M),
    with m = min(a,b), M = max(a,b) (and m^(2alpha-1)/(2alpha-1) when a = b).
    For c < min(a,b) the integrand is smooth on [0, c] and graded
    Gauss-Legendre panels (refined toward c, where the singularity at
    s = min(a,b) is nearest) are used.
    """
    alpha = _check_alpha(alpha)
    a = float(a)
    b = float(b)
    c = float(c)
    m, M = (a, b) if a <= b else (b, a)
    if not (0.0 < c <= m):
        raise ValidationError(
            f"cross_kernel_integral: need 0 < c <= min(a,b), got a={a}, b={b}, c={c}"
        )
    if c == m:
        if m == M:
            return m ** (2.0 * alpha - 1.0) / (2.0 * alpha - 1.0)
        z = m / M
        return m**alpha * M ** (alpha - 1.0) / alpha * hyp2f1(1.0 - alpha, 1.0, alpha + 1.0, z)
    # fallback: smooth integrand; panels graded toward the near-singular end
    breaks = graded_panels(0.0, c, n_levels=10, toward="hi")
    x, w = roots_legendre(48)
    total = 0.0
    for lo, hi in breaks:
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        s = mid + half * x
        total += half * float(
            np.sum(w * (a - s) ** (alpha - 1.0) * (b - s) ** (alpha - 1.0))
        )
    return total


def cross_kernel_table(grid: TimeGrid, alpha: float) -> np.ndarray:
    """Symmetric table K[i, j] = int_0^min(t_i,t_j) (t_i-s)^(a-1)(t_j-s)^(a-1) ds.

    Indices 1..n are meaningful; row/column 0 is zero.  Built in one
    vectorised sweep: K = dt^(2a-1) * m^a M^(a-1)/a * 2F1(1-a,1;a+1; m/M)
    in index units with m = min(i,j), M = max(i,j).
    """
    alpha = _check_alpha(alpha)
    n = grid.n
    idx = np.arange(n + 1, dtype=float)
    ii = idx[:, None]
    jj = idx[None, :]
    m = np.minimum(ii, jj)
    M = np.maximum(ii, jj)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(M > 0, m / np.where(M > 0, M, 1.0), 0.0)
    F = hyp2f1_b1(1.0 - alpha, alpha + 1.0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = m**alpha * M ** (alpha - 1.0) / alpha * F
    K[0, :] = 0.0
    K[:, 0] = 0.0
    return grid.dt ** (2.0 * alpha - 1.0) * K


def beta_convolution(s: float, t: float, alpha: float, beta: float) -> float:
    """Normalised power-kernel convolution over [s, t]:

    int_s^t (u-s)^(alpha-1)/Gamma(alpha) * (t-u)^(beta-1)/Gamma(beta) du
        = (t-s)^(alpha+beta-1) / Gamma(alpha+beta).
    """
    if not (t > s):
        raise ValidationError(f"beta_convolution: need t > s, got s={s}, t={t}")
    if not (alpha > 0.0 and beta > 0.0):
        raise ValidationError("beta_convolution: exponents must be positive")
    return (t - s) ** (alpha + beta - 1.0) / gamma(alpha + beta)


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------


def jacobi_rule(npts: int, exp_hi: float, exp_lo: float, lo: float, hi: float):
    """Nodes/weights so that sum w_i f(x_i) ~= int_lo^hi (hi-x)^exp_hi (x-lo)^exp_lo f(x) dx.

    Exponents must be > -1.  Built from scipy's Jacobi rule on [-1, 1].
    """
    if min(exp_hi, exp_lo) <= -1.0:
        raise ValidationError("jacobi_rule: exponents must be > -1")
    x, w = roots_jacobi(npts, exp_hi, exp_lo)
    half = 0.5 * (hi - lo)
    nodes = lo + half * (x + 1.0)
    weights = w * half ** (exp_hi + exp_lo + 1.0)
    return nodes, weights


def legendre_rule(npts: int, lo: float, hi: float):
    """Plain Gauss-Legendre nodes/weights on [lo, hi]."""
    x, w = roots_legendre(npts)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def graded_panels(lo: float, hi: float, n_levels: int = 30, toward: str = "hi"):
    """Geometric panel split of [lo, hi] refined toward one or both ends.

    Used to resolve algebraic endpoint behaviour with fixed Gauss rules:
    panel widths halve toward the marked end, so a u^gamma endpoint factor
    is analytic-on-panel with uniformly bounded transformed derivatives and
    the compound rule converges to near machine precision.
    """
    if hi <= lo:
        raise ValidationError("graded_panels: need hi > lo")
    length = hi - lo
    if toward == "both":
        midl = lo + 0.5 * length
        left = graded_panels(lo, midl, n_levels, toward="lo")
        right = graded_panels(midl, hi, n_levels, toward="hi")
        return left + right
    fracs = [0.0] + [2.0 ** (k - n_levels) for k in range(1, n_levels + 1)]
    panels = []
    if toward == "lo":
        pts = [lo + f * length for f in fracs]
        pts[-1] = hi
        panels = [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
    elif toward == "hi":
        pts = [hi - f * length for f in fracs]
        pts[-1] = lo
        panels = [(pts[i + 1], pts[i]) for i in range(len(pts) - 1)][::-1]
    else:
        raise ValidationError("graded_panels: toward must be 'lo', 'hi', or 'both'")
    return panels
