"""Exact Gaussian law of the mean-reverting fractional-kernel process.

The state process solves the linear Volterra equation

    X_t = x0 + int_0^t (t-s)^(a-1)/Gamma(a) * (k1 + k2 X_s) ds
             + sigma int_0^t (t-s)^(a-1)/Gamma(a) dW_s,        a in (1/2, 1],

and is Gaussian with everything in closed (series) form:

* mean      m(t)   = x0 E_a(k2 t^a) + (k1/k2)(E_a(k2 t^a) - 1)
* kernel    D_s X_t = sigma (t-s)^(a-1) E_{a,a}(k2 (t-s)^a)     (s < t)
* cov       C(t,T) = sigma^2 sum_{i1,i2>=1} k2^(i1+i2-2)
                     t^(i1 a) T^(i2 a - 1) / (Gamma(i1 a + 1) Gamma(i2 a))
                     * 2F1(1 - i2 a, 1; i1 a + 1; t/T),   t <= T,
* stationary variance (k2 < 0)
            sigma^2 int_0^inf s^(2a-2) E_{a,a}(k2 s^a)^2 ds.

This module also carries the joint law of the Euler driver -- Brownian cell
increments together with the exactly-integrated kernel Gaussians
G_k = int_0^{t_k} (t_k-s)^(a-1)/Gamma(a) dW_s -- and reproducible
block-substream sampling for any of these laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import ConvergenceError, ValidationError
from .kernels import (
    TimeGrid,
    c_matrix,
    cross_kernel_table,
    jacobi_rule,
    legendre_rule,
)
from .specfun import (
    ML_MAX_ABS_Z,
    SeriesControl,
    _hyp2f1_mp,
    _mittag_leffler_asymptotic,
    gamma,
    hyp2f1_b1,
    mittag_leffler,
)

__all__ = [
    "ModelParams",
    "GaussianLaw",
    "mean_exact",
    "cov_exact",
    "malliavin_exact",
    "stationary_variance",
    "grid_law_exact",
    "driver_law",
    "sample",
]

_EPS = 2.220446049250313e-16
_KAPPA2_ZERO = 1e-12  # |kappa2| below this is treated as exactly zero

# grid_law_exact builds n(n+1)/2 covariance entries, each a double series;
# past this n the cost is better served by SchemeLaw-style tables.
_GRID_LAW_MAX_N = 1024


@dataclass(frozen=True)
class ModelParams:
    """Model parameters; alpha in (1/2, 1], sigma > 0, rho in [-1, 1]."""

    x0: float
    kappa1: float
    kappa2: float
    sigma: float
    rho: float
    alpha: float
    T: float
    L0: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x0", "kappa1", "kappa2", "sigma", "rho", "alpha", "T", "L0"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (0.5 < self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in (1/2, 1], got {self.alpha}")
        if not self.sigma > 0.0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        if not (-1.0 <= self.rho <= 1.0):
            raise ValidationError(f"rho must be in [-1, 1], got {self.rho}")
        if not self.T > 0.0:
            raise ValidationError(f"T must be > 0, got {self.T}")
        for name in ("x0", "kappa1", "kappa2"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def kappa2_is_zero(self) -> bool:
        return abs(self.kappa2) < _KAPPA2_ZERO


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """A finite-dimensional Gaussian law with labelled coordinates."""

    labels: tuple
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        d = len(self.labels)
        if mean.shape != (d,) or cov.shape != (d, d):
            raise ValidationError(
                f"GaussianLaw: labels/mean/cov shapes disagree "
                f"({d}, {mean.shape}, {cov.shape})"
            )
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ValidationError("GaussianLaw: covariance not symmetric")
        scale = max(float(np.abs(np.diag(cov)).max()), 1e-300)
        min_eig = float(np.linalg.eigvalsh(cov).min())
        if min_eig < -1e-8 * scale:
            raise ValidationError(
                f"GaussianLaw: covariance has negative eigenvalue {min_eig:.3e}"
            )

    @property
    def dim(self) -> int:
        return len(self.labels)


def _check_ml_scale(params: ModelParams, t: float) -> None:
    if abs(params.kappa2) * t**params.alpha > ML_MAX_ABS_Z:
        raise ValidationError(
            f"|kappa2| * t^alpha = {abs(params.kappa2) * t ** params.alpha:.3g} exceeds "
            f"the Mittag-Leffler working range {ML_MAX_ABS_Z}"
        )


def mean_exact(params: ModelParams, t: float, ctl: SeriesControl | None = None) -> float:
    """E[X_t]; reduces to x0 + kappa1 t^alpha / Gamma(alpha+1) when kappa2 = 0."""
    t = float(t)
    if t < 0.0:
        raise ValidationError(f"mean_exact: t must be >= 0, got {t}")
    if t == 0.0:
        return params.x0
    a = params.alpha
    if params.kappa2_is_zero:
        return params.x0 + params.kappa1 * t**a / gamma(a + 1.0)
    _check_ml_scale(params, t)
    E = mittag_leffler(a, 1.0, params.kappa2 * t**a, ctl)
    return params.x0 * E + (params.kappa1 / params.kappa2) * (E - 1.0)


def malliavin_exact(params: ModelParams, s: float, t: float) -> float:
    """D_s X_t = sigma (t-s)^(alpha-1) E_{alpha,alpha}(kappa2 (t-s)^alpha), s < t."""
    if not (0.0 <= s < t):
        raise ValidationError(f"malliavin_exact: need 0 <= s < t, got s={s}, t={t}")
    u = t - s
    a = params.alpha
    _check_ml_scale(params, u)
    return params.sigma * u ** (a - 1.0) * mittag_leffler(a, a, params.kappa2 * u**a)


def _ml_entire_array(alpha: float, beta: float, v: np.ndarray) -> np.ndarray:
    """E_{alpha,beta}(v) over an array, exploiting that it is entire in v.

    Horner over ~48 reciprocal-Gamma coefficients when |v| <= 5 (no
    cancellation there); larger arguments fall back to the guarded scalar
    evaluator elementwise.
    """
    v = np.asarray(v, dtype=float)
    vmax = float(np.abs(v).max()) if v.size else 0.0
    if vmax <= 5.0:
        ncoef = 48
        coef = [1.0 / gamma(alpha * i + beta) for i in range(ncoef)]
        E = np.zeros_like(v)
        for ci in coef[::-1]:
            E = E * v + ci
        return E
    return np.array(
        [mittag_leffler(alpha, beta, float(vi)) for vi in v.ravel()]
    ).reshape(v.shape)


def _malliavin_kernel_array(params: ModelParams, u: np.ndarray) -> np.ndarray:
    """Vectorised sigma*u^(a-1)*E_{a,a}(k2 u^a) for u > 0 arrays."""
    a = params.alpha
    u = np.asarray(u, dtype=float)
    return params.sigma * u ** (a - 1.0) * _ml_entire_array(a, a, params.kappa2 * u**a)


def _mean_many(params: ModelParams, t: np.ndarray) -> np.ndarray:
    """Vectorised mean_exact over a t >= 0 array."""
    a = params.alpha
    t = np.asarray(t, dtype=float)
    if params.kappa2_is_zero:
        return params.x0 + params.kappa1 * t**a / gamma(a + 1.0)
    E = _ml_entire_array(a, 1.0, params.kappa2 * t**a)
    return params.x0 * E + (params.kappa1 / params.kappa2) * (E - 1.0)


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------


def _cov_pairs(params, t_small, t_big, rel_tol=1e-12, max_diag=400):
    """Vectorised covariance series over pair arrays with t_small <= t_big.

    Returns the array of Cov(X_t, X_T) values.  Pairs whose float64
    summation turned out cancellation-limited are redone in mpmath.
    """
    a = params.alpha
    k2 = params.kappa2
    t_small = np.asarray(t_small, dtype=float)
    t_big = np.asarray(t_big, dtype=float)
    total = np.zeros_like(t_small)
    live = t_small > 0.0
    if not np.any(live):
        return total
    ts = t_small[live]
    tb = t_big[live]
    z = ts / tb
    ln_ts = np.log(ts)
    ln_tb = np.log(tb)
    acc = np.zeros_like(ts)
    peak = np.zeros_like(ts)
    if params.kappa2_is_zero:
        F = hyp2f1_b1(1.0 - a, a + 1.0, z)
        acc = ts**a * tb ** (a - 1.0) / (gamma(a + 1.0) * gamma(a)) * F
        total[live] = params.sigma**2 * acc
        return total
    quiet = 0
    nterms = 0
    for d in range(2, max_diag + 1):
        diag = np.zeros_like(ts)
        for i1 in range(1, d):
            i2 = d - i1
            lg = (
                (d - 2) * math.log(abs(k2))
                - math.lgamma(i1 * a + 1.0)
                - math.lgamma(i2 * a)
            )
            # fully log-space magnitudes: t^(i1 a) alone overflows long
            # before the Gamma denominators bring the term back down
            logmag = lg + i1 * a * ln_ts + (i2 * a - 1.0) * ln_tb
            if float(logmag.max()) < -760.0:
                continue
            F = hyp2f1_b1(1.0 - i2 * a, i1 * a + 1.0, z)
            sign = 1.0 if k2 > 0 or (d - 2) % 2 == 0 else -1.0
            term = sign * np.exp(np.maximum(logmag, -745.0)) * F
            term[logmag < -745.0] = 0.0
            diag += term
            np.maximum(peak, np.abs(term), out=peak)
            nterms += 1
        acc += diag
        rel = np.abs(diag) / np.maximum(np.abs(acc), 1e-300)
        if float(rel.max()) <= rel_tol:
            quiet += 1
            if quiet >= 2:
                break
        else:
            quiet = 0
    else:
        raise ConvergenceError("cov series: diagonal cap reached before settling")
    vals = params.sigma**2 * acc
    # cancellation-polluted pairs -> extended-precision redo
    bad = peak * _EPS * max(nterms, 1) > rel_tol * np.maximum(np.abs(acc), 1e-300)
    if np.any(bad):
        idx = np.nonzero(bad)[0]
        for j in idx:
            vals[j] = _cov_exact_mp(params, float(ts[j]), float(tb[j]), rel_tol)
    total[live] = vals
    return total


def _cov_exact_mp(params, t, T2, rel_tol):
    """Extended-precision covariance series for cancellation-heavy scales."""
    a = params.alpha
    k2 = params.kappa2
    # peak term magnitude estimate drives the working precision
    zscale = abs(k2) * max(T2, 1.0) ** a
    peak_log10 = max(2.0 * zscale ** (1.0 / a) / math.log(10.0), 10.0)
    dps = int(peak_log10) + 35
    with mpmath.workdps(dps):
        mt = mpmath.mpf(t)
        mT = mpmath.mpf(T2)
        mk2 = mpmath.mpf(k2)
        ma = mpmath.mpf(a)
        z = mt / mT
        acc = mpmath.mpf(0)
        quiet = 0
        for d in range(2, 2000):
            diag = mpmath.mpf(0)
            for i1 in range(1, d):
                i2 = d - i1
                term = (
                    mk2 ** (d - 2)
                    * mt ** (i1 * ma)
                    * mT ** (i2 * ma - 1)
                    / (mpmath.gamma(i1 * ma + 1) * mpmath.gamma(i2 * ma))
                    * _hyp2f1_mp(1 - i2 * ma, mpmath.mpf(1), i1 * ma + 1, z)
                )
                diag += term
            acc += diag
            if abs(diag) <= mpmath.mpf(rel_tol) / 10 * max(abs(acc), mpmath.mpf("1e-300")):
                quiet += 1
                if quiet >= 2:
                    return float(mpmath.mpf(params.sigma) ** 2 * acc)
            else:
                quiet = 0
    raise ConvergenceError("cov series (mp): diagonal cap reached before settling")


def cov_exact(
    params: ModelParams, t1: float, t2: float, ctl: SeriesControl | None = None
) -> float:
    """Cov(X_t1, X_t2) by the hypergeometric double series (symmetric in t1, t2)."""
    t1 = float(t1)
    t2 = float(t2)
    if t1 < 0.0 or t2 < 0.0:
        raise ValidationError("cov_exact: times must be >= 0")
    lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
    if lo == 0.0:
        return 0.0
    if not params.kappa2_is_zero:
        _check_ml_scale(params, hi)
    rel_tol = (ctl or SeriesControl()).rel_tol
    out = _cov_pairs(params, np.array([lo]), np.array([hi]), rel_tol=rel_tol)
    return float(out[0])


def stationary_variance(params: ModelParams) -> float:
    """Limit variance sigma^2 int_0^inf s^(2a-2) E_{a,a}(k2 s^a)^2 ds (k2 < 0).

    Head [0,1] under v = s^alpha: (1/a) int_0^1 v^(1-1/a) E_{a,a}(k2 v)^2 dv
    with an entire integrand -- one 64-point Gauss-Jacobi rule is exact to
    machine precision.  Tail: dyadic Gauss-Legendre panels [2^m, 2^(m+1)]
    until a panel contributes < 1e-12, with the asymptotic Mittag-Leffler
    branch once |k2| s^a > 30.
    """
    if not params.kappa2 < 0.0:
        raise ValidationError("stationary_variance: requires kappa2 < 0")
    a = params.alpha
    k2 = params.kappa2

    def E_aa(z: float) -> float:
        if z >= -ML_MAX_ABS_Z:
            return mittag_leffler(a, a, z)
        return _mittag_leffler_asymptotic(a, a, z)

    nodes, weights = jacobi_rule(64, 0.0, 1.0 - 1.0 / a, 0.0, 1.0)
    head = float(
        np.sum(weights * np.array([E_aa(k2 * v) ** 2 for v in nodes]))
    ) / a

    tail = 0.0
    for m in range(0, 41):
        lo, hi = 2.0**m, 2.0 ** (m + 1)
        s, w = legendre_rule(32, lo, hi)
        vals = np.array([s_i ** (2.0 * a - 2.0) * E_aa(k2 * s_i**a) ** 2 for s_i in s])
        panel = float(np.sum(w * vals))
        tail += panel
        if panel < 1e-12:
            break
    else:
        raise ConvergenceError("stationary_variance: tail panels did not close")
    return params.sigma**2 * (head + tail)


# ---------------------------------------------------------------------------
# grid laws and sampling
# ---------------------------------------------------------------------------


def grid_law_exact(params: ModelParams, grid: TimeGrid) -> GaussianLaw:
    """Joint exact law of (X_{t_1}, ..., X_{t_n}) on the grid."""
    n = grid.n
    if n > _GRID_LAW_MAX_N:
        raise ValidationError(
            f"grid_law_exact: n <= {_GRID_LAW_MAX_N} (cost is O(n^2) series sums)"
        )
    t = grid.times
    mean = np.array([mean_exact(params, t[k]) for k in range(1, n + 1)])
    jj, kk = np.triu_indices(n)
    t_lo = t[jj + 1]
    t_hi = t[kk + 1]
    swap = t_lo > t_hi
    t_lo2 = np.where(swap, t_hi, t_lo)
    t_hi2 = np.where(swap, t_lo, t_hi)
    vals = _cov_pairs(params, t_lo2, t_hi2)
    cov = np.zeros((n, n))
    cov[jj, kk] = vals
    cov[kk, jj] = vals
    labels = tuple(f"X[{k}]" for k in range(1, n + 1))
    return GaussianLaw(labels, mean, cov)


def driver_law(params: ModelParams, grid: TimeGrid) -> GaussianLaw:
    """Joint law of the 2n driver coordinates (dW_0..dW_{n-1}, G_1..G_n).

    G_k = int_0^{t_k} (t_k-s)^(a-1)/Gamma(a) dW_s.  Blocks:
      Cov(dW_j, dW_k) = dt delta_jk
      Cov(dW_j, G_k)  = c_weight(j, k) for j < k, else 0   (cells grid-aligned)
      Cov(G_j, G_k)   = cross_kernel_integral(t_j, t_k, t_min) / Gamma(a)^2
    """
    n = grid.n
    a = params.alpha
    cov = np.zeros((2 * n, 2 * n))
    cov[:n, :n] = grid.dt * np.eye(n)
    C = c_matrix(grid, a)  # C[i, k] for cells i, grid points k
    cov[:n, n:] = C[:n, 1:]
    cov[n:, :n] = C[:n, 1:].T
    cov[n:, n:] = cross_kernel_table(grid, a)[1:, 1:] / gamma(a) ** 2
    mean = np.zeros(2 * n)
    labels = tuple(f"dW[{j}]" for j in range(n)) + tuple(
        f"G[{k}]" for k in range(1, n + 1)
    )
    return GaussianLaw(labels, mean, cov)


def _cholesky_psd(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor with an escalating diagonal-jitter repair."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.trace(cov)) / max(cov.shape[0], 1)
    for eps in (1e-12, 1e-10):
        try:
            return np.linalg.cholesky(cov + eps * scale * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise ConvergenceError(
        "covariance not positive semi-definite within jitter repair budget"
    )


_BLOCK_SIZE = 8192


def sample(
    law: GaussianLaw,
    n_paths: int,
    seed: int,
    block_size: int = _BLOCK_SIZE,
) -> np.ndarray:
    """Draw n_paths of the law; bit-reproducible for a fixed (seed, n_paths).

    Paths are generated in fixed-size blocks, one spawned SeedSequence child
    per block, so the stream layout is a pure function of (seed, n_paths) --
    independent of how many workers consume the blocks.
    """
    if n_paths < 1:
        raise ValidationError("sample: n_paths must be >= 1")
    L = _cholesky_psd(law.cov)
    n_blocks = (n_paths + block_size - 1) // block_size
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    out = np.empty((n_paths, law.dim))
    for b in range(n_blocks):
        lo = b * block_size
        hi = min(lo + block_size, n_paths)
        rng = np.random.Generator(np.random.PCG64(children[b]))
        z = rng.standard_normal((hi - lo, law.dim))
        out[lo:hi] = law.mean + z @ L.T
    return out
