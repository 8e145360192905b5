"""Marginal machinery: skew-t distribution, AR(2) temporal model, uniform-scale transforms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, stats
from scipy.interpolate import PchipInterpolator
from scipy.stats import rankdata

from . import numkernel as nk
from .models import Dataset

__all__ = [
    "SkewTParams", "AR2Model",
    "skew_t_logpdf", "skew_t_pdf", "skew_t_cdf", "skew_t_quantile", "skew_t_rvs",
    "fit_skew_t", "fit_ar2", "rank_transform", "ar2_design",
]


@dataclass(frozen=True)
class SkewTParams:
    """Location/scale/slant/df parameterization of the skew-t law."""

    xi: float
    omega: float
    slant: float
    nu: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")


def _t_logpdf(w, nu):
    from scipy.special import gammaln
    return (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
            - 0.5 * (nu + 1.0) * np.log1p(w * w / nu))


def _t_logcdf(x, nu):
    # fast path through cdf; exact logcdf only where the cdf is tiny
    c = stats.t.cdf(x, nu)
    out = np.log(np.maximum(c, 1e-300))
    small = c < 1e-12
    if np.any(small):
        out = np.asarray(out)
        out[small] = stats.t.logcdf(np.asarray(x)[small], nu)
    return out


def skew_t_logpdf(z, p: SkewTParams):
    w = (np.asarray(z, dtype=float) - p.xi) / p.omega
    arg = p.slant * w * np.sqrt((p.nu + 1.0) / (p.nu + w * w))
    return np.log(2.0 / p.omega) + _t_logpdf(w, p.nu) + _t_logcdf(arg, p.nu + 1.0)


def skew_t_pdf(z, p: SkewTParams):
    return np.exp(skew_t_logpdf(z, p))


# cumulative table: sinh-spaced grid with composite 8-point Gauss-Legendre panels
_PANEL_X, _PANEL_W = np.polynomial.legendre.leggauss(8)


@lru_cache(maxsize=128)
def _skew_t_table(p: SkewTParams):
    wmax = max(80.0, abs(float(stats.t.ppf(1e-11, p.nu))), abs(float(stats.t.ppf(1 - 1e-11, p.nu))))
    u = np.linspace(-np.arcsinh(wmax), np.arcsinh(wmax), 2049)
    grid = np.sinh(u)
    a = grid[:-1]
    b = grid[1:]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    nodes = mid + half * _PANEL_X[None, :]
    std = SkewTParams(0.0, 1.0, p.slant, p.nu)
    vals = skew_t_pdf(nodes, std)
    panel = np.sum(vals * _PANEL_W[None, :], axis=1) * half[:, 0]
    cdf = np.concatenate([[0.0], np.cumsum(panel)])
    # left tail mass below the grid
    c_lo = 2.0 * float(stats.t.cdf(-p.slant * np.sqrt(p.nu + 1.0), p.nu + 1.0))
    lo_mass = c_lo * float(stats.t.cdf(grid[0], p.nu))
    cdf = cdf + lo_mass
    total = cdf[-1] + 2.0 * (1.0 - float(stats.t.cdf(p.slant * np.sqrt(p.nu + 1.0), p.nu + 1.0))) \
        * float(stats.t.sf(grid[-1], p.nu))
    interp = PchipInterpolator(grid, np.minimum(cdf, total), extrapolate=False)
    return grid, cdf, total, interp, c_lo


def skew_t_cdf(z, p: SkewTParams):
    """CDF by cached panel integration of the density (about 1e-10 absolute)."""
    grid, cdf, total, interp, c_lo = _skew_t_table(p)
    w = (np.asarray(z, dtype=float) - p.xi) / p.omega
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    out = np.empty_like(w)
    inside = (w >= grid[0]) & (w <= grid[-1])
    out[inside] = interp(w[inside]) / total
    lo = w < grid[0]
    hi = w > grid[-1]
    c_hi = 2.0 * (1.0 - float(stats.t.cdf(p.slant * np.sqrt(p.nu + 1.0), p.nu + 1.0)))
    if np.any(lo):
        out[lo] = c_lo * stats.t.cdf(w[lo], p.nu) / total
    if np.any(hi):
        out[hi] = 1.0 - c_hi * stats.t.sf(w[hi], p.nu) / total
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def skew_t_quantile(u, p: SkewTParams):
    """Inverse CDF; errors on u in {0, 1}."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    uu = np.atleast_1d(u)
    if np.any((uu <= 0.0) | (uu >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    w = nk.invert_monotone_vec(lambda z: skew_t_cdf(z, SkewTParams(0.0, 1.0, p.slant, p.nu)),
                               uu, lo=-50.0, hi=50.0, iters=70)
    out = p.xi + p.omega * w
    return float(out[0]) if scalar else out


def skew_t_rvs(p: SkewTParams, size, rng):
    """Draws via the convolution representation: scaled skew-normal over sqrt(chi2/nu)."""
    delta = p.slant / np.sqrt(1.0 + p.slant ** 2)
    z0 = np.abs(rng.standard_normal(size))
    z1 = rng.standard_normal(size)
    sn = delta * z0 + np.sqrt(1.0 - delta * delta) * z1
    chi = rng.chisquare(p.nu, size)
    return p.xi + p.omega * sn / np.sqrt(chi / p.nu)


def fit_skew_t(data, restarts: int = 3, max_iter: int = 4000) -> SkewTParams:
    """Maximum likelihood skew-t fit by Nelder-Mead over (xi, log omega, slant, log nu)."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 50:
        raise ValueError("need at least 50 observations")
    sd = float(np.std(x))
    if sd == 0.0:
        raise ValueError("constant input: zero variance")
    skew = float(stats.skew(x))
    start = np.array([float(np.median(x)), np.log(sd), np.clip(3.0 * skew, -8.0, 8.0), np.log(8.0)])

    def neg(theta):
        xi, lw, sl, ln = theta
        if abs(lw) > 20 or abs(ln) > 6 or abs(sl) > 80:
            return np.inf
        p = SkewTParams(xi, np.exp(lw), sl, np.exp(ln))
        val = -float(np.sum(skew_t_logpdf(x, p)))
        return val if np.isfinite(val) else np.inf

    best = None
    rng = np.random.default_rng(0)
    theta0 = start
    trace = []
    for attempt in range(restarts + 1):
        res = optimize.minimize(neg, theta0, method="Nelder-Mead",
                                options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8})
        trace.append((attempt, float(res.fun), bool(res.success)))
        if best is None or res.fun < best.fun:
            best = res
        if res.success and np.isfinite(res.fun):
            break
        theta0 = start * (1.0 + 0.1 * rng.standard_normal(4)) + 0.05 * rng.standard_normal(4)
    if best is None or not np.isfinite(best.fun) or best.fun > neg(start) + 1e-9:
        raise RuntimeError(f"skew-t fit failed to improve on the start; trace={trace}")
    xi, lw, sl, ln = best.x
    return SkewTParams(float(xi), float(np.exp(lw)), float(sl), float(np.exp(ln)))


# ---------------------------------------------------------------- AR(2) with covariates

@dataclass(frozen=True)
class AR2Model:
    """T_{s,t} = c_s + c_t + c1 T_{s,t-1} + c2 T_{s,t-2} + eps with a pooled skew-t residual law.

    c_s = c0_s + c1_s s1 + c2_s s2 and c_t = c0_t + c1_t t + c2_t t^2; the two
    intercepts are not separately identifiable, so c0_t is fixed at zero and
    the merged intercept lives in c0_s.
    """

    c0_s: float
    c1_s: float
    c2_s: float
    c0_t: float
    c1_t: float
    c2_t: float
    lag1: float
    lag2: float
    resid: SkewTParams

    def __post_init__(self):
        roots = np.roots([-self.lag2, -self.lag1, 1.0]) if self.lag2 != 0 else (
            np.array([1.0 / self.lag1]) if self.lag1 != 0 else np.array([np.inf]))
        if np.any(np.abs(roots) <= 1.0 + 1e-10):
            raise ValueError("lag polynomial has a root inside the unit circle (non-stationary)")

    def mean_part(self, s1, s2, t):
        return (self.c0_s + self.c1_s * s1 + self.c2_s * s2
                + self.c0_t + self.c1_t * t + self.c2_t * t * t)

    def resid_cdf(self, e):
        return skew_t_cdf(e, self.resid)

    def resid_quantile(self, u):
        return skew_t_quantile(u, self.resid)


_AR2_COLUMNS = ("intercept", "s1", "s2", "t", "t^2", "lag1", "lag2")


def ar2_design(data: Dataset):
    """Pooled regression design over sites and t >= 3; returns (X, y)."""
    obs = data.obs
    n, d = obs.shape
    if n < 3:
        raise ValueError("need at least 3 time points per site")
    t = data.times[2:]
    rows = []
    ys = []
    for j in range(d):
        s1, s2 = data.sites.xy[j]
        X = np.column_stack([
            np.ones(n - 2),
            np.full(n - 2, s1),
            np.full(n - 2, s2),
            t,
            t * t,
            obs[1:-1, j],
            obs[:-2, j],
        ])
        rows.append(X)
        ys.append(obs[2:, j])
    return np.vstack(rows), np.concatenate(ys)


def fit_ar2(data: Dataset):
    """Two-stage fit: pooled least squares on the AR(2) design, skew-t MLE on residuals.

    Returns (AR2Model, U) where U is the (n-2) x d matrix of residuals pushed
    through the fitted residual CDF.
    """
    X, y = ar2_design(data)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        # identify a minimal set of columns whose removal restores full rank
        bad = [name for k, name in enumerate(_AR2_COLUMNS)
               if np.linalg.matrix_rank(np.delete(X, k, axis=1)) == rank]
        raise ValueError(f"rank-deficient AR(2) design; collinear columns: {bad}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    rvar = float(np.var(resid))
    if rvar < 1e-18:
        # deterministic recursion: degenerate residual law, U undefined
        raise ValueError("AR(2) regression is exact (zero residual variance)")
    p = fit_skew_t(resid)
    model = AR2Model(c0_s=float(coef[0]), c1_s=float(coef[1]), c2_s=float(coef[2]),
                     c0_t=0.0, c1_t=float(coef[3]), c2_t=float(coef[4]),
                     lag1=float(coef[5]), lag2=float(coef[6]), resid=p)
    n, d = data.obs.shape
    U = skew_t_cdf(resid, p).reshape(d, n - 2).T
    eps = 0.5 / U.size
    return model, np.clip(U, eps, 1.0 - eps)


def ar2_residuals(data: Dataset, model: AR2Model):
    """Residual matrix (n-2) x d implied by a fitted AR(2) model."""
    X, y = ar2_design(data)
    coef = np.array([model.c0_s, model.c1_s, model.c2_s, model.c1_t, model.c2_t,
                     model.lag1, model.lag2])
    n, d = data.obs.shape
    return (y - X @ coef).reshape(d, n - 2).T


def rank_transform(obs) -> np.ndarray:
    """Component-wise pseudo-observations u = (rank - 0.5)/n with average ranks for ties."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[0] < 2:
        raise ValueError("need an (n, d) matrix with n >= 2")
    n = obs.shape[0]
    ranks = np.apply_along_axis(lambda c: rankdata(c, method="average"), 0, obs)
    return (ranks - 0.5) / n
