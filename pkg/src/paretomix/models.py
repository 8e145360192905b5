"""Copula model families: specs, closed-form densities, simulation, numeric oracle.

Four families are supported:

* ``m1``: W = Z* + alpha(s) * Ztau + alpha_U * E_U - alpha_L * E_L, a latent
  Gaussian field plus a truncated-normal skew factor and an asymmetric
  Laplace tail factor.  Dependence in both tails.
* ``m2``: W = Z* + alpha0 * E0 + beta(s) * E1 with independent unit
  exponentials.  Upper tail dependence only.
* ``grouped_t``: X_i = Z_i * V^{1/(2 nu_i)} with V ~ Ig(1/2, 1/2), the
  grouped-t construction.  Simulation and tail analytics only (no closed
  likelihood).
* ``gaussian``: W = Z*.

The truncated normal convention throughout: Ztau has density
phi(z)/Phi(tau) on z > -tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate

from . import numkernel as nk
from .numkernel import (
    CorrelationMatrix,
    bvn_cdf,
    log_bvn_cdf,
    mvn_logpdf,
    norm_cdf,
    norm_logcdf,
    norm_logpdf,
    norm_pdf,
)

__all__ = [
    "SiteSet", "CovarianceModel", "ModelM1Spec", "ModelM2Spec",
    "GroupedTSpec", "GaussianSpec", "ModelSpec", "Dataset",
    "corr_matrix", "simulate", "pdf_numeric_oracle",
    "m1_marginal_cdf", "m1_joint_pdf", "m1_joint_logpdf",
    "m2_marginal_cdf", "m2_joint_pdf", "m2_joint_logpdf",
    "marginal_cdf", "marginal_logpdf", "marginal_quantile", "marginal_quantile_vec",
    "spec_to_dict", "spec_from_dict", "two_site_m1", "two_site_m2", "two_site_grouped_t",
]


# ---------------------------------------------------------------- domain types

@dataclass(frozen=True)
class SiteSet:
    """Spatial locations with unique identifiers and planar coordinates."""

    ids: tuple
    xy: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValueError("site coordinates must have shape (d, 2)")
        if len(self.ids) != xy.shape[0]:
            raise ValueError("number of ids must match number of coordinate rows")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("site identifiers must be unique")
        if not np.all(np.isfinite(xy)):
            raise ValueError("site coordinates must be finite")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "xy", xy)

    @property
    def d(self) -> int:
        return self.xy.shape[0]

    def distances(self) -> np.ndarray:
        diff = self.xy[:, None, :] - self.xy[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def subset(self, idx) -> "SiteSet":
        idx = list(idx)
        return SiteSet(tuple(self.ids[i] for i in idx), self.xy[idx])

    def with_site(self, site_id: str, xy) -> "SiteSet":
        return SiteSet(self.ids + (site_id,), np.vstack([self.xy, np.asarray(xy, float)]))

    @staticmethod
    def random(d: int, rng) -> "SiteSet":
        return SiteSet(tuple(f"s{i}" for i in range(d)), rng.random((d, 2)))


@dataclass(frozen=True)
class CovarianceModel:
    """Powered-exponential correlation rho(h) = exp(-(h/mu1)^mu2)."""

    mu1: float
    mu2: float

    def __post_init__(self):
        if not self.mu1 > 0:
            raise ValueError("mu1 must be positive")
        if not 0 < self.mu2 <= 2:
            raise ValueError("mu2 must be in (0, 2]")

    def corr(self, h):
        return np.exp(-((np.asarray(h, dtype=float) / self.mu1) ** self.mu2))


def corr_matrix(cov: CovarianceModel, sites: SiteSet) -> CorrelationMatrix:
    """Correlation matrix of the latent Gaussian field over the sites."""
    h = sites.distances()
    m = cov.corr(h)
    np.fill_diagonal(m, 1.0)
    try:
        return CorrelationMatrix(m)
    except ValueError as exc:
        i, k = divmod(int(np.argmin(h + np.eye(sites.d) * 1e9)), sites.d)
        raise ValueError(
            f"correlation matrix not positive definite (closest site pair: "
            f"{sites.ids[i]!r}, {sites.ids[k]!r} at distance {h[i, k]:.3g}): {exc}"
        ) from exc


def _surface(coef, xy):
    c0, c1, c2 = coef
    return c0 + c1 * xy[:, 0] + c2 * xy[:, 1]


class _OmegaCache:
    # lazily attach the Cholesky-backed correlation matrix to a frozen spec
    def __get__(self, obj, objtype=None):
        if obj is None:
            return self
        cached = obj.__dict__.get("_omega")
        if cached is None:
            cached = corr_matrix(obj.cov, obj.sites)
            obj.__dict__["_omega"] = cached
        return cached


@dataclass(frozen=True, eq=False)
class ModelM1Spec:
    """Both-tail skew model: W = Z* + alpha(s) Ztau + alpha_U E_U - alpha_L E_L."""

    cov: CovarianceModel
    sites: SiteSet
    alpha_surface: tuple
    tau: float
    alpha_L: float
    alpha_U: float

    omega = _OmegaCache()

    def __post_init__(self):
        if not (self.alpha_L > 0 and self.alpha_U > 0):
            raise ValueError("alpha_L and alpha_U must be positive")
        a = self.alpha_vec
        if not np.all(np.isfinite(a)):
            raise ValueError("alpha surface must be finite at all sites")

    @property
    def alpha_vec(self) -> np.ndarray:
        return _surface(self.alpha_surface, self.sites.xy)

    @property
    def d(self) -> int:
        return self.sites.d

    def reflected(self) -> "ModelM1Spec":
        """Spec of -W: skews negated, tail parameters swapped."""
        a0, a1, a2 = self.alpha_surface
        return ModelM1Spec(self.cov, self.sites, (-a0, -a1, -a2), self.tau,
                           alpha_L=self.alpha_U, alpha_U=self.alpha_L)


@dataclass(frozen=True, eq=False)
class ModelM2Spec:
    """Upper-tail skew model: W = Z* + alpha0 E0 + beta(s) E1."""

    cov: CovarianceModel
    sites: SiteSet
    alpha0: float
    beta_surface: tuple

    omega = _OmegaCache()

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        b = self.beta_vec
        if not np.all(np.isfinite(b) & (b > 0)):
            raise ValueError("beta surface must be positive and finite at all sites")

    @property
    def beta_vec(self) -> np.ndarray:
        return np.exp(_surface(self.beta_surface, self.sites.xy))

    @property
    def d(self) -> int:
        return self.sites.d


@dataclass(frozen=True, eq=False)
class GroupedTSpec:
    """Grouped-t construction: X_i = Z_i V^{1/(2 nu_i)}, V ~ Ig(1/2, 1/2)."""

    cov: CovarianceModel
    sites: SiteSet
    nu: np.ndarray

    omega = _OmegaCache()

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        if nu.shape != (self.sites.d,):
            raise ValueError("nu must have one entry per site")
        if not np.all(nu > 0):
            raise ValueError("degrees of freedom must be positive")
        object.__setattr__(self, "nu", nu)

    @property
    def d(self) -> int:
        return self.sites.d


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    """Plain Gaussian copula field."""

    cov: CovarianceModel
    sites: SiteSet

    omega = _OmegaCache()

    @property
    def d(self) -> int:
        return self.sites.d


ModelSpec = Union[ModelM1Spec, ModelM2Spec, GroupedTSpec, GaussianSpec]


def family_of(spec: ModelSpec) -> str:
    if isinstance(spec, ModelM1Spec):
        return "m1"
    if isinstance(spec, ModelM2Spec):
        return "m2"
    if isinstance(spec, GroupedTSpec):
        return "grouped_t"
    if isinstance(spec, GaussianSpec):
        return "gaussian"
    raise TypeError(f"not a model spec: {type(spec)!r}")


@dataclass(frozen=True)
class Dataset:
    """Observation matrix (rows = time, columns = sites) over a site set."""

    sites: SiteSet
    obs: np.ndarray
    times: np.ndarray = None

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim != 2 or obs.shape[1] != self.sites.d:
            raise ValueError("observations must have shape (n, d)")
        times = self.times
        if times is None:
            times = np.arange(1, obs.shape[0] + 1, dtype=float)
        times = np.asarray(times, dtype=float)
        if times.shape != (obs.shape[0],):
            raise ValueError("times must have one entry per observation row")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return self.obs.shape[0]


# ---------------------------------------------------------------- M1 closed forms

_RATIO_SWITCH = -8.0  # below this the e^x * Phi2 factor routes through the ratio form


def _m1_site_params(spec: ModelM1Spec, i: int):
    a = float(spec.alpha_vec[i])
    at = np.sqrt(1.0 + a * a)
    return a, at


def _exp_phi2_term(expo, y, b, rho, z_over_at):
    """exp(expo) * Phi2(y, b; rho) with e^expo * phi(y) = phi(z/at).

    Stable in both regimes: for y < -8 the product is phi(z/at) times the
    bivariate ratio; otherwise the exponent is modest and the log product
    is finite.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    deep = y < _RATIO_SWITCH
    if np.any(deep):
        out[deep] = norm_pdf(z_over_at[deep]) * np.exp(
            nk._log_bvn_ratio(np.broadcast_to(b, y.shape)[deep], y[deep], rho))
    if np.any(~deep):
        sub = ~deep
        out[sub] = np.exp(np.asarray(expo)[sub] + log_bvn_cdf(y[sub], b, rho))
    return out


def m1_marginal_cdf(z, i: int, spec: ModelM1Spec):
    """Marginal CDF of W_i under the m1 model (vectorized in z)."""
    a, at = _m1_site_params(spec, i)
    aL, aU, tau = spec.alpha_L, spec.alpha_U, spec.tau
    rho0 = -a / at
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    zat = z / at
    lead = np.exp(log_bvn_cdf(zat, tau, rho0) - norm_logcdf(tau))
    t_up = _exp_phi2_term(
        expo=at * at / (2.0 * aU * aU) - z / aU,
        y=zat - at / aU, b=tau + a / aU, rho=rho0, z_over_at=zat)
    t_lo = _exp_phi2_term(
        expo=at * at / (2.0 * aL * aL) + z / aL,
        y=-zat - at / aL, b=tau - a / aL, rho=-rho0, z_over_at=zat)
    cstar = 1.0 / ((aL + aU) * norm_cdf(tau))
    out = np.clip(lead - cstar * aU * t_up + cstar * aL * t_lo, 0.0, 1.0)
    return float(out[0]) if scalar else out


def m1_joint_logpdf(z, spec: ModelM1Spec):
    """Log joint density of W under the m1 model for rows z of shape (..., d)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    d = spec.d
    if Z.shape[-1] != d:
        raise ValueError(f"points have dimension {Z.shape[-1]}, spec has d={d}")
    om = spec.omega
    oi = om.inverse
    alpha = spec.alpha_vec
    aL, aU, tau = spec.alpha_L, spec.alpha_U, spec.tau
    oi1 = oi.sum(axis=1)
    oia = oi @ alpha
    A = Z @ oi1
    B = Z @ oia
    C = float(oi1.sum())
    D = float(alpha @ oia)
    E = float(oi1 @ alpha)
    den = E * E - C * (D + 1.0)
    if abs(den) < 1e-12:
        raise ValueError("degenerate configuration: E^2 - C(D+1) ~ 0")
    x1 = (B * E - A * (D + 1.0) + (D + 1.0) / aU) / den
    y1 = (A * E - B * C - E / aU) / den
    x2 = (B * E - A * (D + 1.0) - (D + 1.0) / aL) / den
    y2 = (A * E - B * C + E / aL) / den
    rho = -E / np.sqrt(C * (D + 1.0))
    one_m_r2 = max(1.0 - rho * rho, 1e-300)
    c1 = np.sqrt(C * one_m_r2)
    d1 = np.sqrt((D + 1.0) * one_m_r2)
    g1 = 0.5 * (A * x1 + B * y1) - x1 / (2.0 * aU) + log_bvn_cdf(x1 * c1, (tau + y1) * d1, rho)
    g2 = 0.5 * (A * x2 + B * y2) + x2 / (2.0 * aL) + log_bvn_cdf(-x2 * c1, (tau + y2) * d1, -rho)
    log_zeta = (-norm_logcdf(tau) - np.log(aL + aU) + (0.5 - 0.5 * d) * np.log(2.0 * np.pi)
                - 0.5 * np.log(C * (D + 1.0) * one_m_r2) - 0.5 * om.logdet - 0.5 * om.quad_form(Z))
    out = log_zeta + np.logaddexp(g1, g2)
    return float(out[0]) if single else out


def m1_joint_pdf(z, spec: ModelM1Spec):
    return np.exp(m1_joint_logpdf(z, spec))


def _log_bvn_curve(y, b, rho):
    """ln Phi_rho(y, b) along a sorted grid y with fixed b: direct evaluation in
    the central region, a coarse sub-grid of the smooth tail representation
    interpolated onto the deep region."""
    from scipy.interpolate import PchipInterpolator
    p = bvn_cdf(y, b, rho)
    out = np.log(np.maximum(p, 1e-300))
    deep = p < 1e-9
    ndeep = int(np.count_nonzero(deep))
    if ndeep == 0:
        return out
    yd = y[deep]
    lo = np.minimum(np.minimum(yd, b), -1e-8)
    if ndeep <= 32:
        out[deep] = norm_logpdf(lo) + nk._log_bvn_ratio(np.maximum(yd, b), lo, rho, n=48)
        return out
    sub = np.linspace(yd.min(), yd.max(), 32)
    lo_s = np.minimum(np.minimum(sub, b), -1e-8)
    vals = norm_logpdf(lo_s) + nk._log_bvn_ratio(np.maximum(sub, b), lo_s, rho, n=48)
    out[deep] = PchipInterpolator(sub, vals, extrapolate=True)(yd)
    return out


class M1ColumnTables:
    """Splined per-site marginal CDF/log-pdf/quantile of the m1 family.

    The three bivariate-normal log-CDF sections entering the marginal CDF have
    fixed second arguments, and the d=1 joint density reuses two of them, so a
    single set of monotone interpolants serves both.  Used by the likelihood
    hot loop; the exact functions remain the reference implementation.
    """

    def __init__(self, spec: ModelM1Spec, i: int, z_lo: float, z_hi: float, nodes: int = 420):
        from scipy.interpolate import PchipInterpolator
        a, at = _m1_site_params(spec, i)
        self.a, self.at = a, at
        self.aL, self.aU, self.tau = spec.alpha_L, spec.alpha_U, spec.tau
        self.z_lo, self.z_hi = float(z_lo), float(z_hi)
        self.log_phi_tau = float(norm_logcdf(self.tau))
        rho0 = -a / at
        z = np.linspace(self.z_lo, self.z_hi, nodes)
        zat = z / at
        h0 = _log_bvn_curve(zat, self.tau, rho0)
        y_up = zat - at / self.aU
        hU = _log_bvn_curve(y_up, self.tau + a / self.aU, rho0)
        y_lo = -zat - at / self.aL
        hL = _log_bvn_curve(y_lo[::-1], self.tau - a / self.aL, -rho0)[::-1]
        self._hU = PchipInterpolator(y_up, hU, extrapolate=True)
        self._hL = PchipInterpolator(y_lo[::-1], hL[::-1], extrapolate=True)
        cstar = 1.0 / ((self.aL + self.aU) * np.exp(self.log_phi_tau))
        g_up = at * at / (2.0 * self.aU * self.aU) - z / self.aU + hU
        g_lo = at * at / (2.0 * self.aL * self.aL) + z / self.aL + hL
        fvals = np.clip(np.exp(h0 - self.log_phi_tau)
                        - cstar * self.aU * np.exp(g_up) + cstar * self.aL * np.exp(g_lo),
                        0.0, 1.0)
        fvals = np.maximum.accumulate(fvals)
        self._cdf = PchipInterpolator(z, fvals, extrapolate=True)
        keep = np.concatenate([[True], np.diff(fvals) > 1e-15])
        self._inv = PchipInterpolator(fvals[keep], z[keep], extrapolate=True)
        self._f_lo, self._f_hi = float(fvals[0]), float(fvals[-1])

    def cdf(self, z):
        return np.clip(self._cdf(np.asarray(z, dtype=float)), 0.0, 1.0)

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        at, aL, aU = self.at, self.aL, self.aU
        zat = z / at
        g_up = at * at / (2.0 * aU * aU) - z / aU + self._hU(zat - at / aU)
        g_lo = at * at / (2.0 * aL * aL) + z / aL + self._hL(-zat - at / aL)
        return -self.log_phi_tau - np.log(aL + aU) + np.logaddexp(g_up, g_lo)

    def quantile(self, u, polish: int = 22):
        """Inverse of the splined CDF: interpolated start plus bisection polish."""
        u = np.asarray(u, dtype=float)
        q = np.clip(self._inv(u), self.z_lo, self.z_hi)
        step = np.full_like(q, 0.25 * (self.z_hi - self.z_lo) / max(len(self._cdf.x), 2))
        blo = np.clip(q - step, self.z_lo, self.z_hi)
        bhi = np.clip(q + step, self.z_lo, self.z_hi)
        # widen until bracketing, then bisect
        for _ in range(60):
            bad_lo = self._cdf(blo) > u
            bad_hi = self._cdf(bhi) < u
            if not (np.any(bad_lo) or np.any(bad_hi)):
                break
            blo = np.where(bad_lo, np.maximum(blo - 4.0 * step, self.z_lo), blo)
            bhi = np.where(bad_hi, np.minimum(bhi + 4.0 * step, self.z_hi), bhi)
            step *= 4.0
        for _ in range(polish):
            mid = 0.5 * (blo + bhi)
            under = self._cdf(mid) < u
            blo = np.where(under, mid, blo)
            bhi = np.where(under, bhi, mid)
        return 0.5 * (blo + bhi)


# ---------------------------------------------------------------- M2 closed forms

_M2_LIMIT_RTOL = 1e-7  # |alpha-beta|/max below this switches to the limit branch


def _log_sep(x, y):
    # ln( exp(x) Phi(y) )
    return np.asarray(x, dtype=float) + norm_logcdf(y)


def m2_marginal_cdf(z, i: int, spec: ModelM2Spec):
    """Marginal CDF of W_i = Z + alpha0 E0 + beta_i E1 (vectorized in z)."""
    a = float(spec.alpha0)
    b = float(spec.beta_vec[i])
    return _m2_cdf_ab(z, a, b)


def _m2_cdf_ab(z, a, b):
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if abs(a - b) / max(a, b) < _M2_LIMIT_RTOL:
        # analytic alpha -> beta limit of the difference quotient
        y = z - 1.0 / a
        term = (1.0 + z / a - 1.0 / (a * a)) * np.exp(_log_sep(-z / a + 0.5 / (a * a), y))
        out = norm_cdf(z) - term - norm_pdf(z) / a
    else:
        ta = _log_sep(-z / a + 0.5 / (a * a), z - 1.0 / a) + np.log(a)
        tb = _log_sep(-z / b + 0.5 / (b * b), z - 1.0 / b) + np.log(b)
        hi = np.maximum(ta, tb)
        diff = (np.exp(ta - hi) - np.exp(tb - hi)) * np.exp(hi)
        out = norm_cdf(z) - diff / (a - b)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def _m2_marginal_logpdf_ab(z, a, b):
    z = np.asarray(z, dtype=float)
    if abs(a - b) / max(a, b) < _M2_LIMIT_RTOL:
        # d/da of e^x Phi(y): f = (y/a^2) e^x Phi(y) + phi(z)/a^2
        y = z - 1.0 / a
        base = norm_logpdf(z) - 2.0 * np.log(a)
        with np.errstate(divide="ignore"):
            lg = np.where(y != 0.0,
                          np.log(np.abs(y)) + _log_sep(-z / a + 0.5 / (a * a), y) - 2.0 * np.log(a),
                          -np.inf)
        pos = np.logaddexp(base, lg)
        neg = base + np.log1p(-np.minimum(np.exp(np.minimum(lg - base, 0.0)), 1.0 - 1e-16))
        return np.where(y > 0, pos, neg)
    ta = _log_sep(-z / a + 0.5 / (a * a), z - 1.0 / a)
    tb = _log_sep(-z / b + 0.5 / (b * b), z - 1.0 / b)
    # the term with the larger scale dominates; orient so the difference is positive
    hi, lo = (ta, tb) if a > b else (tb, ta)
    delta = np.maximum(hi - lo, 1e-300)
    return hi + np.log1p(-np.exp(-delta)) - np.log(abs(a - b))


def m2_joint_logpdf(z, spec: ModelM2Spec):
    """Log joint density of W under the m2 model for rows z of shape (..., d)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    d = spec.d
    if Z.shape[-1] != d:
        raise ValueError(f"points have dimension {Z.shape[-1]}, spec has d={d}")
    if d == 1:
        out = _m2_marginal_logpdf_ab(Z[:, 0], float(spec.alpha0), float(spec.beta_vec[0]))
        return float(out[0]) if single else out
    om = spec.omega
    oi = om.inverse
    alpha = np.full(d, float(spec.alpha0))
    beta = spec.beta_vec
    oia = oi @ alpha
    oib = oi @ beta
    A = float(alpha @ oia)
    B = float(beta @ oib)
    C = float(alpha @ oib)
    den = A * B - C * C
    if den < 1e-12 * A * B:
        raise ValueError("degenerate m2 configuration: alpha and beta are parallel")
    za = Z @ oia
    zb = Z @ oib
    x0 = (B * (za - 1.0) - C * (zb - 1.0)) / den
    y0 = (-C * (za - 1.0) + A * (zb - 1.0)) / den
    rho = -C / np.sqrt(A * B)
    one_m_r2 = max(1.0 - rho * rho, 1e-300)
    out = ((1.0 - 0.5 * d) * np.log(2.0 * np.pi) - 0.5 * np.log(A * B * one_m_r2)
           - 0.5 * om.logdet + 0.5 * x0 * (za - 1.0) + 0.5 * y0 * (zb - 1.0)
           - 0.5 * om.quad_form(Z)
           + log_bvn_cdf(x0 * np.sqrt(A * one_m_r2), y0 * np.sqrt(B * one_m_r2), rho))
    return float(out[0]) if single else out


def m2_joint_pdf(z, spec: ModelM2Spec):
    return np.exp(m2_joint_logpdf(z, spec))


# ---------------------------------------------------------------- grouped-t marginals

_GT_RULE = nk.gauss_legendre(220, 0.0, 9.0)


def _grouped_t_marginal_cdf(z, nu_i: float):
    """F(x) = E_g Phi(x g^{1/nu}) with g half-normal (g = 1/sqrt(V))."""
    g = _GT_RULE.nodes
    w = _GT_RULE.weights * 2.0 * norm_pdf(g)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    vals = norm_cdf(z[:, None] * g[None, :] ** (1.0 / nu_i))
    return vals @ w


# ---------------------------------------------------------------- generic marginal API

def marginal_cdf(z, i: int, spec: ModelSpec):
    fam = family_of(spec)
    if fam == "m1":
        return m1_marginal_cdf(z, i, spec)
    if fam == "m2":
        return m2_marginal_cdf(z, i, spec)
    if fam == "gaussian":
        return norm_cdf(z)
    out = _grouped_t_marginal_cdf(z, float(spec.nu[i]))
    return float(out[0]) if np.ndim(z) == 0 else out


def marginal_logpdf(z, i: int, spec: ModelSpec):
    fam = family_of(spec)
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    zz = np.atleast_1d(z)
    if fam == "m1":
        a = float(spec.alpha_vec[i])
        out = _m1_marginal_logpdf_vec(zz, a, spec.tau, spec.alpha_L, spec.alpha_U)
    elif fam == "m2":
        out = _m2_marginal_logpdf_ab(zz, float(spec.alpha0), float(spec.beta_vec[i]))
    elif fam == "gaussian":
        out = norm_logpdf(zz)
    else:
        g = _GT_RULE.nodes
        w = _GT_RULE.weights * 2.0 * norm_pdf(g)
        r = g ** (1.0 / float(spec.nu[i]))
        vals = np.exp(norm_logpdf(zz[:, None] * r[None, :])) * r[None, :]
        out = np.log(np.maximum(vals @ w, 1e-300))
    return float(out[0]) if scalar else out


def _m1_marginal_logpdf_vec(z, a, tau, aL, aU):
    # d=1 specialization of the joint formula: Omega = [1]
    at2 = 1.0 + a * a
    A = z
    B = a * z
    C, D, E = 1.0, a * a, a
    den = E * E - C * (D + 1.0)  # = -1
    x1 = (B * E - A * (D + 1.0) + (D + 1.0) / aU) / den
    y1 = (A * E - B * C - E / aU) / den
    x2 = (B * E - A * (D + 1.0) - (D + 1.0) / aL) / den
    y2 = (A * E - B * C + E / aL) / den
    rho = -E / np.sqrt(C * (D + 1.0))
    one_m_r2 = 1.0 - rho * rho
    c1 = np.sqrt(C * one_m_r2)
    d1 = np.sqrt((D + 1.0) * one_m_r2)
    g1 = 0.5 * (A * x1 + B * y1) - x1 / (2.0 * aU) + log_bvn_cdf(x1 * c1, (tau + y1) * d1, rho)
    g2 = 0.5 * (A * x2 + B * y2) + x2 / (2.0 * aL) + log_bvn_cdf(-x2 * c1, (tau + y2) * d1, -rho)
    log_zeta = (-norm_logcdf(tau) - np.log(aL + aU)
                - 0.5 * np.log(C * (D + 1.0) * one_m_r2) - 0.5 * z * z)
    return log_zeta + np.logaddexp(g1, g2)


def joint_logpdf(z, spec: ModelSpec):
    fam = family_of(spec)
    if fam == "m1":
        return m1_joint_logpdf(z, spec)
    if fam == "m2":
        return m2_joint_logpdf(z, spec)
    if fam == "gaussian":
        return mvn_logpdf(z, spec.omega)
    raise NotImplementedError("grouped-t has no tractable joint density")


def marginal_quantile(u, i: int, spec: ModelSpec, tol: float = 1e-12):
    """Inverse marginal CDF at u in (0, 1)."""
    u = float(u)
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie strictly inside (0, 1)")
    return nk.invert_monotone(lambda z: float(np.atleast_1d(marginal_cdf(z, i, spec))[0]),
                              u, bracket_seed=(-10.0, 10.0), tol=tol)


def marginal_quantile_vec(u, i: int, spec: ModelSpec, iters: int = 60):
    """Vectorized inverse marginal CDF (bisection with bracket expansion)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return nk.invert_monotone_vec(lambda z: marginal_cdf(z, i, spec), u,
                                  lo=-16.0, hi=16.0, iters=iters)


# ---------------------------------------------------------------- simulation

def simulate(spec: ModelSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n rows from the latent field (W scale for m1/m2/gaussian, X scale for grouped-t)."""
    if n < 1:
        raise ValueError("need n >= 1")
    d = spec.d
    chol = spec.omega.cholesky
    zstar = rng.standard_normal((n, d)) @ chol.T
    fam = family_of(spec)
    if fam == "gaussian":
        return zstar
    if fam == "m1":
        zt = nk.sample_trunc_normal(rng, spec.tau, size=n)
        eu = rng.exponential(1.0, n)
        el = rng.exponential(1.0, n)
        return (zstar + np.outer(zt, spec.alpha_vec)
                + spec.alpha_U * eu[:, None] - spec.alpha_L * el[:, None])
    if fam == "m2":
        e0 = rng.exponential(1.0, n)
        e1 = rng.exponential(1.0, n)
        return zstar + spec.alpha0 * e0[:, None] + np.outer(e1, spec.beta_vec)
    v = 1.0 / rng.gamma(0.5, 2.0, n)
    return zstar * v[:, None] ** (1.0 / (2.0 * spec.nu[None, :]))


# ---------------------------------------------------------------- numeric density oracle

def pdf_numeric_oracle(z, spec: ModelSpec, epsabs: float = 1e-10) -> float:
    """Joint density at a single point by adaptive quadrature over the mixing variables.

    Validation use only; d <= 5.
    """
    z = np.asarray(z, dtype=float).ravel()
    d = z.size
    if d != spec.d:
        raise ValueError("point dimension must match the spec")
    if d > 5:
        raise ValueError("numeric oracle supports d <= 5 only")
    om = spec.omega
    fam = family_of(spec)

    if fam == "gaussian":
        return float(np.exp(mvn_logpdf(z, om)))

    if fam == "grouped_t":
        # f(x) = int_0^inf phi_Omega(x g^{1/nu}) prod g^{1/nu_i} 2 phi(g) dg
        inv_nu = 1.0 / spec.nu

        def integrand(g):
            r = g ** inv_nu
            return float(np.exp(mvn_logpdf(z * r, om) + np.sum(np.log(r)))) * 2.0 * float(norm_pdf(g))

        val, err = integrate.quad(integrand, 0.0, np.inf, epsabs=epsabs, epsrel=1e-9, limit=400)
        _check_quad(val, err, epsabs)
        return val

    if fam == "m2":
        alpha = np.full(d, float(spec.alpha0))
        beta = spec.beta_vec

        def inner(v1):
            def f(v2):
                return float(np.exp(mvn_logpdf(z - alpha * v1 - beta * v2, om) - v1 - v2))
            val, _ = integrate.quad(f, 0.0, np.inf, epsabs=epsabs * 1e-2, epsrel=1e-10, limit=300)
            return val

        val, err = integrate.quad(inner, 0.0, np.inf, epsabs=epsabs, epsrel=1e-9, limit=300)
        _check_quad(val, err, epsabs)
        return val

    alpha = spec.alpha_vec
    aL, aU, tau = spec.alpha_L, spec.alpha_U, spec.tau
    cstar = 1.0 / ((aL + aU) * float(norm_cdf(tau)))

    def inner(w):
        zz = z - alpha * w

        def f_up(v):
            return float(np.exp(mvn_logpdf(zz - v, om) - v / aU))

        def f_lo(v):
            return float(np.exp(mvn_logpdf(zz + v, om) - v / aL))

        up, _ = integrate.quad(f_up, 0.0, np.inf, epsabs=epsabs * 1e-2, epsrel=1e-10, limit=300)
        lo, _ = integrate.quad(f_lo, 0.0, np.inf, epsabs=epsabs * 1e-2, epsrel=1e-10, limit=300)
        return (up + lo) * float(norm_pdf(w))

    val, err = integrate.quad(inner, -tau, np.inf, epsabs=epsabs, epsrel=1e-9, limit=300)
    _check_quad(val, err, epsabs)
    return val * cstar


def _check_quad(val, err, epsabs):
    if not np.isfinite(val):
        raise ValueError("numeric oracle quadrature failed (non-finite value)")
    if err > max(epsabs, 1e-7 * abs(val)) * 100:
        raise ValueError(f"numeric oracle did not converge: error estimate {err:.2e}")


def spec_subset(spec: ModelSpec, idx) -> ModelSpec:
    """Restriction of a spec to a subset of its sites (surfaces re-evaluate there)."""
    idx = list(idx)
    sites = spec.sites.subset(idx)
    fam = family_of(spec)
    if fam == "m1":
        return ModelM1Spec(spec.cov, sites, spec.alpha_surface, spec.tau,
                           spec.alpha_L, spec.alpha_U)
    if fam == "m2":
        return ModelM2Spec(spec.cov, sites, spec.alpha0, spec.beta_surface)
    if fam == "grouped_t":
        return GroupedTSpec(spec.cov, sites, spec.nu[idx])
    return GaussianSpec(spec.cov, sites)


# ---------------------------------------------------------------- two-site builders

def _two_sites() -> SiteSet:
    return SiteSet(("a", "b"), np.array([[0.0, 0.0], [1.0, 0.0]]))


def _cov_for_rho(rho: float) -> CovarianceModel:
    # sites at unit distance: exp(-(1/mu1)^1) = rho
    if not 0.0 < rho < 1.0:
        raise ValueError("pairwise correlation must be in (0, 1) for the powered-exponential model")
    return CovarianceModel(mu1=-1.0 / np.log(rho), mu2=1.0)


def two_site_m1(rho, alphas, tau, alpha_L, alpha_U) -> ModelM1Spec:
    a1, a2 = alphas
    return ModelM1Spec(_cov_for_rho(rho), _two_sites(),
                       (float(a1), float(a2) - float(a1), 0.0), tau, alpha_L, alpha_U)


def two_site_m2(rho, alpha0, betas) -> ModelM2Spec:
    b1, b2 = betas
    return ModelM2Spec(_cov_for_rho(rho), _two_sites(), alpha0,
                       (np.log(b1), np.log(b2 / b1), 0.0))


def two_site_grouped_t(rho, nu1, nu2) -> GroupedTSpec:
    return GroupedTSpec(_cov_for_rho(rho), _two_sites(), np.array([nu1, nu2], dtype=float))


# ---------------------------------------------------------------- serialization

def spec_to_dict(spec: ModelSpec) -> dict:
    fam = family_of(spec)
    out = {
        "family": fam,
        "cov": {"mu1": spec.cov.mu1, "mu2": spec.cov.mu2},
        "sites": {"ids": list(spec.sites.ids), "xy": spec.sites.xy.tolist()},
    }
    if fam == "m1":
        out.update(alpha_surface=list(spec.alpha_surface), tau=spec.tau,
                   alpha_L=spec.alpha_L, alpha_U=spec.alpha_U)
    elif fam == "m2":
        out.update(alpha0=spec.alpha0, beta_surface=list(spec.beta_surface))
    elif fam == "grouped_t":
        out.update(nu=spec.nu.tolist())
    return out


def spec_from_dict(doc: dict) -> ModelSpec:
    cov = CovarianceModel(float(doc["cov"]["mu1"]), float(doc["cov"]["mu2"]))
    sites = SiteSet(tuple(doc["sites"]["ids"]), np.asarray(doc["sites"]["xy"], dtype=float))
    fam = doc["family"]
    if fam == "m1":
        return ModelM1Spec(cov, sites, tuple(float(v) for v in doc["alpha_surface"]),
                           float(doc["tau"]), float(doc["alpha_L"]), float(doc["alpha_U"]))
    if fam == "m2":
        return ModelM2Spec(cov, sites, float(doc["alpha0"]),
                           tuple(float(v) for v in doc["beta_surface"]))
    if fam == "grouped_t":
        return GroupedTSpec(cov, sites, np.asarray(doc["nu"], dtype=float))
    if fam == "gaussian":
        return GaussianSpec(cov, sites)
    raise ValueError(f"unknown family {fam!r}")
