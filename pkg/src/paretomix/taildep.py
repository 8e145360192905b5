"""Stable tail dependence functions, Pickands curves and tail coefficients.

Closed forms cover pairs of the m1 and m2 families; the general-purpose
numeric route integrates the survival of the latent field against the
normalized mixing measure and works for any family (d <= 5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import numkernel as nk
from .models import (
    GaussianSpec, GroupedTSpec, ModelM1Spec, ModelM2Spec, ModelSpec,
    family_of, marginal_cdf, simulate,
    two_site_grouped_t, two_site_m1, two_site_m2,
)
from .numkernel import bvn_cdf, norm_cdf, norm_logcdf, norm_pdf, stable_exp_phi

__all__ = [
    "PairGeometry", "TailSummary", "exp_phi_integral",
    "stdf_m1_pair", "stdf_m2_pair", "stdf_numeric",
    "pickands", "tail_dep_coeffs", "extremal_coefficient",
    "pickands_curve", "lambda_curve", "tail_summary",
]


def exp_phi_integral(a: float, b: float) -> float:
    """int_0^inf Phi(a + b v) e^{-v} dv in closed form.

    Equals Phi(a) + exp(a/b + 1/(2 b^2)) Phi(-a - 1/b) for b > 0, the mirrored
    expression for b < 0, and Phi(a) when b = 0.
    """
    a = float(a)
    b = float(b)
    if b == 0.0:
        return float(norm_cdf(a))
    expo = a / b + 0.5 / (b * b)
    if b > 0.0:
        return float(norm_cdf(a) + stable_exp_phi(expo, -a - 1.0 / b))
    return float(norm_cdf(a) - stable_exp_phi(expo, a + 1.0 / b))


# ---------------------------------------------------------------- pair geometry

@dataclass(frozen=True)
class PairGeometry:
    """Distances entering the pairwise stable tail dependence functions.

    psi is the variogram-type distance of the latent field, lam additionally
    carries the squared skew gap; norm_i/norm_k are the per-site weight
    normalizers dividing w_i and w_k.
    """

    psi: float
    lam: float
    rho_i: float
    rho_k: float
    norm_i: float
    norm_k: float


def _m1_pair_geometry(spec: ModelM1Spec, i: int, k: int) -> PairGeometry:
    om = spec.omega.matrix
    nu = 1.0 / spec.alpha_U
    a_i = float(spec.alpha_vec[i]) * nu
    a_k = float(spec.alpha_vec[k]) * nu
    psi = np.sqrt(max(nu * nu * (2.0 - 2.0 * om[i, k]), 0.0))
    lam = np.sqrt(psi * psi + (a_i - a_k) ** 2)
    if lam > 0:
        rho_i = (a_i - a_k) / lam
        rho_k = (a_k - a_i) / lam
    else:
        rho_i = rho_k = 0.0
    return PairGeometry(psi=psi, lam=lam, rho_i=rho_i, rho_k=rho_k,
                        norm_i=float(norm_cdf(spec.tau + a_i)),
                        norm_k=float(norm_cdf(spec.tau + a_k)))


def stdf_m1_pair(w1, w2, spec: ModelM1Spec, pair=(0, 1)) -> float:
    """Closed-form pair stable tail dependence function of the m1 family.

    l(w1, w2) = w1 I_i + w2 I_k with I_l a bivariate-normal CDF ratio built
    from the pair geometry; reduces to the Husler-Reiss form for equal skews.
    """
    i, k = pair
    w1 = float(w1)
    w2 = float(w2)
    if w1 < 0 or w2 < 0:
        raise ValueError("weights must be nonnegative")
    if w1 == 0.0 or w2 == 0.0:
        return w1 + w2
    g = _m1_pair_geometry(spec, i, k)
    if g.lam < 1e-12:
        # comonotone limit; the normalizers coincide when lam = 0
        return max(w1, w2)
    wt_i = w1 / g.norm_i
    wt_k = w2 / g.norm_k
    tau = spec.tau
    nu = 1.0 / spec.alpha_U
    a_i = float(spec.alpha_vec[i]) * nu
    a_k = float(spec.alpha_vec[k]) * nu
    li = np.log(wt_i / wt_k) / g.lam
    I_i = bvn_cdf(0.5 * g.lam + li, tau + a_i, g.rho_i) / g.norm_i
    I_k = bvn_cdf(0.5 * g.lam - li, tau + a_k, g.rho_k) / g.norm_k
    return float(w1 * I_i + w2 * I_k)


def _m2_pair_products(spec: ModelM2Spec, i: int, k: int):
    # regime products alpha_l * nu_l with nu_l = 1/beta_l
    b = spec.beta_vec
    return spec.alpha0 / float(b[i]), spec.alpha0 / float(b[k])


def stdf_m2_pair(w_i, w_k, spec: ModelM2Spec, pair=(0, 1)) -> float:
    """Closed-form pair stable tail dependence function of the m2 family.

    Regime dispatch on r_l = alpha0/beta_l: both below one uses the direct
    exponential-mixing form, both above one the swapped parameterization, and
    mixed regimes are asymptotically independent (w_i + w_k).
    """
    i, k = pair
    w_i = float(w_i)
    w_k = float(w_k)
    if w_i < 0 or w_k < 0:
        raise ValueError("weights must be nonnegative")
    if w_i == 0.0 or w_k == 0.0:
        return w_i + w_k
    r_i, r_k = _m2_pair_products(spec, i, k)
    if r_i == 1.0 or r_k == 1.0:
        raise ValueError("alpha0 equal to beta at a site: tail regime undefined")
    if (r_i < 1.0) != (r_k < 1.0):
        return w_i + w_k
    om = spec.omega.matrix
    if r_i < 1.0:
        nu_i, nu_k = 1.0 / spec.beta_vec[i], 1.0 / spec.beta_vec[k]
        p_i, p_k = r_i, r_k
    else:
        # swap alpha_l <-> 1/nu_l: new products are the reciprocals
        nu_i = nu_k = 1.0 / spec.alpha0
        p_i, p_k = 1.0 / r_i, 1.0 / r_k
    psi = float(np.sqrt(max(nu_i * nu_i - 2.0 * om[i, k] * nu_i * nu_k + nu_k * nu_k, 0.0)))
    wt_i = w_i * (1.0 - p_i)
    wt_k = w_k * (1.0 - p_k)
    if psi < 1e-12:
        if abs(p_i - p_k) < 1e-14:
            return max(w_i, w_k)
        # comonotone latent field but different tail indices
        psi = 1e-12
    a_i = 0.5 * psi + np.log(wt_i / wt_k) / psi
    a_k = 0.5 * psi + np.log(wt_k / wt_i) / psi
    b_i = (p_i - p_k) / (psi * (1.0 - p_i))
    b_k = (p_k - p_i) / (psi * (1.0 - p_k))
    return float(w_i * exp_phi_integral(a_i, b_i) + w_k * exp_phi_integral(a_k, b_k))


# ---------------------------------------------------------------- numeric route

_V_RULE = np.polynomial.legendre.leggauss(160)


def _latent_survival_fns(spec: ModelSpec):
    """Return (nu, sf_marginal, sf_joint) for the latent field of a spec.

    sf_marginal(t, l) = P(Z_l > t); sf_joint(ts) = P(Z_1 > t_1 or ... or not all below)
    is expressed as 1 - F_Z(ts).  Values of ts are on the latent scale.
    """
    fam = family_of(spec)
    d = spec.d

    if fam == "grouped_t":
        nu = np.asarray(spec.nu, dtype=float)
        om = spec.omega

        def sf_marg(t, l):
            return float(norm_cdf(-t))

        if d == 2:
            rho = float(om.matrix[0, 1])

            def one_minus_fz(ts):
                a, b = ts
                return float(norm_cdf(-a) + norm_cdf(-b) - nk._bvnu(a, b, rho))
        else:
            from scipy.stats import multivariate_normal
            mvn = multivariate_normal(mean=np.zeros(d), cov=om.matrix, allow_singular=False)

            def one_minus_fz(ts):
                return float(1.0 - mvn.cdf(np.asarray(ts)))

        return nu, sf_marg, one_minus_fz

    if fam == "m1":
        alpha = spec.alpha_vec
        tau = spec.tau
        nu = np.full(d, 1.0 / spec.alpha_U)
        om = spec.omega.matrix
        # conditional on the truncated-normal factor v, ln Z is Gaussian
        lo = -tau
        hi = lo + max(9.0, 45.0 / max(1.0, abs(tau)))
        vx = 0.5 * (hi - lo) * (_V_RULE[0] + 1.0) + lo
        vw = 0.5 * (hi - lo) * _V_RULE[1] * norm_pdf(vx) / float(norm_cdf(tau))

        def sf_marg(t, l):
            if t <= 0.0:
                return 1.0
            return float(np.sum(vw * norm_cdf(-(np.log(t) - alpha[l] * vx))))

        if d == 2:
            rho = float(om[0, 1])

            def one_minus_fz(ts):
                if np.any(ts <= 0.0):
                    return 1.0
                lt = np.log(ts)
                a = lt[0] - alpha[0] * vx
                b = lt[1] - alpha[1] * vx
                sf = norm_cdf(-a) + norm_cdf(-b) - nk._bvnu(a, b, rho)
                return float(np.sum(vw * sf))
        else:
            from scipy.stats import multivariate_normal
            mvn = multivariate_normal(mean=np.zeros(d), cov=om, allow_singular=False)

            def one_minus_fz(ts):
                if np.any(ts <= 0.0):
                    return 1.0
                lt = np.log(ts)
                vals = [mvn.cdf(lt - alpha * v) for v in vx]
                return float(1.0 - np.sum(vw * np.asarray(vals)))

        return nu, sf_marg, one_minus_fz

    if fam == "m2":
        r = spec.alpha0 / spec.beta_vec
        if np.all(r < 1.0):
            mix = np.full(d, spec.alpha0)
            nu = 1.0 / spec.beta_vec
        elif np.all(r > 1.0):
            mix = spec.beta_vec.copy()
            nu = np.full(d, 1.0 / spec.alpha0)
        else:
            raise ValueError("numeric stdf for m2 requires a single tail regime across sites")
        om = spec.omega.matrix
        lo, hi = 0.0, 45.0
        vx = 0.5 * (hi - lo) * (_V_RULE[0] + 1.0) + lo
        vw = 0.5 * (hi - lo) * _V_RULE[1] * np.exp(-vx)

        def sf_marg(t, l):
            if t <= 0.0:
                return 1.0
            return float(np.sum(vw * norm_cdf(-(np.log(t) - mix[l] * vx))))

        if d == 2:
            rho = float(om[0, 1])

            def one_minus_fz(ts):
                if np.any(ts <= 0.0):
                    return 1.0
                lt = np.log(ts)
                a = lt[0] - mix[0] * vx
                b = lt[1] - mix[1] * vx
                sf = norm_cdf(-a) + norm_cdf(-b) - nk._bvnu(a, b, rho)
                return float(np.sum(vw * sf))
        else:
            from scipy.stats import multivariate_normal
            mvn = multivariate_normal(mean=np.zeros(d), cov=om, allow_singular=False)

            def one_minus_fz(ts):
                if np.any(ts <= 0.0):
                    return 1.0
                lt = np.log(ts)
                vals = [mvn.cdf(lt - mix * v) for v in vx]
                return float(1.0 - np.sum(vw * np.asarray(vals)))

        return nu, sf_marg, one_minus_fz

    raise ValueError(f"numeric stdf not defined for family {fam!r}")


def _zeta_numeric(nu_l: float, sf_marg, l: int) -> float:
    # zeta_l = nu_l int_0^inf sf(t) t^{nu_l - 1} dt  (substituted form of the spec integral)
    val, err = integrate.quad(lambda t: sf_marg(t, l) * t ** (nu_l - 1.0),
                              0.0, np.inf, epsabs=1e-11, epsrel=1e-10, limit=400)
    if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1.0):
        raise ValueError("zeta quadrature did not converge")
    return nu_l * val


def stdf_numeric(w, spec: ModelSpec, epsrel: float = 1e-8):
    """Stable tail dependence function by quadrature of the survival integrand.

    l(w) = int_0^inf [1 - F_Z((y zeta_1/w_1)^{1/nu_1}, ...)] dy with zeta_l
    computed numerically.  A Gaussian spec returns sum(w) (its extreme-value
    limit is independence).
    """
    w = np.asarray(w, dtype=float).ravel()
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if family_of(spec) == "gaussian":
        return float(np.sum(w))
    if spec.d > 5:
        raise ValueError("numeric stdf supports d <= 5 only")
    active = np.flatnonzero(w > 0)
    if active.size == 0:
        return 0.0
    if active.size == 1:
        return float(w[active[0]])
    if active.size != w.size:
        from .models import spec_subset
        return stdf_numeric(w[active], spec_subset(spec, active))
    nu, sf_marg, one_minus_fz = _latent_survival_fns(spec)
    zeta = np.array([_zeta_numeric(float(nu[l]), sf_marg, l) for l in range(w.size)])
    inv_nu = 1.0 / nu

    def integrand(y):
        ts = (y * zeta / w) ** inv_nu
        return one_minus_fz(ts)

    # for d >= 3 the inner multivariate normal CDF carries quasi-Monte-Carlo
    # noise, so the outer rule cannot certify tight tolerances
    noisy = w.size > 2
    val, err = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-10,
                              epsrel=max(epsrel, 1e-5) if noisy else epsrel,
                              limit=150 if noisy else 400)
    tol = 5e-3 if noisy else 1e-4
    if not np.isfinite(val) or err > tol * max(abs(val), 1e-3):
        raise ValueError(f"stdf quadrature did not converge (error estimate {err:.2e})")
    return float(val)


# ---------------------------------------------------------------- derived quantities

def pickands(t, pair_stdf) -> float:
    """Pickands dependence function A(t) = l(1 - t, t) of a pair stdf callable."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0 or t == 1.0:
        return 1.0
    return float(pair_stdf(1.0 - t, t))


def pair_stdf_fn(spec: ModelSpec, pair=(0, 1)):
    """Best available pair stdf for a spec: closed form when it exists, else numeric."""
    fam = family_of(spec)
    if fam == "m1":
        return lambda w1, w2: stdf_m1_pair(w1, w2, spec, pair)
    if fam == "m2":
        return lambda w1, w2: stdf_m2_pair(w1, w2, spec, pair)
    if fam == "gaussian":
        return lambda w1, w2: w1 + w2
    i, k = pair
    sub = GroupedTSpec(spec.cov, spec.sites.subset([i, k]), spec.nu[[i, k]])
    return lambda w1, w2: stdf_numeric(np.array([w1, w2]), sub)


def tail_dep_coeffs(spec: ModelSpec, pair=(0, 1)):
    """(lambda_L, lambda_U) for a pair of sites.

    lambda_U = 2 - l(1,1); the lower coefficient comes from the reflected
    construction: the m1 reflection negates the skews and swaps the tail
    parameters, the grouped-t law is radially symmetric, and the m2 and
    gaussian families have no lower tail dependence.
    """
    fam = family_of(spec)
    if fam == "gaussian":
        return 0.0, 0.0
    ell = pair_stdf_fn(spec, pair)
    lam_u = max(0.0, 2.0 - ell(1.0, 1.0))
    if fam == "m1":
        refl = pair_stdf_fn(spec.reflected(), pair)
        lam_l = max(0.0, 2.0 - refl(1.0, 1.0))
    elif fam == "m2":
        lam_l = 0.0
    else:
        lam_l = lam_u
    return lam_l, lam_u


def extremal_coefficient(spec: ModelSpec, subset=None, method: str = "numeric",
                         rng=None, n: int = 1_000_000, block: int = 1000) -> float:
    """theta = l(1, ..., 1) over a subset of sites, numeric or by block maxima."""
    d0 = spec.d
    idx = list(range(d0)) if subset is None else list(subset)
    if method == "numeric":
        if not 2 <= len(idx) <= 5:
            raise ValueError("numeric extremal coefficient needs 2 <= |subset| <= 5")
        from .models import spec_subset
        sub = spec_subset(spec, idx) if len(idx) != d0 else spec
        return stdf_numeric(np.ones(len(idx)), sub)
    if method != "monte-carlo":
        raise ValueError("method must be 'numeric' or 'monte-carlo'")
    if rng is None:
        rng = np.random.default_rng(0)
    from .marginals import rank_transform
    x = simulate(spec, n, rng)[:, idx]
    u = rank_transform(x)
    nb = n // block
    m = u[: nb * block].reshape(nb, block, len(idx)).max(axis=1).max(axis=1)
    z = block * (1.0 - m)
    return float(1.0 / np.mean(z))


# ---------------------------------------------------------------- summaries & curves

@dataclass(frozen=True)
class TailSummary:
    """Pairwise tail coefficients, one Pickands curve per pair, extremal coefficient."""

    pairs: tuple
    lambda_l: np.ndarray
    lambda_u: np.ndarray
    pickands_t: np.ndarray
    pickands_a: np.ndarray
    extremal_coeff: float


def tail_summary(spec: ModelSpec, t_grid=None, extremal_subset=None) -> TailSummary:
    d = spec.d
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, 101)
    t_grid = np.asarray(t_grid, dtype=float)
    pairs = tuple((i, k) for i in range(d) for k in range(i + 1, d))
    lam_l = np.empty(len(pairs))
    lam_u = np.empty(len(pairs))
    curves = np.empty((len(pairs), t_grid.size))
    for m, (i, k) in enumerate(pairs):
        lam_l[m], lam_u[m] = tail_dep_coeffs(spec, (i, k))
        ell = pair_stdf_fn(spec, (i, k))
        curves[m] = [pickands(t, ell) for t in t_grid]
    if extremal_subset is None:
        extremal_subset = list(range(min(d, 5)))
    theta = extremal_coefficient(spec, extremal_subset, method="numeric") if d >= 2 else 1.0
    return TailSummary(pairs=pairs, lambda_l=lam_l, lambda_u=lam_u,
                       pickands_t=t_grid, pickands_a=curves, extremal_coeff=theta)


def _two_site_for(family: str, rho: float, params: dict) -> ModelSpec:
    if family == "m1":
        return two_site_m1(rho, params["alphas"], params.get("tau", 0.0),
                           params["alpha_L"], params["alpha_U"])
    if family == "m2":
        return two_site_m2(rho, params["alpha0"], params["betas"])
    if family == "grouped_t":
        nu = params["nu"]
        return two_site_grouped_t(rho, nu[0], nu[1])
    raise ValueError(f"no pair construction for family {family!r}")


def pickands_curve(family: str, rho: float, params: dict, t_grid, lower: bool = False):
    """A(t) samples for a two-site model; lower=True reflects an m1 pair first."""
    spec = _two_site_for(family, rho, params)
    if lower:
        if family != "m1":
            raise ValueError("lower-tail Pickands curves are defined for the m1 family")
        spec = spec.reflected()
    ell = pair_stdf_fn(spec, (0, 1))
    return np.array([pickands(t, ell) for t in np.asarray(t_grid, dtype=float)])


def lambda_curve(family: str, rho_grid, params: dict):
    """(lambda_L, lambda_U) along a grid of pairwise correlations."""
    rho_grid = np.asarray(rho_grid, dtype=float)
    lam_l = np.empty(rho_grid.size)
    lam_u = np.empty(rho_grid.size)
    for j, rho in enumerate(rho_grid):
        spec = _two_site_for(family, float(rho), params)
        lam_l[j], lam_u[j] = tail_dep_coeffs(spec, (0, 1))
    return lam_l, lam_u
