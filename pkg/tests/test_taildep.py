import numpy as np
import pytest
from scipy import integrate, stats

from paretomix import models as md
from paretomix import numkernel as nk
from paretomix import taildep as td


class TestExpPhiIntegral:
    def test_constant_integrand(self):
        assert td.exp_phi_integral(1.0, 0.0) == pytest.approx(0.8413447460685429, rel=1e-12)

    def test_limit_one(self):
        assert td.exp_phi_integral(40.0, 0.5) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("a,b", [(0.3, 0.7), (-1.2, 2.5), (1.5, -0.8), (0.0, -3.0)])
    def test_matches_quadrature(self, a, b):
        ex, _ = integrate.quad(lambda v: float(nk.norm_cdf(a + b * v)) * np.exp(-v), 0, np.inf)
        assert td.exp_phi_integral(a, b) == pytest.approx(ex, abs=1e-10)


class TestStdfNumeric:
    def test_margin_reduction(self):
        spec = md.two_site_grouped_t(0.5, 4.0, 4.0)
        assert td.stdf_numeric([1.0, 0.0], spec) == pytest.approx(1.0, abs=1e-10)
        assert td.stdf_numeric([0.0, 2.5], spec) == pytest.approx(2.5, abs=1e-10)

    def test_comonotone_limit(self):
        # lambda_U = 2 T_{nu+1}(-sqrt((nu+1)(1-rho)/(1+rho))) needs 1-rho ~ 1e-6
        # before l(1,1) is within 2e-3 of its comonotone limit
        spec = md.two_site_grouped_t(1.0 - 2e-6, 4.0, 4.0)
        assert td.stdf_numeric([1.0, 1.0], spec) == pytest.approx(1.0, abs=2e-3)

    def test_zeta_formula_grouped_t(self):
        # closed form zeta = 2^{nu/2-1} Gamma(nu/2 + 1/2) / sqrt(pi); 0.5 at nu=2
        from scipy.special import gamma
        for nu in [0.7, 2.0, 4.0, 8.0]:
            closed = 2 ** (nu / 2 - 1) * gamma(nu / 2 + 0.5) / np.sqrt(np.pi)
            numeric = td._zeta_numeric(nu, lambda t, l: float(nk.norm_cdf(-t)), 0)
            assert numeric == pytest.approx(closed, rel=1e-9)
            if nu == 2.0:
                assert closed == pytest.approx(0.5, rel=1e-12)

    def test_homogeneity(self):
        spec = md.two_site_grouped_t(0.5, 3.0, 6.0)
        base = td.stdf_numeric([0.7, 0.4], spec)
        for c in [0.5, 2.0, 10.0]:
            assert td.stdf_numeric([0.7 * c, 0.4 * c], spec) == pytest.approx(c * base, rel=1e-6)

    def test_bounds(self):
        spec = md.two_site_grouped_t(0.5, 4.0, 4.0)
        rng = np.random.default_rng(0)
        for _ in range(5):
            w = rng.uniform(0.1, 3.0, 2)
            ell = td.stdf_numeric(w, spec)
            assert max(w) - 1e-9 <= ell <= w.sum() + 1e-9

    def test_gaussian_is_sum(self):
        sites = md.SiteSet(("a", "b"), np.array([[0.0, 0.0], [1.0, 0.0]]))
        spec = md.GaussianSpec(md.CovarianceModel(0.5, 1.5), sites)
        assert td.stdf_numeric([0.6, 1.1], spec) == pytest.approx(1.7, abs=1e-12)


class TestGroupedTExtremalT:
    @pytest.mark.parametrize("nu", [2.0, 4.0, 8.0])
    @pytest.mark.parametrize("rho", [0.2, 0.5, 0.8])
    def test_matches_extremal_t_oracle(self, nu, rho):
        # equal-df grouped-t limit: lambda_U = 2 T_{nu+1}(-sqrt((nu+1)(1-rho)/(1+rho)))
        spec = md.two_site_grouped_t(rho, nu, nu)
        lam = 2.0 - td.stdf_numeric([1.0, 1.0], spec)
        oracle = 2.0 * stats.t.cdf(-np.sqrt((nu + 1) * (1 - rho) / (1 + rho)), nu + 1)
        assert lam == pytest.approx(oracle, abs=1e-3)

    def test_oracle_validated_by_block_maxima(self):
        # validate the extremal-t identity itself before trusting it
        nu, rho = 4.0, 0.5
        spec = md.two_site_grouped_t(rho, nu, nu)
        x = md.simulate(spec, 1_000_000, nk.rng_stream(40, "bm"))
        from paretomix.marginals import rank_transform
        u = rank_transform(x)
        b = 1000
        m = u.reshape(-1, b, 2).max(axis=1)
        z = b * (1.0 - m.max(axis=1))
        theta = 1.0 / np.mean(z)
        oracle = 2.0 * stats.t.cdf(-np.sqrt((nu + 1) * (1 - rho) / (1 + rho)), nu + 1)
        assert 2.0 - theta == pytest.approx(oracle, abs=0.05)


class TestStdfM1Pair:
    def test_margin(self):
        spec = md.two_site_m1(0.5, (0.0, 3.0), 0.0, 0.8, 2.0)
        assert td.stdf_m1_pair(0.0, 1.3, spec) == 1.3

    def test_husler_reiss_reduction(self):
        spec = md.two_site_m1(0.5, (0.0, 0.0), 0.3, 1.0, 2.0)
        g = td._m1_pair_geometry(spec, 0, 1)
        expect = 2.0 * float(nk.norm_cdf(0.5 * g.lam))
        assert td.stdf_m1_pair(1.0, 1.0, spec) == pytest.approx(expect, rel=1e-12)
        assert td.stdf_numeric([1.0, 1.0], spec) == pytest.approx(expect, rel=1e-5)

    @pytest.mark.parametrize("alphas,tau,aL,aU,rho", [
        ((0.0, 3.0), 0.0, 0.8, 2.0, 0.5),
        ((-3.0, 3.0), 0.0, 0.8, 2.0, 0.5),
        ((1.0, -2.0), 0.4, 1.5, 1.0, 0.3),
        ((2.0, 2.0), -0.3, 0.5, 3.0, 0.8),
    ])
    def test_matches_numeric(self, alphas, tau, aL, aU, rho):
        spec = md.two_site_m1(rho, alphas, tau, aL, aU)
        rng = np.random.default_rng(1)
        for _ in range(3):
            w1, w2 = rng.uniform(0.2, 2.0, 2)
            closed = td.stdf_m1_pair(w1, w2, spec)
            numeric = td.stdf_numeric([w1, w2], spec)
            assert closed == pytest.approx(numeric, rel=1e-4)

    def test_comonotone_degenerate(self):
        spec = md.two_site_m1(1.0 - 1e-15, (1.0, 1.0), 0.0, 1.0, 2.0)
        assert td.stdf_m1_pair(0.7, 1.2, spec) == pytest.approx(1.2, abs=1e-9)


class TestStdfM2Pair:
    def test_margin(self):
        spec = md.two_site_m2(0.5, 1.0, (0.3, 0.5))
        assert td.stdf_m2_pair(1.4, 0.0, spec) == 1.4

    def test_mixed_regime_exact_sum(self):
        spec = md.two_site_m2(0.5, 1.0, (0.5, 2.0))
        assert td.stdf_m2_pair(1.0, 1.0, spec) == 2.0
        assert td.stdf_m2_pair(0.3, 0.9, spec) == 1.2

    @pytest.mark.parametrize("alpha0,betas,rho", [
        (1.0, (0.3, 0.5), 0.5),   # both products > 1: swapped branch
        (0.5, (2.0, 3.0), 0.5),   # both products < 1: direct branch
        (1.0, (0.3, 0.3), 0.6),   # equal products: Husler-Reiss limit
        (2.0, (4.0, 8.0), 0.3),
    ])
    def test_matches_numeric(self, alpha0, betas, rho):
        spec = md.two_site_m2(rho, alpha0, betas)
        rng = np.random.default_rng(2)
        for _ in range(3):
            w1, w2 = rng.uniform(0.2, 2.0, 2)
            closed = td.stdf_m2_pair(w1, w2, spec)
            numeric = td.stdf_numeric([w1, w2], spec)
            assert closed == pytest.approx(numeric, rel=1e-4)

    def test_displayed_four_term_formula(self):
        # cross-check the identity-based evaluation against the four-term display
        alpha0, betas, rho = 0.5, (2.0, 3.0), 0.5
        spec = md.two_site_m2(rho, alpha0, betas)
        r1, r2 = alpha0 / betas[0], alpha0 / betas[1]
        nu1, nu2 = 1 / betas[0], 1 / betas[1]
        om = spec.omega.matrix[0, 1]
        psi = np.sqrt(nu1 ** 2 - 2 * om * nu1 * nu2 + nu2 ** 2)
        xi1, xi2 = 1 / (1 - r1), 1 / (1 - r2)
        # orient so site i has the smaller product (r2 < r1 here)
        w_i, w_k = 0.8, 1.5
        ri, rk, xii, xik = r2, r1, xi2, xi1
        wt_i, wt_k = w_i / xii, w_k / xik
        var_i = psi / 2 + np.log(wt_i / wt_k) / psi
        var_k = psi / 2 + np.log(wt_k / wt_i) / psi
        phi = nk.norm_cdf
        four = (w_i * phi(var_i) + w_k * phi(var_k)
                + w_k * (wt_k / wt_i) ** (1 / (xik / xii - 1))
                * np.exp(0.5 * psi ** 2 * (xik / xii) / (xik / xii - 1) ** 2)
                * phi(-var_k - psi / (xik / xii - 1))
                - w_i * (wt_i / wt_k) ** (1 / (xii / xik - 1))
                * np.exp(0.5 * psi ** 2 * (xii / xik) / (xii / xik - 1) ** 2)
                * phi(var_i + psi / (xii / xik - 1)))
        assert td.stdf_m2_pair(w_k, w_i, spec) == pytest.approx(float(four), rel=1e-10)


class TestPickands:
    def test_endpoints(self):
        spec = md.two_site_m1(0.5, (0.0, 3.0), 0.0, 0.8, 2.0)
        ell = td.pair_stdf_fn(spec)
        assert td.pickands(0.0, ell) == 1.0
        assert td.pickands(1.0, ell) == 1.0

    def test_independence_flat(self):
        ell = lambda w1, w2: w1 + w2
        for t in np.linspace(0, 1, 11):
            assert td.pickands(t, ell) == pytest.approx(1.0, abs=1e-12)

    def test_bounds_and_convexity(self):
        for spec in [md.two_site_m1(0.5, (0.0, 3.0), 0.0, 0.8, 2.0),
                     md.two_site_m2(0.5, 1.0, (0.3, 0.9)),
                     md.two_site_grouped_t(0.5, 5.0, 10.0)]:
            ell = td.pair_stdf_fn(spec)
            t = np.linspace(0, 1, 99)
            a = np.array([td.pickands(v, ell) for v in t])
            assert np.all(a <= 1.0 + 1e-12)
            assert np.all(a >= np.maximum(t, 1 - t) - 1e-12)
            d2 = np.diff(a, 2)
            assert np.min(d2) >= -1e-7

    def test_asymmetry_witness(self):
        spec = md.two_site_m1(0.5, (0.0, 3.0), 0.0, 0.8, 2.0)
        ell = td.pair_stdf_fn(spec)
        t = np.linspace(0.01, 0.99, 51)
        a = np.array([td.pickands(v, ell) for v in t])
        assert np.max(np.abs(a - a[::-1])) > 1e-3

    def test_exchangeable_symmetry(self):
        spec = md.two_site_grouped_t(0.5, 4.0, 4.0)
        ell = td.pair_stdf_fn(spec)
        t = np.linspace(0.01, 0.99, 25)
        a = np.array([td.pickands(v, ell) for v in t])
        assert np.max(np.abs(a - a[::-1])) < 1e-8


class TestTailDepCoeffs:
    def test_gaussian_zero(self):
        sites = md.SiteSet(("a", "b"), np.array([[0.0, 0.0], [1.0, 0.0]]))
        spec = md.GaussianSpec(md.CovarianceModel(0.5, 1.5), sites)
        assert td.tail_dep_coeffs(spec) == (0.0, 0.0)

    def test_m2_lower_zero(self):
        spec = md.two_site_m2(0.5, 1.0, (0.3, 0.5))
        lam_l, lam_u = td.tail_dep_coeffs(spec)
        assert lam_l == 0.0
        assert lam_u > 0.0

    def test_m2_mixed_regime_upper_zero(self):
        spec = md.two_site_m2(0.5, 1.0, (0.5, 2.0))
        lam_l, lam_u = td.tail_dep_coeffs(spec)
        assert lam_u == 0.0

    def test_grouped_t_radial_symmetry(self):
        spec = md.two_site_grouped_t(0.5, 4.0, 4.0)
        lam_l, lam_u = td.tail_dep_coeffs(spec)
        assert lam_l == lam_u

    def test_m1_reflection(self):
        spec = md.two_site_m1(0.5, (0.0, 3.0), 0.0, 0.8, 2.0)
        lam_l, lam_u = td.tail_dep_coeffs(spec)
        refl = spec.reflected()
        assert lam_l == pytest.approx(2.0 - td.stdf_m1_pair(1.0, 1.0, refl), abs=1e-12)
        assert lam_l != pytest.approx(lam_u, abs=1e-3)

    def test_corollary_positive_upper_tail(self):
        # any m1/grouped-t pair with positive latent correlation has lambda_U > 0
        for rho in [0.05, 0.3, 0.7]:
            for spec in [md.two_site_m1(rho, (1.0, -1.0), 0.0, 1.0, 2.0),
                         md.two_site_grouped_t(rho, 3.0, 7.0)]:
                _, lam_u = td.tail_dep_coeffs(spec)
                assert lam_u > 1e-4


class TestExtremalCoefficient:
    def test_near_independence_approaches_d(self):
        spec = md.two_site_grouped_t(0.02, 8.0, 8.0)
        assert td.extremal_coefficient(spec) == pytest.approx(2.0, abs=2e-2)

    def test_comonotone_limit(self):
        spec = md.two_site_grouped_t(1.0 - 1e-5, 4.0, 4.0)
        assert td.extremal_coefficient(spec) == pytest.approx(1.0, abs=2e-2)

    def test_numeric_matches_block_maxima_d3(self):
        rng = np.random.default_rng(5)
        sites = md.SiteSet.random(3, rng)
        spec = md.GroupedTSpec(md.CovarianceModel(0.6, 1.2), sites, np.array([3.0, 4.0, 6.0]))
        num = td.extremal_coefficient(spec, method="numeric")
        mc = td.extremal_coefficient(spec, method="monte-carlo",
                                     rng=nk.rng_stream(50, "bm3"), n=1_000_000, block=1000)
        assert num == pytest.approx(mc, abs=0.05)
        assert 1.0 <= num <= 3.0


class TestSummaryAndCurves:
    def test_tail_summary_invariants(self):
        spec = md.two_site_grouped_t(0.5, 4.0, 8.0)
        s = td.tail_summary(spec)
        assert s.lambda_u.shape == (1,)
        assert 1.0 <= s.extremal_coeff <= 2.0
        assert np.all(s.pickands_a <= 1.0 + 1e-12)

    def test_lambda_curve_monotone_in_rho(self):
        lam_l, lam_u = td.lambda_curve("grouped_t", [0.1, 0.5, 0.9], {"nu": [4.0, 4.0]})
        assert np.all(np.diff(lam_u) > 0)
        assert np.allclose(lam_l, lam_u)

    def test_lambda_curve_endpoint_limit(self):
        # comonotone limit: lambda_U -> 1 as rho -> 1
        _, lam_u = td.lambda_curve("grouped_t", [0.999], {"nu": [4.0, 4.0]})
        assert lam_u[0] > 0.9

    def test_m1_figure_setting_curves(self):
        params = {"alphas": (0.0, 3.0), "tau": 0.0, "alpha_L": 0.8, "alpha_U": 2.0}
        a_up = td.pickands_curve("m1", 0.5, params, np.linspace(0, 1, 21))
        a_lo = td.pickands_curve("m1", 0.5, params, np.linspace(0, 1, 21), lower=True)
        assert a_up[0] == 1.0 and a_up[-1] == 1.0
        assert not np.allclose(a_up, a_lo)
