"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`.  The heavy criteria
(6 and 7) parallelize replicates over two workers.
"""

import multiprocessing as mp
import time

import numpy as np
import pytest
from scipy import stats

from paretomix import diagnostics as dg
from paretomix import inference as inf
from paretomix import interpolate as itp
from paretomix import marginals as mg
from paretomix import models as md
from paretomix import numkernel as nk
from paretomix import taildep as td


def _report(k, name, ok, detail=""):
    line = f"ACCEPTANCE {k} ({name}): {'PASS' if ok else 'FAIL'} {detail}"
    print(line, flush=True)
    assert ok, line


def _random_m1(rng, d):
    sites = md.SiteSet.random(d, rng)
    return md.ModelM1Spec(
        md.CovarianceModel(rng.uniform(0.3, 1.5), rng.uniform(0.8, 1.9)), sites,
        tuple(rng.uniform(-2.0, 2.0, 3)), rng.uniform(-0.5, 0.5),
        rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0))


def _random_m2(rng, d):
    sites = md.SiteSet.random(d, rng)
    return md.ModelM2Spec(
        md.CovarianceModel(rng.uniform(0.3, 1.5), rng.uniform(0.8, 1.9)), sites,
        rng.uniform(0.5, 3.0),
        (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))


class TestCriterion1:
    def test_closed_form_oracle_equivalence(self):
        t0 = time.time()
        rng = nk.rng_stream(101, "acc1")
        worst = 0.0
        for family, make, pdf in [("m1", _random_m1, md.m1_joint_pdf),
                                  ("m2", _random_m2, md.m2_joint_pdf)]:
            count = 0
            for d in (1, 2, 3):
                for _ in range(34 if d == 1 else 33):
                    spec = make(rng, d)
                    z = md.simulate(spec, 1, nk.rng_stream(102, "pt", family, str(count)))[0]
                    closed = float(pdf(z, spec))
                    oracle = md.pdf_numeric_oracle(z, spec)
                    rel = abs(closed - oracle) / oracle
                    worst = max(worst, rel)
                    count += 1
            assert count == 100
        dt = time.time() - t0
        _report(1, "closed form vs numeric oracle", worst <= 1e-5 and dt <= 120,
                f"worst rel {worst:.2e}, {dt:.0f}s")


class TestCriterion2:
    def test_marginal_cdf_monte_carlo(self):
        t0 = time.time()
        n = 10_000_000
        rng = nk.rng_stream(103, "acc2")
        spec1 = md.two_site_m1(0.5, (2.0, -1.0), 0.0, 3.0, 2.0)
        w1 = (rng.standard_normal(n)
              + 2.0 * nk.sample_trunc_normal(rng, 0.0, size=n)
              + 2.0 * rng.exponential(1.0, n) - 3.0 * rng.exponential(1.0, n))
        spec2 = md.two_site_m2(0.5, 2.0, (0.3, 0.8))
        w2 = rng.standard_normal(n) + 2.0 * rng.exponential(1.0, n) + 0.3 * rng.exponential(1.0, n)
        zs1 = np.quantile(w1, np.linspace(0.02, 0.98, 20))
        zs2 = np.quantile(w2, np.linspace(0.02, 0.98, 20))
        worst = 0.0
        for z in zs1:
            worst = max(worst, abs(md.m1_marginal_cdf(z, 0, spec1) - float(np.mean(w1 <= z))))
        for z in zs2:
            worst = max(worst, abs(md.m2_marginal_cdf(z, 0, spec2) - float(np.mean(w2 <= z))))
        dt = time.time() - t0
        _report(2, "marginal CDF vs 1e7 Monte Carlo", worst <= 3e-4 and dt <= 180,
                f"worst abs {worst:.2e}, {dt:.0f}s")


_FIG1 = [((4.0, 4.0),), ((5.0, 10.0),), ((1.0, 3.0),)]
_FIG2 = [(0.0, 0.0), (0.0, 3.0), (-3.0, 3.0)]
_FIG3 = [(0.3, 0.3), (0.3, 0.9), (0.1, 0.95)]


class TestCriterion3:
    def test_stdf_closed_vs_numeric_and_pickands(self):
        t0 = time.time()
        rng = nk.rng_stream(105, "acc3")
        worst = 0.0
        for _ in range(50):
            spec = _random_m1(rng, 2)
            w = rng.uniform(0.15, 2.5, 2)
            c = td.stdf_m1_pair(w[0], w[1], spec)
            s = td.stdf_numeric(w, spec)
            worst = max(worst, abs(c - s) / s)
        for k in range(50):
            spec = _random_m2(rng, 2)
            r = spec.alpha0 / spec.beta_vec
            if (r[0] < 1.0) != (r[1] < 1.0) or np.any(np.abs(r - 1) < 1e-3):
                continue  # mixed regime: numeric route not defined (exact sum)
            w = rng.uniform(0.15, 2.5, 2)
            c = td.stdf_m2_pair(w[0], w[1], spec)
            s = td.stdf_numeric(w, spec)
            worst = max(worst, abs(c - s) / s)
        # Pickands bounds and convexity for every figure parameter setting
        grid = np.linspace(0.0, 1.0, 99)
        curves = []
        for (nu,) in _FIG1:
            curves.append(td.pair_stdf_fn(md.two_site_grouped_t(0.5, nu[0], nu[1])))
        for alphas in _FIG2:
            spec = md.two_site_m1(0.5, alphas, 0.0, 0.8, 2.0)
            curves.append(td.pair_stdf_fn(spec))
            curves.append(td.pair_stdf_fn(spec.reflected()))
        for betas in _FIG3:
            curves.append(td.pair_stdf_fn(md.two_site_m2(0.5, 1.0, betas)))
        ok_shape = True
        min_d2 = np.inf
        for ell in curves:
            a = np.array([td.pickands(t, ell) for t in grid])
            ok_shape &= bool(np.all(a <= 1.0 + 1e-12))
            ok_shape &= bool(np.all(a >= np.maximum(grid, 1 - grid) - 1e-12))
            min_d2 = min(min_d2, float(np.min(np.diff(a, 2))))
        dt = time.time() - t0
        _report(3, "stdf closed vs Prop-1 numeric + Pickands shape",
                worst <= 1e-4 and ok_shape and min_d2 >= -1e-7 and dt <= 120,
                f"worst rel {worst:.2e}, min 2nd diff {min_d2:.1e}, {dt:.0f}s")


class TestCriterion4:
    def test_tail_regime_propositions(self):
        t0 = time.time()
        # (i) mixed-regime m2: lambda_U = 0 exactly and empirical exceedance small;
        # finite-level convergence to the asymptotic regime needs the two sites'
        # dominant tail drivers well separated and moderate bulk dependence
        spec_mix = md.two_site_m2(0.3, 1.0, (0.2, 5.0))
        lam_l, lam_u = td.tail_dep_coeffs(spec_mix)
        exact_zero = lam_u == 0.0
        w = md.simulate(spec_mix, 10_000_000, nk.rng_stream(107, "acc4", "mix"))
        u = mg.rank_transform(w)
        q = 0.999
        joint = float(np.mean((u[:, 0] > q) & (u[:, 1] > q)))
        cond_up = joint / (1.0 - q)
        # (ii) m2 lower tail: the Gaussian part drives the lower corner, whose
        # finite-level conditional decays like q^((1-rho)/(1+rho))
        spec_low = md.two_site_m2(0.1, 1.0, (0.3, 0.5))
        w2 = md.simulate(spec_low, 1_000_000, nk.rng_stream(107, "acc4", "low"))
        u2 = mg.rank_transform(w2)
        ql = 0.01
        cond_lo = float(np.mean((u2[:, 0] < ql) & (u2[:, 1] < ql))) / ql
        # (iii) m1 and grouped-t pairs report positive upper tail dependence
        min_lam = np.inf
        for rho in [0.05, 0.3, 0.6, 0.9]:
            for spec in [md.two_site_m1(rho, (1.0, -1.0), 0.0, 1.0, 2.0),
                         md.two_site_m1(rho, (0.0, 0.0), 0.3, 2.0, 0.5),
                         md.two_site_grouped_t(rho, 2.0, 6.0),
                         md.two_site_grouped_t(rho, 8.0, 8.0)]:
                min_lam = min(min_lam, td.tail_dep_coeffs(spec)[1])
        dt = time.time() - t0
        ok = exact_zero and cond_up < 0.05 and cond_lo < 0.05 and min_lam > 1e-4 and dt <= 300
        _report(4, "tail regime propositions", ok,
                f"cond_up {cond_up:.3f}, cond_lo {cond_lo:.3f}, min lam_U {min_lam:.2e}, {dt:.0f}s")


class TestCriterion5:
    def test_grouped_t_extremal_t_crosscheck(self):
        t0 = time.time()
        # validate the extremal-t identity by block maxima once
        nu0, rho0 = 4.0, 0.5
        spec0 = md.two_site_grouped_t(rho0, nu0, nu0)
        x = md.simulate(spec0, 1_000_000, nk.rng_stream(109, "acc5"))
        u = mg.rank_transform(x)
        m = u.reshape(-1, 1000, 2).max(axis=1)
        z = 1000 * (1.0 - m.max(axis=1))
        theta_bm = 1.0 / float(np.mean(z))
        oracle0 = 2.0 * stats.t.cdf(-np.sqrt((nu0 + 1) * (1 - rho0) / (1 + rho0)), nu0 + 1)
        bm_ok = abs((2.0 - theta_bm) - oracle0) < 0.05
        worst = 0.0
        for nu in (2.0, 4.0, 8.0):
            for rho in (0.2, 0.5, 0.8):
                spec = md.two_site_grouped_t(rho, nu, nu)
                lam = 2.0 - td.stdf_numeric([1.0, 1.0], spec)
                oracle = 2.0 * stats.t.cdf(-np.sqrt((nu + 1) * (1 - rho) / (1 + rho)), nu + 1)
                worst = max(worst, abs(lam - oracle))
        # zeta closed form vs numeric
        from scipy.special import gamma
        worst_zeta = 0.0
        for nu in (2.0, 4.0, 8.0):
            closed = 2 ** (nu / 2 - 1) * gamma(nu / 2 + 0.5) / np.sqrt(np.pi)
            numeric = td._zeta_numeric(nu, lambda t, l: float(nk.norm_cdf(-t)), 0)
            worst_zeta = max(worst_zeta, abs(closed - numeric))
        dt = time.time() - t0
        ok = bm_ok and worst <= 1e-3 and worst_zeta <= 1e-8 and dt <= 180
        _report(5, "grouped-t vs extremal-t oracle", ok,
                f"worst lam diff {worst:.2e}, worst zeta diff {worst_zeta:.2e}, {dt:.0f}s")


_T1_IFM = {"mu1": 0.13, "mu2": 0.04, "alpha_L": 0.38, "alpha_U": 0.34,
           "alpha0": 1.51, "alpha1": 0.78, "alpha2": 0.75}
_T2_IFM = {"mu1": 0.04, "mu2": 0.03, "alpha0": 0.16,
           "beta0": 0.18, "beta1": 0.31, "beta2": 0.28}


class TestCriterion6:
    @pytest.mark.parametrize("family,targets", [("m1", _T1_IFM), ("m2", _T2_IFM)])
    def test_reduced_table_reproduction(self, family, targets):
        t0 = time.time()
        cfg = inf.StudyConfig(family=family, d=10, n_samples=500, replicates=50,
                              n_jobs=2)
        res = inf.run_simulation_study(cfg)
        rmse_ifm = res["rmse"]["ifm"]
        rmse_semi = res["rmse"]["semiparametric"]
        in_band = {nm: 0.5 * v <= rmse_ifm[nm] <= 2.0 * v for nm, v in targets.items()}
        semi_worse = sum(rmse_semi[nm] >= rmse_ifm[nm] for nm in targets)
        majority = semi_worse > len(targets) / 2
        dt = time.time() - t0
        detail = (" ".join(f"{nm}={rmse_ifm[nm]:.3f}[{0.5*v:.3f},{2*v:.3f}]"
                           for nm, v in targets.items())
                  + f" | semi worse on {semi_worse}/{len(targets)}, {dt/60:.1f} min")
        _report(6, f"reduced Table reproduction ({family})",
                all(in_band.values()) and majority and dt <= 1800, detail)


_C7_TRUTH = {"mu1": 0.5, "mu2": 1.5, "alpha0": 5.0, "alpha1": -2.5, "alpha2": -2.5,
             "alpha_L": 3.0, "alpha_U": 2.0}
_C7_AR2 = {"c0": 8.0, "c1s": 2.0, "c2s": -1.0, "c1t": 0.04, "c2t": -2e-4,
           "l1": 0.6, "l2": 0.2}
_C7_RESID = mg.SkewTParams(0.0, 1.5, 4.0, 6.0)


def _c7_one_rep(rep):
    n, d_train, d_test = 153, 30, 5
    rng = nk.rng_stream(111, "acc7", f"rep{rep}")
    sites_all = md.SiteSet.random(d_train + d_test, rng)
    spec_all = inf.build_spec(_C7_TRUTH, "m1", sites_all, tau=0.0)
    W = md.simulate(spec_all, n, rng)
    U_all = np.clip(np.column_stack(
        [md.marginal_cdf(W[:, j], j, spec_all) for j in range(sites_all.d)]), 1e-9, 1 - 1e-9)
    eps = mg.skew_t_quantile(U_all, _C7_RESID).reshape(U_all.shape)
    c = _C7_AR2
    T = np.zeros((n, sites_all.d))
    t_idx = np.arange(1, n + 1, dtype=float)
    for t in range(n):
        mean = (c["c0"] + c["c1s"] * sites_all.xy[:, 0] + c["c2s"] * sites_all.xy[:, 1]
                + c["c1t"] * t_idx[t] + c["c2t"] * t_idx[t] ** 2)
        lag1 = T[t - 1] if t >= 1 else 0.0
        lag2 = T[t - 2] if t >= 2 else 0.0
        T[t] = mean + c["l1"] * lag1 + c["l2"] * lag2 + eps[t]
    train = sites_all.subset(range(d_train))
    data_train = md.Dataset(train, T[:, :d_train], t_idx)
    model, U_hat = mg.fit_ar2(data_train)
    fit_cfg = inf.FitConfig(max_iter=220, restarts=0, seed=rep)
    fr1 = inf.fit_copula_on_uniforms(U_hat, "m1", train, config=fit_cfg)
    fr4 = inf.fit_copula_on_uniforms(U_hat, "gaussian", train, config=fit_cfg)
    rmse1 = []
    rmse4 = []
    for k in range(d_test):
        target_xy = tuple(sites_all.xy[d_train + k])
        actual = T[:, d_train + k]
        for fr, acc in ((fr1, rmse1), (fr4, rmse4)):
            task = itp.PredictionTask(family=fr.family, params=fr.params, marginal=model,
                                      train_sites=train, u_matrix=U_hat,
                                      target_xy=target_xy, tau=0.0)
            pred = itp.interpolate_series(task, data_train)
            acc.append(itp.rmse_eval(pred, actual, burn_in=10))
    return float(np.mean(rmse1)), float(np.mean(rmse4)), fr1.bic, fr4.bic


class TestCriterion7:
    def test_synthetic_pipeline_m1_beats_gaussian(self):
        t0 = time.time()
        reps = 25
        with mp.get_context("fork").Pool(2) as pool:
            results = pool.map(_c7_one_rep, range(reps))
        rmse_wins = sum(r1 <= r4 for r1, r4, _, _ in results)
        bic_wins = sum(b1 < b4 for _, _, b1, b4 in results)
        dt = time.time() - t0
        ok = rmse_wins >= 0.8 * reps and bic_wins >= 0.9 * reps and dt <= 1200
        _report(7, "synthetic interpolation pipeline", ok,
                f"RMSE wins {rmse_wins}/{reps}, BIC wins {bic_wins}/{reps}, {dt/60:.1f} min")


class TestCriterion8:
    def test_stability_suite(self):
        t0 = time.time()
        z = np.linspace(-40.0, 40.0, 81)
        ok = True
        # marginal CDFs and log densities over the stress grid
        for aL in (1e-3, 1.0, 1e3):
            for aU in (1e-3, 1.0, 1e3):
                spec = md.two_site_m1(0.5, (2.0, -3.0), 0.0, aL, aU)
                ok &= bool(np.all(np.isfinite(md.m1_marginal_cdf(z, 0, spec))))
                ok &= bool(np.all(np.isfinite(md.marginal_logpdf(z, 0, spec))))
                ok &= bool(np.all(np.isfinite(
                    md.m1_joint_logpdf(np.column_stack([z, np.clip(z + 1, -40, 40)]), spec))))
        for b in (1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2):
            spec = md.two_site_m2(0.5, 1.0, (b, min(b * 1.7, 120.0)))
            ok &= bool(np.all(np.isfinite(md.m2_marginal_cdf(z, 0, spec))))
            ok &= bool(np.all(np.isfinite(md.marginal_logpdf(z, 0, spec))))
            ok &= bool(np.all(np.isfinite(
                md.m2_joint_logpdf(np.column_stack([z, np.clip(z + 0.5, -40, 40)]), spec))))
        # copula log-likelihood stays finite at stress parameters on sane data
        rng = nk.rng_stream(113, "acc8")
        sites = md.SiteSet.random(4, rng)
        U = np.clip(rng.random((25, 4)), 0.01, 0.99)
        for aL in (1e-3, 1.0, 1e3):
            nat = {"mu1": 0.5, "mu2": 1.5, "alpha0": 2.0, "alpha1": -1.0, "alpha2": -1.0,
                   "alpha_L": aL, "alpha_U": 1.0}
            ok &= np.isfinite(inf.copula_loglik(U, nat, "m1", sites))
        # extreme-argument examples of the stability kernels
        v = nk.stable_exp_phi(700.0, -40.0)
        ok &= np.isfinite(v) and v > 0
        r = nk.bvn_ratio_approx(0.0, -30.0, -0.4)
        ok &= np.isfinite(r) and r > 0
        ok &= np.isfinite(nk.bvn_ratio_approx(1.0, -6.0, 0.5))
        dt = time.time() - t0
        _report(8, "stability stress grid", ok and dt <= 60, f"{dt:.0f}s")
