"""Command-line interface: simulate / fit / taildep / interpolate / diagnose / study.

File formats
------------
sites CSV        header ``id,s1,s2``, one row per site.
observations CSV header ``t,<site id>,...``, one row per time point.
fit JSON         the serialized FitResult plus the site set and tau.
config JSON      keys mirror the command-line flags; flags override the file.

All randomness derives from --seed through named substreams, so outputs are
byte-identical across reruns.  Numeric output carries 12 significant digits.
Exit codes: 0 success, 2 usage/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import inference as inf
from . import interpolate as itp
from . import marginals as mg
from . import models as md
from . import numkernel as nk
from . import taildep as td

FMT = "%.12g"


class InputError(Exception):
    """User-input problem: bad file, schema violation, inconsistent flags."""


def _fmt(x) -> str:
    return FMT % float(x)


# ---------------------------------------------------------------- file I/O

def read_sites(path) -> md.SiteSet:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read sites file {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["id", "s1", "s2"]:
        raise InputError(f"{path}: sites CSV must have header 'id,s1,s2'")
    ids, xy = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise InputError(f"{path}:{ln}: expected 3 columns")
        try:
            xy.append((float(row[1]), float(row[2])))
        except ValueError as exc:
            raise InputError(f"{path}:{ln}: non-numeric coordinate") from exc
        ids.append(row[0].strip())
    try:
        return md.SiteSet(tuple(ids), np.asarray(xy))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def read_obs(path, sites: md.SiteSet) -> md.Dataset:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read observations file {path}: {exc}") from exc
    if not rows or rows[0][0].strip() != "t":
        raise InputError(f"{path}: observations CSV must start with a 't' column")
    header = [c.strip() for c in rows[0][1:]]
    if list(header) != list(sites.ids):
        raise InputError(f"{path}: observation columns {header} do not match site ids {list(sites.ids)}")
    times, vals = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header) + 1:
            raise InputError(f"{path}:{ln}: expected {len(header) + 1} columns")
        try:
            times.append(float(row[0]))
            vals.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise InputError(f"{path}:{ln}: non-numeric value") from exc
    try:
        return md.Dataset(sites, np.asarray(vals), np.asarray(times))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_obs_csv(path, sites: md.SiteSet, matrix, times=None):
    matrix = np.asarray(matrix)
    times = np.arange(1, matrix.shape[0] + 1) if times is None else times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(sites.ids))
        for t, row in zip(times, matrix):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


# ---------------------------------------------------------------- param plumbing

_FAMILY_ALIASES = {"m1": "m1", "m2": "m2", "m3": "m3", "grouped-t": "grouped_t",
                   "grouped_t": "grouped_t", "gaussian": "gaussian"}

_DEFAULT_PARAMS = {
    # simulation-study design points; overridable through --params / --config
    "m1": {"mu1": 0.5, "mu2": 1.5, "alpha0": 5.0, "alpha1": -2.5, "alpha2": -2.5,
           "alpha_L": 3.0, "alpha_U": 2.0},
    "m3": {"mu1": 0.5, "mu2": 1.5, "alpha_L": 3.0, "alpha_U": 2.0},
    "m2": {"mu1": 0.5, "mu2": 1.5, "alpha0": 2.0, "beta0": 1.5, "beta1": -2.5, "beta2": -2.5},
    "gaussian": {"mu1": 0.5, "mu2": 1.5},
}


def _family(arg) -> str:
    try:
        return _FAMILY_ALIASES[arg]
    except KeyError:
        raise InputError(f"unknown family {arg!r}") from None


def _model_spec(family, sites, params, tau, nu=None):
    if family == "grouped_t":
        if nu is None:
            raise InputError("grouped-t needs --nu (comma-separated, one value or one per site)")
        nu = [float(v) for v in str(nu).split(",")]
        if len(nu) == 1:
            nu = nu * sites.d
        if len(nu) != sites.d:
            raise InputError("--nu must have one value or one per site")
        return md.GroupedTSpec(md.CovarianceModel(params["mu1"], params["mu2"]), sites,
                               np.asarray(nu))
    return inf.build_spec(params, family, sites, tau)


def _merge_params(family, args) -> dict:
    params = dict(_DEFAULT_PARAMS.get(family, {"mu1": 0.5, "mu2": 1.5}))
    if getattr(args, "config", None):
        params.update(_load_config(args.config).get("params", {}))
    if getattr(args, "params", None):
        try:
            params.update(json.loads(args.params))
        except json.JSONDecodeError as exc:
            raise InputError(f"--params is not valid JSON: {exc}") from exc
    return params


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------- subcommands

def _cmd_simulate(args) -> int:
    family = _family(args.family)
    sites = read_sites(args.sites)
    params = _merge_params(family, args)
    spec = _model_spec(family, sites, params, args.tau, args.nu)
    rng = nk.rng_stream(args.seed, "simulate", family)
    latent = md.simulate(spec, args.n, rng)
    if args.margins == "skewt":
        p = mg.SkewTParams(5.0, 1.0, 5.0, 5.0)
        u = np.column_stack([md.marginal_cdf(latent[:, j], j, spec) for j in range(sites.d)])
        latent = mg.skew_t_quantile(np.clip(u, 1e-12, 1 - 1e-12), p).reshape(u.shape)
    write_obs_csv(args.out, sites, latent)
    return 0


def _cmd_fit(args) -> int:
    family = _family(args.family)
    sites = read_sites(args.sites)
    data = read_obs(args.obs, sites)
    cfg = inf.FitConfig(max_iter=args.max_iter, restarts=args.restarts, seed=args.seed)
    marginal_doc = None
    if args.estimator == "semi":
        fr = inf.fit_semiparametric(data.obs, family, sites, tau=args.tau, config=cfg)
    elif args.marginal == "ar2":
        model, U = mg.fit_ar2(data)
        fr = inf.fit_copula_on_uniforms(U, family, sites, tau=args.tau, config=cfg)
        marginal_doc = {
            "type": "ar2",
            "coefficients": {k: getattr(model, k) for k in
                             ("c0_s", "c1_s", "c2_s", "c0_t", "c1_t", "c2_t", "lag1", "lag2")},
            "resid": {"xi": model.resid.xi, "omega": model.resid.omega,
                      "slant": model.resid.slant, "nu": model.resid.nu},
        }
    else:
        fr = inf.fit_ifm(data.obs, family, sites, tau=args.tau, config=cfg)
    doc = fr.to_dict()
    doc["tau"] = args.tau
    doc["sites"] = {"ids": list(sites.ids), "xy": sites.xy.tolist()}
    if marginal_doc:
        doc["marginal"] = marginal_doc
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


def _parse_grid(spec_str):
    try:
        lo, hi, step = (float(v) for v in spec_str.split(":"))
    except ValueError as exc:
        raise InputError(f"grid must be 'lo:hi:step', got {spec_str!r}") from exc
    if step <= 0 or hi < lo:
        raise InputError("grid needs step > 0 and hi >= lo")
    return np.arange(lo, hi + 0.5 * step, step)


def _taildep_pair_params(family, args, params):
    if family == "grouped_t":
        nu = [float(v) for v in str(args.nu or "4,4").split(",")]
        if len(nu) == 1:
            nu = nu * 2
        return {"nu": nu[:2]}
    if family == "m1":
        return {"alphas": (params.get("pair_alpha1", 0.0), params.get("pair_alpha2", 0.0)),
                "tau": args.tau, "alpha_L": params["alpha_L"], "alpha_U": params["alpha_U"]}
    if family == "m2":
        return {"alpha0": params["alpha0"],
                "betas": (params.get("pair_beta1", 0.3), params.get("pair_beta2", 0.3))}
    raise InputError("taildep curves support families m1, m2 and grouped-t")


def _cmd_taildep(args) -> int:
    family = _family(args.family)
    params = _merge_params(family, args)
    pair_params = _taildep_pair_params(family, args, params)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rho_grid = _parse_grid(args.rho_grid)
    lam_l, lam_u = td.lambda_curve(family, rho_grid, pair_params)
    _write_table(out_dir / "lambda_curve.csv", ["rho", "lambda_L", "lambda_U"],
                 list(zip(rho_grid, lam_l, lam_u)))
    if args.emit_curves:
        t_grid = np.linspace(0.0, 1.0, 101)
        a_up = td.pickands_curve(family, args.pickands_rho, pair_params, t_grid)
        rows = [[t, a] for t, a in zip(t_grid, a_up)]
        header = ["t", "A_upper"]
        if family == "m1":
            a_lo = td.pickands_curve(family, args.pickands_rho, pair_params, t_grid, lower=True)
            rows = [[t, a, b] for (t, a), b in zip(zip(t_grid, a_up), a_lo)]
            header = ["t", "A_upper", "A_lower"]
        _write_table(out_dir / "pickands_curve.csv", header, rows)
    return 0


def _fit_doc_to_task(doc, train_sites, target_xy, marginal, u_matrix, n_q):
    return itp.PredictionTask(
        family=doc["family"], params=doc["params"], marginal=marginal,
        train_sites=train_sites, u_matrix=u_matrix, target_xy=target_xy,
        tau=float(doc.get("tau", 0.0)), n_q=n_q)


def _cmd_interpolate(args) -> int:
    with open(args.fit) as fh:
        doc = json.load(fh)
    sites = read_sites(args.sites)
    data = read_obs(args.obs, sites)
    targets = read_sites(args.target_sites)
    target_data = None
    if args.target_obs:
        target_data = read_obs(args.target_obs, targets)
    model, U = mg.fit_ar2(data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for j, tid in enumerate(targets.ids):
        task = _fit_doc_to_task(doc, sites, tuple(targets.xy[j]), model, U, args.nq)
        pred = itp.interpolate_series(task, data)
        rows = []
        if target_data is not None:
            actual = target_data.obs[:, j]
            rows = [[t, p, a, p - a] for t, p, a in zip(data.times, pred, actual)]
            header = ["t", "predicted", "actual", "error"]
            summary.append([tid, itp.rmse_eval(pred, actual, burn_in=args.burn_in)])
        else:
            rows = [[t, p] for t, p in zip(data.times, pred)]
            header = ["t", "predicted"]
        _write_table(out_dir / f"pred_{tid}.csv", header, rows)
    if summary:
        _write_table(out_dir / "rmse.csv", ["site", "rmse"], summary)
    return 0


def _cmd_diagnose(args) -> int:
    sites = read_sites(args.sites)
    data = read_obs(args.obs, sites)
    if args.scale == "uniform":
        U = data.obs
        if np.any((U <= 0) | (U >= 1)):
            raise InputError("--scale uniform expects entries strictly inside (0,1)")
    elif args.scale == "ranks":
        U = mg.rank_transform(data.obs)
    else:
        _, U = mg.fit_ar2(data)
    diag = dg.pair_diagnostics(U, rng=nk.rng_stream(args.seed, "diagnose"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [[f"{sites.ids[j]}|{sites.ids[k]}", s, l, u_, n_, m3]
            for (j, k), s, l, u_, n_, m3 in zip(diag.pairs, diag.spearman, diag.rho_l,
                                                diag.rho_u, diag.rho_n, diag.mu3)]
    _write_table(out_dir / "pair_diagnostics.csv",
                 ["pair", "spearman", "rho_L", "rho_U", "rho_N", "mu3"], rows)
    scores = dg.normal_scores(U)
    write_obs_csv(out_dir / "normal_scores.csv", sites, scores)
    if args.fit:
        with open(args.fit) as fh:
            doc = json.load(fh)
        spec = _model_spec(doc["family"], sites, doc["params"], float(doc.get("tau", 0.0)))
        rng = nk.rng_stream(args.seed, "diagnose", "model")
        W = md.simulate(spec, args.sim_n, rng)
        Um = np.column_stack([md.marginal_cdf(W[:, j], j, spec) for j in range(sites.d)])
        diag_m = dg.pair_diagnostics(np.clip(Um, 1e-12, 1 - 1e-12),
                                     rng=nk.rng_stream(args.seed, "diagnose", "rho_n"))
        deltas = dg.model_fit_deltas(diag, diag_m)
        with open(out_dir / "deltas.json", "w") as fh:
            json.dump(deltas, fh, indent=2)
            fh.write("\n")
    return 0


_TABLE_ORDER = {
    "m1": ["mu1", "mu2", "alpha_L", "alpha_U", "alpha0", "alpha1", "alpha2"],
    "m2": ["mu1", "mu2", "alpha0", "beta0", "beta1", "beta2"],
}


def _cmd_study(args) -> int:
    family = _family(args.family)
    estimators = tuple(args.estimators.split(","))
    config = inf.StudyConfig(family=family, d=args.d, n_samples=args.n_samples,
                             replicates=args.replicates, seed=args.seed,
                             estimators=estimators, n_jobs=args.n_jobs)
    result = inf.run_simulation_study(config)
    order = _TABLE_ORDER[family]
    rows = [[est] + [result["rmse"][est][nm] for nm in order] for est in estimators]
    _write_table(args.out, ["estimator"] + order, rows)
    return 0


# ---------------------------------------------------------------- parser / entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paretomix",
                                description="Pareto-mixture spatial copulas: simulation, "
                                            "fitting, tail dependence and interpolation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="root seed (64-bit)")
        sp.add_argument("--tau", type=float, default=0.0,
                        help="m1 truncation parameter (fixed, not estimated)")
        sp.add_argument("--config", help="JSON config; flags override file values")
        sp.add_argument("--params", help="JSON object of model parameters")

    sp = sub.add_parser("simulate", help="simulate a latent field to CSV")
    common(sp)
    sp.add_argument("--family", required=True)
    sp.add_argument("--sites", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--nu", help="grouped-t degrees of freedom (comma separated)")
    sp.add_argument("--margins", choices=["latent", "skewt"], default="latent")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("fit", help="maximum-likelihood copula fit")
    common(sp)
    sp.add_argument("--family", required=True)
    sp.add_argument("--sites", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--estimator", choices=["ifm", "semi"], default="ifm")
    sp.add_argument("--marginal", choices=["skewt", "ar2"], default="skewt",
                    help="marginal model for the IFM estimator")
    sp.add_argument("--max-iter", type=int, default=400)
    sp.add_argument("--restarts", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("taildep", help="tail dependence curves for a site pair")
    common(sp)
    sp.add_argument("--family", required=True)
    sp.add_argument("--nu", help="grouped-t pair degrees of freedom, e.g. 4,4")
    sp.add_argument("--rho-grid", default="0.05:0.95:0.05")
    sp.add_argument("--pickands-rho", type=float, default=0.5)
    sp.add_argument("--emit-curves", action="store_true",
                    help="also write Pickands-function samples")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=_cmd_taildep)

    sp = sub.add_parser("interpolate", help="conditional-expectation interpolation")
    common(sp)
    sp.add_argument("--fit", required=True, help="fit JSON from the fit subcommand")
    sp.add_argument("--sites", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--target-sites", required=True)
    sp.add_argument("--target-obs")
    sp.add_argument("--nq", type=int, default=150)
    sp.add_argument("--burn-in", type=int, default=10)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=_cmd_interpolate)

    sp = sub.add_parser("diagnose", help="pairwise dependence diagnostics")
    common(sp)
    sp.add_argument("--sites", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--scale", choices=["ranks", "uniform", "ar2"], default="ranks")
    sp.add_argument("--fit", help="fit JSON for model-based deltas")
    sp.add_argument("--sim-n", type=int, default=20000)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=_cmd_diagnose)

    sp = sub.add_parser("study", help="simulation-study RMSE table")
    common(sp)
    sp.add_argument("--family", required=True)
    sp.add_argument("--d", type=int, default=10)
    sp.add_argument("--n-samples", type=int, default=500)
    sp.add_argument("--replicates", type=int, default=50)
    sp.add_argument("--estimators", default="ifm,semiparametric")
    sp.add_argument("--n-jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_study)

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except InputError as exc:
        print(f"paretomix: error[input]: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"paretomix: error[numeric]: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
