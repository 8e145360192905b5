"""Empirical dependence diagnostics: tail-weighted measures, model-fit deltas,
pairwise difference skewness, normal-scores export.

The tail-weighted measure is a weighted Pearson correlation of the uniforms
with product weights ((1-u1)(1-u2))^4 for the lower tail (reflected for the
upper).  Any fixed choice yields valid relative comparisons; this one is held
fixed across all models and reported as such by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import numkernel as nk

__all__ = [
    "PairDiagnostics", "tail_weighted_dep", "pair_diagnostics",
    "model_fit_deltas", "pairwise_skewness", "normal_scores",
    "gaussian_implied_tailweight",
]

_TAIL_POWER = 4


@dataclass(frozen=True)
class PairDiagnostics:
    """Per-pair dependence summaries over all d(d-1)/2 site pairs."""

    pairs: tuple
    spearman: np.ndarray
    rho_l: np.ndarray
    rho_u: np.ndarray
    rho_n: np.ndarray
    mu3: np.ndarray


def _weighted_corr(x, y, w):
    sw = np.sum(w)
    mx = np.sum(w * x) / sw
    my = np.sum(w * y) / sw
    cxy = np.sum(w * (x - mx) * (y - my))
    cxx = np.sum(w * (x - mx) ** 2)
    cyy = np.sum(w * (y - my) ** 2)
    if cxx <= 0.0 or cyy <= 0.0:
        raise ValueError("degenerate (constant) column in tail-weighted correlation")
    return float(cxy / np.sqrt(cxx * cyy))


def tail_weighted_dep(u, tail: str = "lower") -> float:
    """Tail-weighted dependence of an (n, 2) uniform sample.

    Satisfies rho_U(u) = rho_L(1 - u) by construction and equals 1 for a
    comonotone pair.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != 2 or u.shape[0] < 50:
        raise ValueError("need an (n, 2) matrix with n >= 50")
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("entries must lie strictly inside (0,1)")
    if tail == "upper":
        u = 1.0 - u
    elif tail != "lower":
        raise ValueError("tail must be 'lower' or 'upper'")
    w = ((1.0 - u[:, 0]) * (1.0 - u[:, 1])) ** _TAIL_POWER
    return _weighted_corr(u[:, 0], u[:, 1], w)


def gaussian_implied_tailweight(u_pair, rng=None, n_sim: int = 100_000) -> float:
    """Tail-weighted value implied by a normal copula at the pair's
    normal-scores correlation (identical in both tails by symmetry)."""
    z = nk.norm_quantile(np.clip(np.asarray(u_pair, dtype=float), 1e-12, 1 - 1e-12))
    rho = float(np.corrcoef(z[:, 0], z[:, 1])[0, 1])
    rho = min(max(rho, -0.999), 0.999)
    if rng is None:
        rng = nk.rng_stream(0, "rho_n")
    g = rng.standard_normal((n_sim, 2))
    z1 = g[:, 0]
    z2 = rho * g[:, 0] + np.sqrt(1.0 - rho * rho) * g[:, 1]
    v = nk.norm_cdf(np.column_stack([z1, z2]))
    return tail_weighted_dep(np.clip(v, 1e-12, 1 - 1e-12), "lower")


def pairwise_skewness(u) -> np.ndarray:
    """d x d antisymmetric matrix of difference-series skewness.

    mu3[j, k] is the standardized third central moment of u_j - u_k; the
    diagonal is zero and zero-variance off-diagonal pairs are flagged NaN.
    """
    u = np.asarray(u, dtype=float)
    n, d = u.shape
    if n < 50:
        raise ValueError("need at least 50 rows")
    out = np.zeros((d, d))
    for j in range(d):
        for k in range(j + 1, d):
            diff = u[:, j] - u[:, k]
            sd = np.std(diff)
            if sd < 1e-14:
                out[j, k] = out[k, j] = np.nan
                continue
            m3 = float(np.mean((diff - np.mean(diff)) ** 3) / sd ** 3)
            out[j, k] = m3
            out[k, j] = -m3
    return out


def pair_diagnostics(u, rng=None) -> PairDiagnostics:
    """All pairwise diagnostics of a uniform-scale matrix."""
    u = np.asarray(u, dtype=float)
    n, d = u.shape
    pairs = tuple((j, k) for j in range(d) for k in range(j + 1, d))
    sp = np.empty(len(pairs))
    rl = np.empty(len(pairs))
    ru = np.empty(len(pairs))
    rn = np.empty(len(pairs))
    mu3_m = pairwise_skewness(u)
    mu3 = np.array([mu3_m[j, k] for j, k in pairs])
    if rng is None:
        rng = nk.rng_stream(0, "diagnostics")
    for m, (j, k) in enumerate(pairs):
        pair = u[:, [j, k]]
        sp[m] = float(stats.spearmanr(pair[:, 0], pair[:, 1]).statistic)
        rl[m] = tail_weighted_dep(pair, "lower")
        ru[m] = tail_weighted_dep(pair, "upper")
        rn[m] = gaussian_implied_tailweight(pair, rng=rng)
    return PairDiagnostics(pairs=pairs, spearman=sp, rho_l=rl, rho_u=ru, rho_n=rn, mu3=mu3)


def model_fit_deltas(empirical: PairDiagnostics, model: PairDiagnostics) -> dict:
    """Average absolute differences of the pairwise summaries (Spearman, lower
    and upper tail weights, difference skewness)."""
    if empirical.pairs != model.pairs:
        raise ValueError("pair sets do not match")
    return {
        "delta_rho": float(np.mean(np.abs(empirical.spearman - model.spearman))),
        "delta_l": float(np.mean(np.abs(empirical.rho_l - model.rho_l))),
        "delta_u": float(np.mean(np.abs(empirical.rho_u - model.rho_u))),
        "delta_3": float(np.nanmean(np.abs(empirical.mu3 - model.mu3))),
    }


def normal_scores(u) -> np.ndarray:
    """Matrix of normal scores for scatter export."""
    return nk.norm_quantile(np.clip(np.asarray(u, dtype=float), 1e-12, 1.0 - 1e-12))
