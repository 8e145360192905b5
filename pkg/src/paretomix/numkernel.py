"""Scalar special functions, bivariate normal CDF, quadrature, root finding and sampling.

Everything here is pure and reentrant; random sampling takes an explicit
numpy Generator owned by the caller.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import log_ndtr, ndtr, ndtri

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
SQRT_2PI = np.sqrt(2.0 * np.pi)


def norm_pdf(z):
    return np.exp(-0.5 * np.asarray(z, dtype=float) ** 2) / SQRT_2PI


def norm_logpdf(z):
    return -0.5 * np.asarray(z, dtype=float) ** 2 - LOG_SQRT_2PI


def norm_cdf(z):
    return ndtr(z)


def norm_logcdf(z):
    return log_ndtr(z)


def norm_quantile(u):
    return ndtri(u)


def norm_funcs(z):
    """Return (pdf, cdf, log_cdf) of the standard normal at z.

    log_cdf stays finite and accurate far into the left tail (scipy's
    log_ndtr switches to the Mills-ratio asymptotic expansion there).
    """
    z = np.asarray(z, dtype=float)
    return norm_pdf(z), ndtr(z), log_ndtr(z)


def stable_exp_phi(x, y):
    """exp(x) * Phi(y) computed as exp(x + ln Phi(y)) to avoid overflow."""
    return np.exp(np.asarray(x, dtype=float) + log_ndtr(y))


# ---------------------------------------------------------------- bivariate normal

# Gauss-Legendre half-rules used by the Genz/Drezner-Wesolowsky algorithm.
_GW = {
    6: np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    12: np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
    20: np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
}
_GX = {
    6: np.array([0.9324695142031522, 0.6612093864662645, 0.2386191860831970]),
    12: np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    20: np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
}


def _bvnu_central(h, k, r):
    # |r| < 0.925 branch: single Gauss series on the arcsine transform
    n = 6 if abs(r) < 0.3 else (12 if abs(r) < 0.75 else 20)
    w, x = _GW[n], _GX[n]
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = np.arcsin(r)
    sn1 = np.sin(0.5 * asr * (1.0 - x))
    sn2 = np.sin(0.5 * asr * (1.0 + x))
    hk_ = hk[..., None]
    hs_ = hs[..., None]
    terms = np.exp((sn1 * hk_ - hs_) / (1.0 - sn1 * sn1)) * w
    terms += np.exp((sn2 * hk_ - hs_) / (1.0 - sn2 * sn2)) * w
    return terms.sum(axis=-1) * asr / (4.0 * np.pi) + ndtr(-h) * ndtr(-k)


def _bvnu_near_one(h, k, r):
    # 0.925 <= |r| < 1 branch (Genz 2004 Taylor-corrected form)
    w, x = _GW[20], _GX[20]
    if r < 0.0:
        k = -k
    hk = h * k
    bvn = np.zeros_like(h)
    as_ = (1.0 - r) * (1.0 + r)
    a = np.sqrt(as_)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -0.5 * (bs / as_ + hk)
    m = asr > -100.0
    bvn[m] = (a * np.exp(asr[m])
              * (1.0 - c[m] * (bs[m] - as_) * (1.0 - d[m] * bs[m] / 5.0) / 3.0
                 + c[m] * d[m] * as_ * as_ / 5.0))
    m = hk > -100.0
    if np.any(m):
        b = np.sqrt(bs[m])
        sp = SQRT_2PI * ndtr(-b / a)
        bvn[m] -= np.exp(-0.5 * hk[m]) * sp * b * (1.0 - c[m] * bs[m] * (1.0 - d[m] * bs[m] / 5.0) / 3.0)
    ah = 0.5 * a
    nodes = np.concatenate([ah * (1.0 - x), ah * (1.0 + x)]) ** 2
    wts = np.concatenate([w, w])
    rs = np.sqrt(1.0 - nodes)
    asr2 = -0.5 * (bs[..., None] / nodes + hk[..., None])
    c_ = c[..., None]
    d_ = d[..., None]
    sp2 = 1.0 + c_ * nodes * (1.0 + d_ * nodes)
    ep = np.exp(-hk[..., None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
    contrib = np.where(asr2 > -100.0, ah * wts * np.exp(asr2) * (ep - sp2), 0.0)
    bvn += contrib.sum(axis=-1)
    bvn = -bvn / (2.0 * np.pi)
    if r > 0.0:
        return bvn + ndtr(-np.maximum(h, k))
    out = -bvn
    adj = np.where(k > h, ndtr(-h) - ndtr(-k), 0.0)
    return out + adj


def _bvnu(h, k, r):
    """P(X > h, Y > k) for standard bivariate normal with correlation r (scalar r)."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if r == 0.0:
        return ndtr(-h) * ndtr(-k)
    if r >= 1.0:
        return ndtr(-np.maximum(h, k))
    if r <= -1.0:
        return np.maximum(0.0, ndtr(-h) - ndtr(k))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        if abs(r) < 0.925:
            p = _bvnu_central(h, k, r)
        else:
            p = _bvnu_near_one(h, k, r)
        # infinite arguments reduce to marginals
        p = np.where(np.isneginf(h), ndtr(-k), p)
        p = np.where(np.isneginf(k), np.where(np.isneginf(h), 1.0, ndtr(-h)), p)
        p = np.where(np.isposinf(h) | np.isposinf(k), 0.0, p)
    return np.clip(p, 0.0, 1.0)


def bvn_cdf(x, y, rho):
    """P(X <= x, Y <= y) for a standard bivariate normal with correlation rho.

    Accepts array x, y with scalar rho; vectorized over points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    x, y = np.broadcast_arrays(x, y)
    p = _bvnu(-x, -y, float(rho))
    return float(p[0]) if scalar else p


_RATIO_RULES = {n: np.polynomial.legendre.leggauss(n) for n in (48, 64, 160)}


def _hazard(z):
    # phi(z)/Phi(z)
    return np.exp(norm_logpdf(z) - log_ndtr(z))


def _log_bvn_ratio(x, y, rho, n=64):
    """ln of Phi_rho(x, y)/phi(y) for y < 0, via the exact 1-D integral

        R = (1/|y|) int_0^inf exp(-u - u^2/(2 y^2)) Phi(c + b u/|y|) du,

    c = (x - rho*y)/sqrt(1-rho^2), b = rho/sqrt(1-rho^2); support located by
    Newton on the log-integrand, then 160-point Gauss-Legendre with log-space
    accumulation.  Vectorized over x, y (scalar rho).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    sq = np.sqrt(max(1e-300, (1.0 - rho) * (1.0 + rho)))
    c = (x - rho * y) / sq
    ay = -y
    b2 = rho / (sq * ay)
    lnphic = log_ndtr(c)
    lam0 = 1.0 + np.maximum(0.0, -b2 * _hazard(c)) + 45.0 / (2.0 * ay * ay)
    umax = 45.0 / lam0
    for _ in range(6):
        ln_drop = lnphic - (-umax - 0.5 * (umax / ay) ** 2 + log_ndtr(c + b2 * umax))
        dL = -1.0 - umax / ay**2 + b2 * _hazard(c + b2 * umax)
        step = (45.0 - ln_drop) / np.where(dL < 0.0, dL, -1.0)
        umax = np.clip(umax - step, 0.25 * umax, 4.0 * umax)
    gl_nodes, gl_wts = _RATIO_RULES[n]
    un = 0.5 * umax[..., None] * (gl_nodes + 1.0)
    wn = 0.5 * umax[..., None] * gl_wts
    logv = -un - 0.5 * (un / ay[..., None]) ** 2 + log_ndtr(c[..., None] + b2[..., None] * un)
    m = logv.max(axis=-1)
    acc = np.sum(wn * np.exp(logv - m[..., None]), axis=-1)
    return m + np.log(np.maximum(acc, 1e-300)) - np.log(ay)


def bvn_ratio_approx(x, y, rho):
    """Phi_rho(x, y)/phi(y), stable for large negative y (intended y <= -5).

    Exact up to quadrature error (~1e-10 relative), so it also serves as the
    tail path of the log bivariate CDF.
    """
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    out = np.exp(_log_bvn_ratio(x, y, float(rho), n=160))
    return float(out[0]) if scalar else out


def log_bvn_cdf(x, y, rho, ratio_n=64):
    """ln Phi_rho(x, y), finite deep into the joint tail (|rho| < 1)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.broadcast_arrays(np.atleast_1d(x), np.atleast_1d(y))
    p = bvn_cdf(x, y, rho)
    out = np.log(np.maximum(p, 1e-300))
    # the direct algorithm is absolutely accurate (~5e-16); once p is small its
    # log is unreliable, and min(x, y) < 0 is then guaranteed, so switch to the
    # tail-exact ratio representation conditioned on the smaller argument
    need = p < 1e-9
    if np.any(need):
        lo = np.minimum(x[need], y[need])
        hi = np.maximum(x[need], y[need])
        lo = np.minimum(lo, -1e-8)
        out[need] = norm_logpdf(lo) + _log_bvn_ratio(hi, lo, float(rho), n=ratio_n)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre nodes/weights on (lo, hi)."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def integrate(self, f):
        return float(np.sum(self.weights * f(self.nodes)))


def gauss_legendre(n: int, lo: float, hi: float) -> QuadratureRule:
    """n-point Gauss-Legendre rule on (lo, hi); exact for polynomials of degree <= 2n-1."""
    if not lo < hi:
        raise ValueError(f"invalid interval ({lo}, {hi})")
    if n < 1:
        raise ValueError("need n >= 1")
    u, w = np.polynomial.legendre.leggauss(int(n))
    nodes = 0.5 * (hi - lo) * (u + 1.0) + lo
    weights = 0.5 * (hi - lo) * w
    return QuadratureRule(nodes=nodes, weights=weights, interval=(float(lo), float(hi)))


# ---------------------------------------------------------------- correlation matrix

class CorrelationMatrix:
    """Dense correlation matrix with cached Cholesky factor, inverse and log-determinant."""

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have unit diagonal")
        self.matrix = 0.5 * (m + m.T)
        self.dim = m.shape[0]
        try:
            self._cho = cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own type
            raise ValueError(f"correlation matrix not positive definite: {exc}") from exc
        except Exception as exc:
            raise ValueError(f"correlation matrix not positive definite: {exc}") from exc
        self.cholesky = np.tril(self._cho[0])
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.cholesky))))
        self.inverse = cho_solve(self._cho, np.eye(self.dim))

    def solve(self, b):
        return cho_solve(self._cho, b)

    def quad_form(self, z):
        """Row-wise z_i^T Omega^{-1} z_i for z of shape (..., d)."""
        z = np.asarray(z, dtype=float)
        zz = z @ self.inverse
        return np.sum(zz * z, axis=-1)


def mvn_logpdf(z, corr: CorrelationMatrix):
    """Log density of MVN(0, corr) at rows of z."""
    z = np.asarray(z, dtype=float)
    d = corr.dim
    if z.shape[-1] != d:
        raise ValueError(f"z has dimension {z.shape[-1]}, expected {d}")
    return -0.5 * d * np.log(2.0 * np.pi) - 0.5 * corr.logdet - 0.5 * corr.quad_form(z)


# ---------------------------------------------------------------- root finding

def invert_monotone(f, target, bracket_seed=(-1.0, 1.0), tol=1e-12, max_expand=200):
    """Solve f(x) = target for a continuous nondecreasing f.

    The seed bracket expands geometrically until it straddles the target,
    then bisection runs down to interval width <= tol.
    """
    lo, hi = float(bracket_seed[0]), float(bracket_seed[1])
    if not lo < hi:
        raise ValueError("bracket seed must satisfy lo < hi")
    flo, fhi = f(lo), f(hi)
    width = hi - lo
    n = 0
    while flo > target:
        lo -= width
        width *= 2.0
        flo = f(lo)
        n += 1
        if n > max_expand:
            raise ValueError(f"cannot bracket target {target} from below")
    n = 0
    while fhi < target:
        hi += width
        width *= 2.0
        fhi = f(hi)
        n += 1
        if n > max_expand:
            raise ValueError(f"cannot bracket target {target} from above")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            break
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invert_monotone_vec(f, targets, lo=-20.0, hi=20.0, iters=60, max_expand=200):
    """Vectorized bisection: solve f(x_i) = targets_i for a vectorized nondecreasing f."""
    t = np.asarray(targets, dtype=float)
    lo = np.full_like(t, lo)
    hi = np.full_like(t, hi)
    width = hi - lo
    for _ in range(max_expand):
        bad = f(lo) > t
        if not np.any(bad):
            break
        lo = np.where(bad, lo - width, lo)
        width = np.where(bad, 2.0 * width, width)
    else:
        raise ValueError("cannot bracket targets from below")
    width = hi - lo
    for _ in range(max_expand):
        bad = f(hi) < t
        if not np.any(bad):
            break
        hi = np.where(bad, hi + width, hi)
        width = np.where(bad, 2.0 * width, width)
    else:
        raise ValueError("cannot bracket targets from above")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = f(mid) < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- sampling

def rng_stream(seed: int, *path: str) -> np.random.Generator:
    """Named, reproducible Philox stream derived from a root seed and a label path."""
    key = [int.from_bytes(hashlib.sha256(p.encode()).digest()[:8], "little") for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def sample_trunc_normal(rng, tau, size=None):
    """Draws from the standard normal conditioned on Z > -tau (density phi(z)/Phi(tau))."""
    a = -float(tau)
    n = 1 if size is None else int(np.prod(size))
    if a <= 6.0:
        # inverse CDF through the upper tail keeps precision for all a <= 6
        v = rng.random(n)
        out = -ndtri(v * ndtr(-a))
    else:
        # exponential-rejection (Robert 1995) for a far right truncation
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = 2 * (n - filled) + 16
            z = a + rng.exponential(1.0 / lam, size=m)
            acc = rng.random(m) < np.exp(-0.5 * (z - lam) ** 2)
            take = z[acc][: n - filled]
            out[filled:filled + take.size] = take
            filled += take.size
    if size is None:
        return float(out[0])
    return out.reshape(size)


def sample(dist: str, rng: np.random.Generator, size=None, tau: float = 0.0):
    """Draw from one of the named mixing laws.

    dist is one of 'normal', 'exponential', 'trunc_normal' (above -tau),
    'pareto' (pdf z^-2 on z > 1) or 'inv_gamma_half' (Ig(1/2, 1/2)).
    """
    if dist == "normal":
        return rng.standard_normal(size)
    if dist == "exponential":
        return rng.exponential(1.0, size)
    if dist == "trunc_normal":
        return sample_trunc_normal(rng, tau, size)
    if dist == "pareto":
        # survival P(X > z) = 1/z, z > 1
        return 1.0 / rng.random(size)
    if dist == "inv_gamma_half":
        return 1.0 / rng.gamma(0.5, 2.0, size)
    raise ValueError(f"unknown distribution {dist!r}")
