"""Hot loops shared by the distribution, quantile-regression and calibration code.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorised numpy version.  :data:`BACKEND` (env ``SAUC_BACKEND``) decides which
one the public names below dispatch to.  Both are importable directly so the
tests and ``benchmarks/bench_kernels.py`` can compare them.

Discrete families are encoded as integers: ``NB = 0``, ``POISSON = 1``.
"""
import math

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import gammaln

from ._backend import BACKEND, HAS_NUMBA, njit

NB = 0
POISSON = 1


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit
def _logpmf_scalar(k, mu, alpha, fam):
    if mu <= 0.0:
        return 0.0 if k == 0 else -np.inf
    if fam == NB:
        return (math.lgamma(k + alpha) - math.lgamma(k + 1.0) - math.lgamma(alpha)
                + k * (math.log(mu) - math.log(mu + alpha))
                - alpha * math.log1p(mu / alpha))
    return k * math.log(mu) - mu - math.lgamma(k + 1.0)


@njit
def _cdf_numba(fam, mu, alpha, y):
    n = mu.size
    out = np.empty(n)
    for i in range(n):
        if y[i] < 0:
            out[i] = 0.0
            continue
        s = 0.0
        top = int(math.floor(y[i]))
        for k in range(top + 1):
            s += math.exp(_logpmf_scalar(k, mu[i], alpha[i], fam))
        out[i] = min(s, 1.0)
    return out


@njit
def _quantile_numba(fam, mu, alpha, p):
    n = mu.size
    out = np.empty(n, np.int64)
    for i in range(n):
        s = 0.0
        k = 0
        while True:
            term = math.exp(_logpmf_scalar(k, mu[i], alpha[i], fam))
            s += term
            # second test: mass exhausted below p through rounding
            if s >= p[i] or (term == 0.0 and k > mu[i]):
                break
            k += 1
        out[i] = k
    return out


@njit
def _qr_eval_numba(x, y, slope, p, k_lo, k_hi):
    n = x.size
    r = y - slope * x
    part = np.partition(r, k_hi)
    a_hi = part[k_hi]
    a_lo = a_hi
    if k_lo != k_hi:
        a_lo = part[:k_hi].max()
    tot = 0.0
    for i in range(n):
        d = r[i] - a_lo
        if d >= 0.0:
            tot += p * d
        else:
            tot += (p - 1.0) * d
    return tot / n, a_lo, a_hi


@njit
def _pava_numba(y, w):
    n = y.size
    vals = np.empty(n)
    wts = np.empty(n)
    cnt = np.empty(n, np.int64)
    m = 0
    for i in range(n):
        vals[m] = y[i]
        wts[m] = w[i]
        cnt[m] = 1
        m += 1
        while m > 1 and vals[m - 2] > vals[m - 1]:
            tw = wts[m - 2] + wts[m - 1]
            vals[m - 2] = (vals[m - 2] * wts[m - 2] + vals[m - 1] * wts[m - 1]) / tw
            wts[m - 2] = tw
            cnt[m - 2] += cnt[m - 1]
            m -= 1
    out = np.empty(n)
    pos = 0
    for b in range(m):
        for j in range(cnt[b]):
            out[pos + j] = vals[b]
        pos += cnt[b]
    return out


# --------------------------------------------------------------------------
# numpy kernels
# --------------------------------------------------------------------------

def _logpmf_np(k, mu, alpha, fam):
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == NB:
            lp = (gammaln(k + alpha) - gammaln(k + 1.0) - gammaln(alpha)
                  + k * (np.log(mu) - np.log(mu + alpha))
                  - alpha * np.log1p(mu / alpha))
        else:
            lp = k * np.log(mu) - mu - gammaln(k + 1.0)
    degenerate = mu <= 0.0
    if np.any(degenerate):
        lp = np.where(degenerate, 0.0 if k == 0 else -np.inf, lp)
    return lp


def _cdf_numpy(fam, mu, alpha, y):
    top = np.floor(y)
    out = np.zeros(mu.size)
    if mu.size == 0:
        return out
    for k in range(int(max(top.max(), -1.0)) + 1):
        m = top >= k
        out[m] += np.exp(_logpmf_np(k, mu[m], alpha[m], fam))
    return np.minimum(out, 1.0)


def _quantile_numpy(fam, mu, alpha, p):
    out = np.zeros(mu.size, np.int64)
    s = np.zeros(mu.size)
    active = np.arange(mu.size)
    k = 0
    while active.size:
        term = np.exp(_logpmf_np(k, mu[active], alpha[active], fam))
        s[active] += term
        done = (s[active] >= p[active]) | ((term == 0.0) & (k > mu[active]))
        out[active[done]] = k
        active = active[~done]
        k += 1
    return out


def _qr_eval_numpy(x, y, slope, p, k_lo, k_hi):
    r = y - slope * x
    part = np.partition(r, (k_lo, k_hi))
    a_lo, a_hi = part[k_lo], part[k_hi]
    d = r - a_lo
    loss = np.where(d >= 0.0, p * d, (p - 1.0) * d)
    return loss.mean(), a_lo, a_hi


def _pava_numpy(y, w):
    return np.asarray(isotonic_regression(y, weights=w).x, dtype=float)


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

numpy_impl = {
    "cdf": _cdf_numpy,
    "quantile": _quantile_numpy,
    "qr_eval": _qr_eval_numpy,
    "pava": _pava_numpy,
}
numba_impl = {
    "cdf": _cdf_numba,
    "quantile": _quantile_numba,
    "qr_eval": _qr_eval_numba,
    "pava": _pava_numba,
} if HAS_NUMBA else None

_impl = numba_impl if BACKEND == "numba" else numpy_impl


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def discrete_cdf(fam, mu, alpha, y):
    """P(Y <= y) by sequential summation of the pmf, elementwise."""
    mu, alpha, y = np.broadcast_arrays(mu, alpha, y)
    shape = mu.shape
    return _impl["cdf"](fam, _flat(mu), _flat(alpha), _flat(y)).reshape(shape)


def discrete_quantile(fam, mu, alpha, p):
    """Smallest integer q with cdf(q) >= p, using the same summation as ``discrete_cdf``."""
    mu, alpha, p = np.broadcast_arrays(mu, alpha, p)
    shape = mu.shape
    return _impl["quantile"](fam, _flat(mu), _flat(alpha), _flat(p)).reshape(shape)


def qr_eval(x, y, slope, p, k_lo, k_hi):
    return _impl["qr_eval"](x, y, float(slope), float(p), int(k_lo), int(k_hi))


def pava(y, w):
    return _impl["pava"](_flat(y), _flat(w))
