"""Slow, independent reference computations used as test oracles."""
import itertools
import math

import numpy as np


def pinball_mean(x, y, a, b, p):
    d = np.asarray(y, float) - (a + b * np.asarray(x, float))
    return float(np.mean(np.where(d < 0, (p - 1.0) * d, p * d)))


def qr_pair_enumeration(x, y, p):
    """Exact linear-QR optimum: some optimal line passes through two data points
    (or, for constant x, is horizontal through one)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    best = math.inf
    for i in range(x.size):           # horizontal candidates
        best = min(best, pinball_mean(x, y, y[i], 0.0, p))
    i, j = np.triu_indices(x.size, 1)
    keep = x[i] != x[j]
    i, j = i[keep], j[keep]
    slopes = (y[j] - y[i]) / (x[j] - x[i])
    icpts = y[i] - slopes * x[i]
    for start in range(0, slopes.size, 2048):
        s = slopes[start:start + 2048, None]
        a = icpts[start:start + 2048, None]
        d = y[None, :] - (a + s * x[None, :])
        loss = np.where(d < 0, (p - 1.0) * d, p * d).mean(axis=1)
        best = min(best, float(loss.min()))
    return best


def pava_minmax(y, w):
    """Isotonic fit through the max-min formula
    ``g_i = max_{j<=i} min_{k>=i} avg_w(y[j..k])``."""
    y = np.asarray(y, float)
    w = np.asarray(w, float)
    n = y.size
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwy = np.concatenate([[0.0], np.cumsum(w * y)])

    def avg(j, k):
        return (cwy[k + 1] - cwy[j]) / (cw[k + 1] - cw[j])

    return np.array([max(min(avg(j, k) for k in range(i, n)) for j in range(i + 1)) for i in range(n)])


def pava_partitions(y, w):
    """Isotonic fit by enumerating every split into contiguous blocks (n <= ~12)."""
    y = np.asarray(y, float)
    w = np.asarray(w, float)
    n = y.size
    best, best_fit = math.inf, None
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        means = [np.average(y[a:b], weights=w[a:b]) for a, b in zip(bounds, bounds[1:])]
        if any(m1 > m2 + 1e-12 for m1, m2 in zip(means, means[1:])):
            continue
        fit = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(bounds, bounds[1:]), means)])
        sse = float(np.sum(w * (y - fit) ** 2))
        if sse < best - 1e-12:
            best, best_fit = sse, fit
    return best_fit


def nb_pmf_direct(mu, alpha, y):
    """Textbook NB pmf with ``r = alpha``, ``p = alpha / (mu + alpha)``."""
    r = alpha
    q = alpha / (mu + alpha)
    return math.exp(math.lgamma(y + r) - math.lgamma(y + 1) - math.lgamma(r)
                    + r * math.log(q) + y * math.log1p(-q))


def ence_loops(mu, lo, hi, y, n_bins, c):
    """ENCE written out with plain loops over width-sorted, near-equal bins."""
    pts = sorted(range(len(y)), key=lambda i: (hi[i] - lo[i], i))
    n = len(pts)
    sizes = [n // n_bins + (1 if j < n % n_bins else 0) for j in range(n_bins)]
    terms, start = [], 0
    for size in sizes:
        idx = pts[start:start + size]
        start += size
        if not idx:
            continue
        mpiw = sum(hi[i] - lo[i] for i in idx) / len(idx)
        rmse = math.sqrt(sum((mu[i] - y[i]) ** 2 for i in idx) / len(idx))
        if mpiw > 0:
            terms.append(abs(c * mpiw - rmse) / (c * mpiw))
    return sum(terms) / len(terms)
