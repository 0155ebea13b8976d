"""Linear quantile regression ``Q(p | x) = intercept + slope * x`` under pinball loss.

The solver profiles out the intercept: for a fixed slope the optimal intercept
is an order statistic of the residuals ``y - slope * x``, so the mean pinball
loss becomes a convex function ``g(slope)`` of one variable.  ``g`` is minimised
by golden-section search over ``theta = arctan(slope)``, which covers every real
slope on a bounded interval.  Among optimal lines the one with the smallest
``|slope|``, then the smallest ``|intercept|``, is returned.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_THETA_MAX = math.pi / 2 - 1e-9
_THETA_TOL = 1e-13
_PLATEAU_RTOL = 1e-11


@dataclass(frozen=True)
class QuantileFit:
    p: float
    intercept: float
    slope: float
    n_points: int
    loss: float = float("nan")

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError("quantile level must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "slope": self.slope}


def pinball(y, yhat, p):
    """Pinball (check) loss; zero at ``y == yhat`` and never negative."""
    d = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return np.where(d < 0, (p - 1.0) * d, p * d)


def apply(fit: QuantileFit, x):
    return fit.intercept + fit.slope * np.asarray(x, dtype=float)


def mean_pinball(x, y, intercept, slope, p) -> float:
    return float(np.mean(pinball(y, intercept + slope * np.asarray(x, dtype=float), p)))


def _order_ranks(n: int, p: float) -> tuple[int, int]:
    """0-based ranks bounding the optimal intercepts for a fixed slope.

    Minimisers are the residual values ``a`` with ``#{r < a} <= p n <= #{r <= a}``:
    a single order statistic unless ``p n`` is an integer ``k``, when every value
    between the ``k``-th and ``k+1``-th smallest residual is optimal.
    """
    target = p * n
    k = round(target)
    if abs(target - k) <= 1e-9 * max(1.0, target) and 1 <= k <= n - 1:
        return k - 1, k
    k = math.ceil(target)
    return k - 1, k - 1


def _smallest_abs(lo: float, hi: float) -> float:
    return min(max(0.0, lo), hi)


def fit_quantile(x, y, p: float) -> QuantileFit:
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if not 0.0 < p < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    if x.size != y.size:
        raise DomainError("x and y must have equal length")
    if x.size == 0:
        raise DomainError("cannot fit a quantile line to no data")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("x and y must be finite")
    n = x.size
    k_lo, k_hi = _order_ranks(n, p)

    def g(theta):
        return _kernels.qr_eval(x, y, math.tan(theta), p, k_lo, k_hi)[0]

    if x.min() == x.max():
        slope = 0.0
    else:
        # golden-section search on the quasi-convex g(tan(theta))
        a, b = -_THETA_MAX, _THETA_MAX
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        gc, gd = g(c), g(d)
        while b - a > _THETA_TOL:
            if gc <= gd:
                b, d, gd = d, c, gc
                c = b - _GOLDEN * (b - a)
                gc = g(c)
            else:
                a, c, gc = c, d, gd
                d = a + _GOLDEN * (b - a)
                gd = g(d)
        theta = c if gc <= gd else d
        g_best = min(gc, gd)
        theta, g_best = _smallest_slope_on_plateau(g, theta, g_best)
        slope = math.tan(theta)

    loss, a_lo, a_hi = _kernels.qr_eval(x, y, slope, p, k_lo, k_hi)
    intercept = _smallest_abs(a_lo, a_hi)
    return QuantileFit(p=float(p), intercept=float(intercept), slope=float(slope),
                       n_points=int(n), loss=float(loss))


def _smallest_slope_on_plateau(g, theta, g_best):
    """Move ``theta`` toward 0 while ``g`` stays at its minimum (ties -> smallest |slope|)."""
    tol = _PLATEAU_RTOL * max(1.0, abs(g_best))
    g0 = g(0.0)
    if g0 <= g_best + tol:
        return 0.0, min(g0, g_best)
    inside, outside = theta, 0.0
    while abs(inside - outside) > _THETA_TOL:
        mid = 0.5 * (inside + outside)
        if g(mid) <= g_best + tol:
            inside = mid
        else:
            outside = mid
    return inside, g_best
