"""Predictive distributions (NB, Poisson, Gaussian) and their training losses.

Negative binomial parameterisation: mean ``mu`` and dispersion ``alpha`` with
``r = alpha`` and success probability ``p = mu / (mu + alpha)``::

    pmf(y) = Gamma(y + alpha) / (Gamma(y + 1) Gamma(alpha)) * p**y * (1 - p)**alpha

so that ``E[Y] = mu`` and ``Var[Y] = mu + mu**2 / alpha``.  Large ``alpha`` is the
Poisson limit.

All functions are vectorised over numpy arrays.  Discrete quantiles are
integers (smallest ``q`` with ``F(q) >= p``) with no continuity correction.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import betainc, gammaln, ndtr, ndtri

from . import _kernels
from .errors import DomainError


class Family(str, Enum):
    NB = "NB"
    POISSON = "Poisson"
    GAUSSIAN = "Gaussian"

    @property
    def is_count(self) -> bool:
        return self is not Family.GAUSSIAN


_KERNEL_CODE = {Family.NB: _kernels.NB, Family.POISSON: _kernels.POISSON}


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-10
    lambda_reg: float = 1e-4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be > 0")
        if not self.lambda_reg >= 0:
            raise DomainError("lambda_reg must be >= 0")


@dataclass(frozen=True)
class PredictionInterval:
    lower: np.ndarray
    upper: np.ndarray
    mean: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def _check_probability(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("probability levels must lie strictly inside (0, 1)")
    return p


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    """A batch of independent predictive distributions of one family.

    ``loc`` is the NB mean, the Poisson rate or the Gaussian mean; ``scale`` is
    the NB dispersion, ``None`` for Poisson, or the Gaussian standard deviation.
    Both arrays share one shape; a 0-d array is a single distribution.
    """

    family: Family
    loc: np.ndarray
    scale: np.ndarray | None = None

    def __post_init__(self):
        family = Family(self.family)
        loc = np.asarray(self.loc, dtype=float)
        scale = None if self.scale is None else np.asarray(self.scale, dtype=float)
        if family is Family.POISSON:
            if scale is not None:
                raise DomainError("Poisson distributions take no scale parameter")
        else:
            if scale is None:
                raise DomainError(f"{family.value} distributions need a scale parameter")
            loc, scale = np.broadcast_arrays(loc, scale)
            scale = scale.copy()
        loc = loc.copy()
        if not np.all(np.isfinite(loc)) or (scale is not None and not np.all(np.isfinite(scale))):
            raise DomainError("distribution parameters must be finite")
        if family.is_count and np.any(loc < 0):
            raise DomainError("count-distribution mean must be >= 0")
        if scale is not None and np.any(scale <= 0):
            raise DomainError("alpha / sigma must be > 0")
        loc.flags.writeable = False
        if scale is not None:
            scale.flags.writeable = False
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def nb(cls, mu, alpha):
        return cls(Family.NB, mu, alpha)

    @classmethod
    def poisson(cls, lam):
        return cls(Family.POISSON, lam)

    @classmethod
    def gaussian(cls, mu, sigma):
        return cls(Family.GAUSSIAN, mu, sigma)

    @property
    def shape(self):
        return self.loc.shape

    @property
    def size(self) -> int:
        return self.loc.size

    @property
    def is_count(self) -> bool:
        return self.family.is_count

    def _scale_or_ones(self):
        return np.ones_like(self.loc) if self.scale is None else self.scale

    def __getitem__(self, idx):
        scale = None if self.scale is None else self.scale[idx]
        return PredictiveDistribution(self.family, self.loc[idx], scale)

    def reshape(self, *shape):
        scale = None if self.scale is None else self.scale.reshape(*shape)
        return PredictiveDistribution(self.family, self.loc.reshape(*shape), scale)

    def mean(self) -> np.ndarray:
        return self.loc.copy()

    def var(self) -> np.ndarray:
        if self.family is Family.NB:
            return self.loc + self.loc**2 / self.scale
        if self.family is Family.POISSON:
            return self.loc.copy()
        return self.scale**2

    def pmf(self, y):
        if self.family is Family.NB:
            return nb_pmf(self.loc, self.scale, y)
        if self.family is Family.POISSON:
            return poisson_pmf(self.loc, y)
        raise DomainError("Gaussian distributions have no pmf")

    def cdf(self, y):
        if self.family is Family.GAUSSIAN:
            return ndtr((np.asarray(y, dtype=float) - self.loc) / self.scale)
        return _kernels.discrete_cdf(_KERNEL_CODE[self.family], self.loc, self._scale_or_ones(), y)

    def quantile(self, p):
        p = _check_probability(p)
        if self.family is Family.GAUSSIAN:
            return self.loc + self.scale * ndtri(p)
        q = _kernels.discrete_quantile(_KERNEL_CODE[self.family], self.loc, self._scale_or_ones(), p)
        return q.astype(float)

    def interval(self, lo_p: float = 0.05, hi_p: float = 0.95) -> PredictionInterval:
        return interval(self, lo_p, hi_p)


# --------------------------------------------------------------------------
# NB / Poisson scalar-style helpers
# --------------------------------------------------------------------------

def nb_logpmf(mu, alpha, y):
    mu, alpha, y = (np.asarray(a, dtype=float) for a in (mu, alpha, y))
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = (gammaln(y + alpha) - gammaln(y + 1.0) - gammaln(alpha)
              + y * (np.log(mu) - np.log(mu + alpha))
              - alpha * np.log1p(mu / alpha))
    lp = np.where(mu <= 0, np.where(y == 0, 0.0, -np.inf), lp)
    return np.where((y < 0) | (y != np.floor(y)), -np.inf, lp)


def nb_pmf(mu, alpha, y):
    return np.exp(nb_logpmf(mu, alpha, y))


def nb_cdf(mu, alpha, y):
    return PredictiveDistribution.nb(mu, alpha).cdf(y)


def nb_cdf_betainc(mu, alpha, y):
    """NB cdf through the regularised incomplete beta function.

    ``P(Y <= y) = I_{alpha / (mu + alpha)}(alpha, y + 1)``; an independent route
    used to cross-check the summation kernel.
    """
    mu, alpha, y = (np.asarray(a, dtype=float) for a in (mu, alpha, y))
    y = np.floor(y)
    out = betainc(alpha, np.maximum(y, 0.0) + 1.0, alpha / (mu + alpha))
    return np.where(y < 0, 0.0, out)


def nb_quantile(mu, alpha, p):
    return PredictiveDistribution.nb(mu, alpha).quantile(p).astype(np.int64)


def poisson_pmf(lam, y):
    lam, y = np.asarray(lam, dtype=float), np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = y * np.log(lam) - lam - gammaln(y + 1.0)
    lp = np.where(lam <= 0, np.where(y == 0, 0.0, -np.inf), lp)
    lp = np.where((y < 0) | (y != np.floor(y)), -np.inf, lp)
    return np.exp(lp)


def poisson_cdf(lam, y):
    return PredictiveDistribution.poisson(lam).cdf(y)


def poisson_quantile(lam, p):
    return PredictiveDistribution.poisson(lam).quantile(p).astype(np.int64)


def interval(d: PredictiveDistribution, lo_p: float = 0.05, hi_p: float = 0.95) -> PredictionInterval:
    """Central prediction interval ``[F^-1(lo_p), F^-1(hi_p)]`` with the mean as point."""
    if not lo_p < hi_p:
        raise DomainError("lo_p must be smaller than hi_p")
    lower = d.quantile(lo_p)
    upper = d.quantile(hi_p)
    return PredictionInterval(lower=lower, upper=upper, mean=d.mean())


# --------------------------------------------------------------------------
# training losses
# --------------------------------------------------------------------------

def nb_loss(mu, alpha, y, cfg: LossConfig = LossConfig()):
    """Per-point NB negative log-likelihood with epsilon stabilisation and
    an ``lambda_reg * alpha**2`` penalty (every Gamma term taken as log-gamma)."""
    mu, alpha, y = (np.asarray(a, dtype=float) for a in (mu, alpha, y))
    eps = cfg.epsilon
    denom = mu + alpha + 2.0 * eps
    return (-(y * np.log((mu + eps) / denom))
            - gammaln(y + alpha + eps) + gammaln(y + 1.0) + gammaln(alpha + eps)
            - alpha * np.log((alpha + eps) / denom)
            + cfg.lambda_reg * alpha**2)


def poisson_loss(lam, y, cfg: LossConfig = LossConfig()):
    lam_s = np.asarray(lam, dtype=float) + cfg.epsilon
    return lam_s - np.asarray(y, dtype=float) * np.log(lam_s)


def gaussian_loss(mu, sigma, y, cfg: LossConfig = LossConfig()):
    mu, sigma, y = (np.asarray(a, dtype=float) for a in (mu, sigma, y))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be > 0")
    return (0.5 * np.log(2.0 * np.pi * sigma**2) + (y - mu) ** 2 / (2.0 * sigma**2)
            + cfg.lambda_reg * np.abs(sigma))


def gaussian_loss_grad(mu, sigma, y, cfg: LossConfig = LossConfig()):
    """Analytic ``(d/dmu, d/dsigma)`` of :func:`gaussian_loss`."""
    mu, sigma, y = (np.asarray(a, dtype=float) for a in (mu, sigma, y))
    if np.any(sigma <= 0):
        raise DomainError("sigma must be > 0")
    resid = y - mu
    d_mu = -resid / sigma**2
    d_sigma = 1.0 / sigma - resid**2 / sigma**3 + cfg.lambda_reg
    return d_mu, d_sigma
