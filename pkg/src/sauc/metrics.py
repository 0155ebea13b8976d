"""Interval calibration metrics: ENCE, coverage, reliability curves, risk scores.

Points are binned by sorted interval width into ``n_bins`` groups whose sizes
differ by at most one (the first ``n % n_bins`` bins take the extra point);
ties in width keep the original point order.  For each bin::

    RMSE(j) = sqrt(mean((mu_star - y)**2)),  MPIW(j) = mean(upper - lower)
    ENCE    = mean_j |c * MPIW(j) - RMSE(j)| / (c * MPIW(j))

with ``c = 1 / 3.29``, the ratio of a Gaussian standard deviation to its 90%
interval width.  Bins whose MPIW is zero cannot be normalised and are left
out of the mean; their count is reported as ``excluded_bins``.
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, MetricUndefinedError

C_DEFAULT = 1.0 / 3.29
TARGET_COVERAGE = 0.9
FILTERS = ("all", "zero_only", "nonzero_only")
_FILTER_ALIASES = {"all": "all", "zero": "zero_only", "zero_only": "zero_only",
                   "nonzero": "nonzero_only", "nonzero_only": "nonzero_only"}


@dataclass(frozen=True)
class BinStats:
    bin: int
    n: int
    rmse: float
    mpiw: float
    width_min: float
    width_max: float


@dataclass
class MetricsReport:
    ence: float
    c: float
    coverage: float
    c_star: float
    n_bins: int
    excluded_bins: int
    filter: str
    n_points: int
    bins: list = field(default_factory=list)
    slope: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins"] = [{"bin": b.bin, "n": b.n, "rmse": b.rmse, "mpiw": b.mpiw} for b in self.bins]
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def normalize_filter(name: str) -> str:
    try:
        return _FILTER_ALIASES[name]
    except KeyError:
        raise DomainError(f"filter must be one of {sorted(_FILTER_ALIASES)}") from None


def _arrays(intervals, y):
    mu = np.asarray(intervals.mu_star, dtype=float).ravel()
    lo = np.asarray(intervals.lower, dtype=float).ravel()
    hi = np.asarray(intervals.upper, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if not (mu.size == lo.size == hi.size == y.size):
        raise DomainError("intervals and targets differ in size")
    return mu, lo, hi, y


def _filter_mask(y, filt):
    filt = normalize_filter(filt)
    if filt == "zero_only":
        return y == 0
    if filt == "nonzero_only":
        return y != 0
    return np.ones(y.shape, dtype=bool)


def width_bins(widths, n_bins: int) -> list:
    """Index arrays of ``n_bins`` near-equal groups in ascending (stable) width order."""
    if n_bins < 1:
        raise DomainError("n_bins must be >= 1")
    order = np.argsort(np.asarray(widths), kind="stable")
    n = order.size
    base, extra = divmod(n, n_bins)
    sizes = [base + (1 if j < extra else 0) for j in range(n_bins)]
    return np.split(order, np.cumsum(sizes)[:-1])


def bin_stats(mu, lo, hi, y, n_bins: int) -> list:
    width = hi - lo
    out = []
    for j, idx in enumerate(width_bins(width, n_bins)):
        if idx.size == 0:
            out.append(BinStats(j, 0, float("nan"), 0.0, float("nan"), float("nan")))
            continue
        w = width[idx]
        out.append(BinStats(
            bin=j, n=int(idx.size),
            rmse=float(np.sqrt(np.mean((mu[idx] - y[idx]) ** 2))),
            mpiw=float(w.mean()),
            width_min=float(w.min()), width_max=float(w.max()),
        ))
    return out


def ence_from_bins(bins, c: float = C_DEFAULT) -> tuple[float, int]:
    """ENCE over the bins with positive MPIW and the number of bins excluded."""
    terms = [abs(c * b.mpiw - b.rmse) / (c * b.mpiw) for b in bins if b.n > 0 and b.mpiw > 0]
    excluded = len(bins) - len(terms)
    if not terms:
        raise MetricUndefinedError("every bin has zero mean interval width; ENCE is undefined")
    return float(np.mean(terms)), excluded


def coverage(intervals, y) -> tuple[float, float]:
    """Closed-interval coverage ``mean(lower <= y <= upper)`` and ``|0.9 - coverage|``."""
    _, lo, hi, y = _arrays(intervals, y)
    if y.size == 0:
        raise DomainError("coverage of an empty set")
    cov = float(np.mean((lo <= y) & (y <= hi)))
    return cov, abs(TARGET_COVERAGE - cov)


def ence(intervals, y, n_bins: int = 15, c: float = C_DEFAULT, filter: str = "all") -> MetricsReport:
    """Full report for the points selected by ``filter`` (selection happens before binning)."""
    if not c > 0:
        raise DomainError("c must be > 0")
    filt = normalize_filter(filter)
    mu, lo, hi, y = _arrays(intervals, y)
    keep = _filter_mask(y, filt)
    mu, lo, hi, y = mu[keep], lo[keep], hi[keep], y[keep]
    if y.size == 0:
        raise DomainError(f"no points left after filter {filt!r}")
    bins = bin_stats(mu, lo, hi, y, n_bins)
    value, excluded = ence_from_bins(bins, c)
    cov = float(np.mean((lo <= y) & (y <= hi)))
    return MetricsReport(
        ence=value, c=float(c), coverage=cov, c_star=abs(TARGET_COVERAGE - cov),
        n_bins=int(n_bins), excluded_bins=excluded, filter=filt, n_points=int(y.size), bins=bins,
    )


def risk_scores(intervals) -> np.ndarray:
    """``mu_star * (upper - lower)`` per point, same shape as the intervals."""
    return np.asarray(intervals.mu_star, dtype=float) * (
        np.asarray(intervals.upper, dtype=float) - np.asarray(intervals.lower, dtype=float))


def node_risk(intervals) -> dict:
    """Risk score averaged over time for every node."""
    rs = risk_scores(intervals)
    return dict(zip(intervals.node_ids, rs.mean(axis=1).tolist()))


def reliability_curve(intervals, y, n_bins: int = 15, c: float = C_DEFAULT,
                      filter: str = "all") -> list:
    """``[(c * MPIW(j), RMSE(j), n_j)]`` in ascending width order, empty bins skipped."""
    mu, lo, hi, y = _arrays(intervals, y)
    keep = _filter_mask(y, filter)
    bins = bin_stats(mu[keep], lo[keep], hi[keep], y[keep], n_bins)
    return [(c * b.mpiw, b.rmse, b.n) for b in bins if b.n > 0]


def write_reliability_csv(curve, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "c_mpiw", "rmse", "n"])
        for j, (cm, rmse, n) in enumerate(curve):
            w.writerow([j, repr(float(cm)), repr(float(rmse)), n])


def width_rmse_slope(intervals, y, n_groups: int = 15) -> float:
    """Least-squares slope of RMSE(j) on MPIW(j) across width groups."""
    mu, lo, hi, y = _arrays(intervals, y)
    bins = [b for b in bin_stats(mu, lo, hi, y, n_groups) if b.n > 0]
    w = np.array([b.mpiw for b in bins])
    r = np.array([b.rmse for b in bins])
    if w.size < 2 or np.ptp(w) == 0:
        raise MetricUndefinedError("interval widths do not vary across groups; slope undefined")
    wc = w - w.mean()
    return float(np.sum(wc * (r - r.mean())) / np.sum(wc * wc))
