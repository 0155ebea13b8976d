"""Post-hoc calibration of 5%-95% prediction intervals.

``SAUC`` bins the calibration points by predicted mean, splits every bin into
a zero segment (``mu_hat < zero_threshold``) and a non-zero segment, and fits
separate 5% / 95% quantile lines ``y ~ mu_hat`` in every (bin, segment) cell.
Test points are routed to a cell by their own ``mu_hat``.

Baselines (``QR``, ``Isotonic``, ``Platt``, ``TempScaling``, ``HistBinning``) and
``Identity`` share the same fit/apply surface.  The point-calibrating
baselines push the interval endpoints through the same map as the mean.
"""
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels
from ._grid import read_grid, write_grid
from .errors import DomainError, StateError
from .forecaster import ForecastSet
from .qr import QuantileFit, apply as qr_apply, fit_quantile

_IV_HEADER = ["node_id", "timestep", "mu_star", "lower", "upper"]
LOWER_P = 0.05
UPPER_P = 0.95


class Kind(str, Enum):
    SAUC = "SAUC"
    QR = "QR"
    ISOTONIC = "Isotonic"
    PLATT = "Platt"
    TEMP = "TempScaling"
    HISTBIN = "HistBinning"
    IDENTITY = "Identity"


ALL_KINDS = tuple(k.value for k in Kind)


@dataclass(frozen=True, eq=False)
class CalibratedIntervals:
    """Per-point calibrated mean and interval, shaped ``(n_nodes, n_steps)``."""

    mu_star: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    node_ids: tuple
    t0: int
    model_id: str
    calibrator_id: str

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def timesteps(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.mu_star.shape[1])

    def write(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            write_grid(fh, _IV_HEADER, self.node_ids, self.t0, [self.mu_star, self.lower, self.upper])

    @classmethod
    def read(cls, path, model_id: str = "", calibrator_id: str = "") -> "CalibratedIntervals":
        header, nodes, t0, _, vals = read_grid(path)
        if header != _IV_HEADER:
            raise DomainError(f"unexpected intervals header {header}")
        return cls(vals[0], vals[1], vals[2], nodes, t0, model_id, calibrator_id)


@dataclass(frozen=True)
class Cell:
    bin: int
    segment: str            # "zero" | "nonzero"
    n_points: int
    p05: QuantileFit | None
    p95: QuantileFit | None

    @property
    def fallback(self) -> bool:
        return self.p05 is None

    def to_dict(self) -> dict:
        return {
            "bin": self.bin,
            "segment": self.segment,
            "n_points": self.n_points,
            "fallback": self.fallback,
            "p05": None if self.fallback else self.p05.to_dict(),
            "p95": None if self.fallback else self.p95.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cell":
        n = int(d["n_points"])
        if d["fallback"]:
            return cls(int(d["bin"]), d["segment"], n, None, None)
        p05 = QuantileFit(LOWER_P, float(d["p05"]["intercept"]), float(d["p05"]["slope"]), n)
        p95 = QuantileFit(UPPER_P, float(d["p95"]["intercept"]), float(d["p95"]["slope"]), n)
        return cls(int(d["bin"]), d["segment"], n, p05, p95)


@dataclass(eq=False)
class CalibratorModel:
    """A fitted calibration map.

    ``zero_threshold=None`` disables the zero / non-zero split.  ``params``
    holds the baseline parameters: ``T`` (TempScaling), ``a``/``b`` (Platt),
    ``knots``/``values`` (Isotonic), ``corrections`` (HistBinning).
    """

    kind: Kind
    n_bins: int = 15
    zero_threshold: float | None = 0.5
    bin_on: str = "mu_hat"
    mu_star: str = "midpoint"
    thresholds: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    fitted: bool = False

    def __post_init__(self):
        self.kind = Kind(self.kind)
        if int(self.n_bins) < 1:
            raise DomainError("n_bins must be >= 1")
        self.n_bins = int(self.n_bins)
        if self.zero_threshold is not None:
            if math.isinf(self.zero_threshold) and self.zero_threshold < 0:
                self.zero_threshold = None
            elif not self.zero_threshold > 0:
                raise DomainError("zero_threshold must be > 0 (or None to disable the split)")
        if self.bin_on == "y_calib_thresholds_applied_to_mu_hat":
            self.bin_on = "y_calib"
        if self.bin_on not in ("mu_hat", "y_calib"):
            raise DomainError("bin_on must be 'mu_hat' or 'y_calib'")
        if self.mu_star not in ("midpoint", "passthrough"):
            raise DomainError("mu_star must be 'midpoint' or 'passthrough'")

    @property
    def model_id(self) -> str:
        return self.kind.value

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_bins": self.n_bins,
            "zero_threshold": self.zero_threshold,
            "bin_on": self.bin_on,
            "mu_star": self.mu_star,
            "thresholds": [float(t) for t in self.thresholds],
            "cells": [c.to_dict() for c in self.cells],
            "params": self.params,
            "fitted": self.fitted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratorModel":
        return cls(
            kind=d["kind"], n_bins=d["n_bins"], zero_threshold=d["zero_threshold"],
            bin_on=d.get("bin_on", "mu_hat"), mu_star=d.get("mu_star", "midpoint"),
            thresholds=list(d.get("thresholds", [])),
            cells=[Cell.from_dict(c) for c in d.get("cells", [])],
            params=d.get("params", {}), fitted=bool(d.get("fitted", True)),
        )

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "CalibratorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _flat_inputs(fc: ForecastSet, y=None):
    mu_hat = fc.dist.mean().ravel()
    if y is None:
        return mu_hat
    y = np.asarray(y, dtype=float).ravel()
    if y.size != mu_hat.size:
        raise DomainError("targets and forecasts differ in size")
    if y.size == 0:
        raise DomainError("calibration set is empty")
    return mu_hat, y


def identity_intervals(fc: ForecastSet, calibrator_id: str = "Identity") -> CalibratedIntervals:
    """The uncalibrated 5%-95% intervals with the predicted mean as point."""
    pi = fc.dist.interval(LOWER_P, UPPER_P)
    return CalibratedIntervals(pi.mean, pi.lower, pi.upper, fc.node_ids, fc.t0,
                               fc.model_id, calibrator_id)


def quantile_edges(values, n_bins: int) -> np.ndarray:
    """Interior edges splitting ``values`` into ``n_bins`` equal-count bins."""
    if n_bins == 1:
        return np.empty(0)
    return np.quantile(np.asarray(values, dtype=float), np.linspace(0.0, 1.0, n_bins + 1)[1:-1])


def route(mu_hat, thresholds) -> np.ndarray:
    """0-based bin index; values below every threshold land in bin 0."""
    return np.searchsorted(np.asarray(thresholds, dtype=float), mu_hat, side="right")


def _segments(mu_hat, zero_threshold):
    if zero_threshold is None:
        return np.ones(mu_hat.shape, dtype=bool)
    return mu_hat >= zero_threshold


def _finish(fc: ForecastSet, model: CalibratorModel, mu_star, lower, upper) -> CalibratedIntervals:
    lower, upper = np.minimum(lower, upper), np.maximum(lower, upper)
    if fc.dist.is_count:
        lower = np.maximum(lower, 0.0)
        upper = np.maximum(upper, 0.0)
        mu_star = np.maximum(mu_star, 0.0)
    shape = fc.dist.shape
    return CalibratedIntervals(mu_star.reshape(shape), lower.reshape(shape), upper.reshape(shape),
                               fc.node_ids, fc.t0, fc.model_id, model.model_id)


# --------------------------------------------------------------------------
# SAUC / QR
# --------------------------------------------------------------------------

def fit_sauc(fc_calib: ForecastSet, y_calib, n_bins: int = 15, zero_threshold: float | None = 0.5,
             bin_on: str = "mu_hat", mu_star: str = "midpoint", kind: Kind = Kind.SAUC) -> CalibratorModel:
    model = CalibratorModel(kind, n_bins, zero_threshold, bin_on, mu_star)
    x, y = _flat_inputs(fc_calib, y_calib)
    edges = quantile_edges(x if model.bin_on == "mu_hat" else y, model.n_bins)
    bins = route(x, edges)
    nonzero = _segments(x, model.zero_threshold)
    cells = []
    for b in range(model.n_bins):
        in_bin = bins == b
        for segment, mask in (("nonzero", in_bin & nonzero), ("zero", in_bin & ~nonzero)):
            n = int(mask.sum())
            if n == 0:
                cells.append(Cell(b, segment, 0, None, None))
                continue
            cells.append(Cell(b, segment, n,
                              fit_quantile(x[mask], y[mask], LOWER_P),
                              fit_quantile(x[mask], y[mask], UPPER_P)))
    model.thresholds = edges.tolist()
    model.cells = cells
    model.fitted = True
    return model


def apply_sauc(model: CalibratorModel, fc_test: ForecastSet) -> CalibratedIntervals:
    if not model.fitted:
        raise StateError("calibrator has not been fitted")
    if model.kind not in (Kind.SAUC, Kind.QR):
        raise DomainError(f"apply_sauc cannot apply a {model.kind.value} model")
    x = _flat_inputs(fc_test)
    pre = identity_intervals(fc_test)
    lower = pre.lower.ravel().copy()
    upper = pre.upper.ravel().copy()
    bins = route(x, model.thresholds)
    nonzero = _segments(x, model.zero_threshold)
    calibrated = np.zeros(x.size, dtype=bool)
    for cell in model.cells:
        if cell.fallback:
            continue
        mask = (bins == cell.bin) & (nonzero == (cell.segment == "nonzero"))
        if not mask.any():
            continue
        lower[mask] = qr_apply(cell.p05, x[mask])
        upper[mask] = qr_apply(cell.p95, x[mask])
        calibrated |= mask
    lo, hi = np.minimum(lower, upper), np.maximum(lower, upper)
    if fc_test.dist.is_count:
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    if model.mu_star == "midpoint":
        mu_star = np.where(calibrated, 0.5 * (lo + hi), x)
    else:
        mu_star = x.copy()
    return _finish(fc_test, model, mu_star, lo, hi)


def fit_qr(fc_calib: ForecastSet, y_calib, mu_star: str = "midpoint") -> CalibratorModel:
    """Two global quantile lines: SAUC with one bin and no zero split."""
    return fit_sauc(fc_calib, y_calib, n_bins=1, zero_threshold=None, mu_star=mu_star, kind=Kind.QR)


# --------------------------------------------------------------------------
# point-map baselines
# --------------------------------------------------------------------------

def fit_isotonic(fc_calib: ForecastSet, y_calib) -> CalibratorModel:
    """Pool-adjacent-violators fit of ``y`` on ``mu_hat`` (ties in ``mu_hat`` pooled first)."""
    x, y = _flat_inputs(fc_calib, y_calib)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    knots, start, counts = np.unique(xs, return_index=True, return_counts=True)
    means = np.add.reduceat(ys, start) / counts
    values = _kernels.pava(means, counts.astype(float))
    model = CalibratorModel(Kind.ISOTONIC)
    model.params = {"knots": knots.tolist(), "values": values.tolist()}
    model.fitted = True
    return model


def isotonic_map(knots, values, v):
    """Right-continuous step interpolation of the fitted isotonic function."""
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.clip(np.searchsorted(knots, v, side="right") - 1, 0, knots.size - 1)
    return values[idx]


def fit_platt(fc_calib: ForecastSet, y_calib) -> CalibratorModel:
    x, y = _flat_inputs(fc_calib, y_calib)
    xm, ym = x.mean(), y.mean()
    if np.ptp(x) > 0:
        a = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    else:
        a = 1.0  # any slope is optimal for constant mu_hat; keep the interval widths
    model = CalibratorModel(Kind.PLATT)
    model.params = {"a": a, "b": float(ym - a * xm)}
    model.fitted = True
    return model


def fit_temp(fc_calib: ForecastSet, y_calib) -> CalibratorModel:
    x, y = _flat_inputs(fc_calib, y_calib)
    sxy = float(np.sum(x * y))
    sxx = float(np.sum(x * x))
    temp = sxx / sxy if (sxy > 0 and sxx > 0) else 1.0
    model = CalibratorModel(Kind.TEMP)
    model.params = {"T": temp}
    model.fitted = True
    return model


def fit_histbin(fc_calib: ForecastSet, y_calib, n_bins: int = 15) -> CalibratorModel:
    x, y = _flat_inputs(fc_calib, y_calib)
    model = CalibratorModel(Kind.HISTBIN, n_bins=n_bins)
    edges = quantile_edges(x, model.n_bins)
    bins = route(x, edges)
    corrections = []
    for b in range(model.n_bins):
        m = bins == b
        corrections.append(float(y[m].mean() - x[m].mean()) if m.any() else 0.0)
    model.thresholds = edges.tolist()
    model.params = {"corrections": corrections}
    model.fitted = True
    return model


def _point_map(model: CalibratorModel, x):
    p = model.params
    if model.kind is Kind.PLATT:
        return lambda v: p["a"] * v + p["b"]
    if model.kind is Kind.TEMP:
        return lambda v: v / p["T"]
    if model.kind is Kind.ISOTONIC:
        return lambda v: isotonic_map(p["knots"], p["values"], v)
    if model.kind is Kind.HISTBIN:
        shift = np.asarray(p["corrections"])[route(x, model.thresholds)]
        return lambda v: v + shift
    raise DomainError(f"{model.kind.value} is not a point-map calibrator")


def apply_point_map(model: CalibratorModel, fc_test: ForecastSet) -> CalibratedIntervals:
    if not model.fitted:
        raise StateError("calibrator has not been fitted")
    pre = identity_intervals(fc_test)
    x = pre.mu_star.ravel()
    g = _point_map(model, x)
    return _finish(fc_test, model, g(x), g(pre.lower.ravel()), g(pre.upper.ravel()))


# --------------------------------------------------------------------------
# uniform surface
# --------------------------------------------------------------------------

def fit_calibrator(kind, fc_calib: ForecastSet, y_calib, n_bins: int = 15,
                   zero_threshold: float | None = 0.5, bin_on: str = "mu_hat",
                   mu_star: str = "midpoint") -> CalibratorModel:
    kind = Kind(kind)
    if kind is Kind.SAUC:
        return fit_sauc(fc_calib, y_calib, n_bins, zero_threshold, bin_on, mu_star)
    if kind is Kind.QR:
        return fit_qr(fc_calib, y_calib, mu_star)
    if kind is Kind.ISOTONIC:
        return fit_isotonic(fc_calib, y_calib)
    if kind is Kind.PLATT:
        return fit_platt(fc_calib, y_calib)
    if kind is Kind.TEMP:
        return fit_temp(fc_calib, y_calib)
    if kind is Kind.HISTBIN:
        return fit_histbin(fc_calib, y_calib, n_bins)
    _flat_inputs(fc_calib, y_calib)
    model = CalibratorModel(Kind.IDENTITY)
    model.fitted = True
    return model


def apply_calibrator(model: CalibratorModel, fc_test: ForecastSet) -> CalibratedIntervals:
    if not model.fitted:
        raise StateError("calibrator has not been fitted")
    if model.kind in (Kind.SAUC, Kind.QR):
        return apply_sauc(model, fc_test)
    if model.kind is Kind.IDENTITY:
        return identity_intervals(fc_test)
    return apply_point_map(model, fc_test)


def fit_apply_qr_baseline(fc_calib, y_calib, fc_test) -> CalibratedIntervals:
    return apply_sauc(fit_qr(fc_calib, y_calib), fc_test)


def fit_apply_isotonic(fc_calib, y_calib, fc_test) -> CalibratedIntervals:
    return apply_point_map(fit_isotonic(fc_calib, y_calib), fc_test)


def fit_apply_platt(fc_calib, y_calib, fc_test) -> CalibratedIntervals:
    return apply_point_map(fit_platt(fc_calib, y_calib), fc_test)


def fit_apply_temp(fc_calib, y_calib, fc_test) -> CalibratedIntervals:
    return apply_point_map(fit_temp(fc_calib, y_calib), fc_test)


def fit_apply_histbin(fc_calib, y_calib, fc_test, n_bins: int = 15) -> CalibratedIntervals:
    return apply_point_map(fit_histbin(fc_calib, y_calib, n_bins), fc_test)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

DEFAULT_GRID = np.round(np.arange(1, 100) / 100.0, 2)


def empirical_cdf_curve(fc: ForecastSet, y, grid=DEFAULT_GRID):
    """``[(p, fraction of points with F_i(y_i) <= p)]`` over ``grid``."""
    u = np.asarray(fc.dist.cdf(np.asarray(y, dtype=float).reshape(fc.dist.shape)), dtype=float).ravel()
    if u.size == 0:
        raise DomainError("no points")
    u = np.sort(u)
    grid = np.asarray(grid, dtype=float)
    frac = np.searchsorted(u, grid, side="right") / u.size
    return list(zip(grid.tolist(), frac.tolist()))
