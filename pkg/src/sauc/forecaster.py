"""Per-point probabilistic forecasts.

Two producers of :class:`ForecastSet`: a seasonal negative-binomial model fitted
by moment matching on the training slice, and an oracle that hands back (a
distorted copy of) the synthetic generator's true distributions.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._grid import read_grid, write_grid
from .data import CountPanel, SplitIndex
from .dist import Family, PredictiveDistribution
from .errors import DomainError, ParseError

ALPHA_MAX = 1e4
EPSILON = 1e-10

_PARAM_COLUMNS = {
    Family.NB: ("mu", "alpha"),
    Family.POISSON: ("lambda",),
    Family.GAUSSIAN: ("mu", "sigma"),
}


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """Forecasts for every node over the contiguous timesteps ``t0 .. t0 + n_steps - 1``.

    ``dist`` holds parameters shaped ``(n_nodes, n_steps)``; flattening is
    node-major everywhere (files, calibrators, metrics).
    """

    dist: PredictiveDistribution
    node_ids: tuple
    t0: int
    split_tag: str
    model_id: str
    seed: int | None = None

    def __post_init__(self):
        if self.dist.loc.ndim != 2 or self.dist.shape[0] != len(self.node_ids):
            raise DomainError("forecast parameters must be shaped (n_nodes, n_steps)")
        object.__setattr__(self, "node_ids", tuple(self.node_ids))

    @property
    def n_steps(self) -> int:
        return self.dist.shape[1]

    @property
    def timesteps(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.n_steps)

    def targets(self, panel: CountPanel) -> np.ndarray:
        if panel.node_ids != self.node_ids:
            raise DomainError("forecast and panel node ids differ")
        if self.t0 < 0 or self.t0 + self.n_steps > panel.n_steps:
            raise DomainError("forecast timesteps fall outside the panel")
        return panel.values[:, self.t0:self.t0 + self.n_steps]

    def select(self, start: int, stop: int, split_tag: str) -> "ForecastSet":
        """Restrict to absolute timesteps ``[start, stop)``."""
        if not self.t0 <= start < stop <= self.t0 + self.n_steps:
            raise DomainError("selection outside the forecast range")
        sub = self.dist[:, start - self.t0:stop - self.t0]
        return ForecastSet(sub, self.node_ids, start, split_tag, self.model_id, self.seed)

    # -- files -------------------------------------------------------------

    def write(self, csv_path, sidecar_path=None) -> None:
        """CSV ``node_id,timestep,family,<params>`` plus a ``.json`` sidecar."""
        csv_path = Path(csv_path)
        sidecar_path = csv_path.with_suffix(".json") if sidecar_path is None else Path(sidecar_path)
        family = self.dist.family
        params = [self.dist.loc] if self.dist.scale is None else [self.dist.loc, self.dist.scale]
        with csv_path.open("w", newline="") as fh:
            write_grid(fh, ["node_id", "timestep", "family", *_PARAM_COLUMNS[family]],
                       self.node_ids, self.t0, [family.value, *params])
        sidecar = {"model_id": self.model_id, "split_tag": self.split_tag, "seed": self.seed}
        sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, csv_path) -> "ForecastSet":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        header, nodes, t0, (families,), params = read_grid(csv_path, n_keys=3)
        if header[:3] != ["node_id", "timestep", "family"]:
            raise ParseError("forecast CSV needs header node_id,timestep,family,...", 1)
        kinds = set(families)
        if len(kinds) != 1:
            raise ParseError(f"mixed families in one forecast file: {sorted(kinds)}")
        family = Family(kinds.pop())
        if tuple(header[3:]) != _PARAM_COLUMNS[family]:
            raise ParseError(f"columns {header[3:]} do not match family {family.value}", 1)
        scale = params[1] if params.shape[0] == 2 else None
        dist = PredictiveDistribution(family, params[0], scale)
        return cls(dist, nodes, t0, meta["split_tag"], meta["model_id"], meta.get("seed"))


# --------------------------------------------------------------------------
# seasonal moment-matched NB
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeasonalNBModel:
    mu: np.ndarray      # (n_nodes, period)
    alpha: np.ndarray   # (n_nodes, period)
    period: int
    split: SplitIndex
    node_ids: tuple

    @property
    def model_id(self) -> str:
        return f"seasonal-nb-p{self.period}"


def _moments(x):
    n = x.size
    m = float(x.mean()) if n else 0.0
    v = float(x.var(ddof=1)) if n >= 2 else 0.0
    return n, m, v


def _match(m: float, v: float) -> tuple[float, float]:
    mu = max(m, EPSILON)
    if v <= m:
        return mu, ALPHA_MAX
    return mu, min(mu**2 / max(v - mu, EPSILON), ALPHA_MAX)


def fit_seasonal_nb(panel: CountPanel, split: SplitIndex, period: int = 1) -> SeasonalNBModel:
    """Moment-matched NB per (node, phase ``t mod period``) on the training slice.

    A bucket with fewer than two training points uses the node's pooled
    training moments instead.  ``v <= m`` (no overdispersion) gives the Poisson
    cap ``alpha = ALPHA_MAX``.
    """
    if int(period) != period or period < 1:
        raise DomainError("period must be a positive integer")
    if split.n_steps != panel.n_steps:
        raise DomainError("split does not match the panel length")
    period = int(period)
    train = panel.values[:, : split.train_end].astype(float)
    phase = np.arange(split.train_end) % period
    mu = np.empty((panel.n_nodes, period))
    alpha = np.empty((panel.n_nodes, period))
    panel_stats = _moments(train.ravel())
    for i in range(panel.n_nodes):
        node_stats = _moments(train[i])
        if node_stats[0] < 2:
            node_stats = panel_stats
        for k in range(period):
            n, m, v = _moments(train[i, phase == k])
            if n < 2:
                _, m, v = node_stats
            mu[i, k], alpha[i, k] = _match(m, v)
    return SeasonalNBModel(mu, alpha, period, split, panel.node_ids)


def predict(model: SeasonalNBModel, panel: CountPanel, split: SplitIndex, target: str) -> ForecastSet:
    if split != model.split or panel.node_ids != model.node_ids:
        raise DomainError("model was fitted on a different panel or split")
    if target not in ("calib", "test"):
        raise DomainError("target must be 'calib' or 'test'")
    start, stop = split.bounds(target)
    phase = np.arange(start, stop) % model.period
    dist = PredictiveDistribution.nb(model.mu[:, phase], model.alpha[:, phase])
    return ForecastSet(dist, panel.node_ids, start, target, model.model_id)


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DistortionSpec:
    """Multiplicative bias on the mean and on the scale parameter (alpha / sigma)."""

    bias_mu: float = 1.0
    bias_alpha: float = 1.0

    def __post_init__(self):
        if not (self.bias_mu > 0 and self.bias_alpha > 0):
            raise DomainError("distortion factors must be > 0")


def oracle_forecast(truth: PredictiveDistribution, node_ids, distortion: DistortionSpec = DistortionSpec(),
                    t0: int = 0, split_tag: str = "all", seed: int | None = None) -> ForecastSet:
    """Distorted copy of the true distributions; ``(1, 1)`` returns them unchanged.

    ``bias_alpha > 1`` raises the NB dispersion parameter, shrinking the
    predicted variance (overconfident intervals).
    """
    loc = truth.loc * distortion.bias_mu
    scale = None if truth.scale is None else truth.scale * distortion.bias_alpha
    dist = PredictiveDistribution(truth.family, loc, scale)
    model_id = f"oracle-bmu{distortion.bias_mu:g}-balpha{distortion.bias_alpha:g}"
    return ForecastSet(dist, tuple(node_ids), t0, split_tag, model_id, seed)
