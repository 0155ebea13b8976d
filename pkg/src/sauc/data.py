"""Spatiotemporal count panels: CSV ingestion, aggregation, splits, adjacency
and a seeded zero-inflated NB generator.

Synthetic data use numpy's ``Philox`` (4x64, 10 rounds) counter-based bit
generator, so a ``(spec, seed)`` pair reproduces the same panel on any platform.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dist import PredictiveDistribution
from .errors import DomainError, ParseError


@dataclass(frozen=True, eq=False)
class CountPanel:
    """``values[i, t]`` is the count at node ``node_ids[i]`` and timestep ``t``."""

    values: np.ndarray
    node_ids: tuple
    timestep_seconds: int = 3600

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DomainError("panel values must be a nodes x timesteps matrix")
        if values.dtype.kind == "f":
            if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
                raise DomainError("panel counts must be integral")
        elif values.dtype.kind not in "iu":
            raise DomainError(f"unsupported count dtype {values.dtype}")
        if np.any(values < 0):
            raise DomainError("panel counts must be non-negative")
        values = values.astype(np.int64)  # always a fresh copy
        values.flags.writeable = False
        node_ids = tuple(str(n) for n in self.node_ids)
        if len(node_ids) != values.shape[0]:
            raise DomainError("node_ids length must equal the number of rows")
        if len(set(node_ids)) != len(node_ids):
            raise DomainError("duplicate node ids")
        if int(self.timestep_seconds) <= 0:
            raise DomainError("timestep_seconds must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "timestep_seconds", int(self.timestep_seconds))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def sparsity(self) -> float:
        return float(np.mean(self.values == 0))

    def __eq__(self, other):
        if not isinstance(other, CountPanel):
            return NotImplemented
        return (self.node_ids == other.node_ids
                and self.timestep_seconds == other.timestep_seconds
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class SplitIndex:
    train_end: int
    calib_end: int
    n_steps: int

    def __post_init__(self):
        if not 0 < self.train_end < self.calib_end < self.n_steps:
            raise DomainError(
                f"invalid split 0 < {self.train_end} < {self.calib_end} < {self.n_steps}")

    def bounds(self, tag: str) -> tuple[int, int]:
        if tag == "train":
            return 0, self.train_end
        if tag == "calib":
            return self.train_end, self.calib_end
        if tag == "test":
            return self.calib_end, self.n_steps
        raise DomainError(f"unknown split tag {tag!r}")


@dataclass(frozen=True, eq=False)
class Adjacency:
    weights: np.ndarray
    scale: float


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------

def _parse_count(text: str, line: int) -> int:
    text = text.strip()
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None
    if not math.isfinite(value) or value != math.floor(value):
        raise DomainError(f"line {line}: count {text!r} is not an integer")
    if value < 0:
        raise DomainError(f"line {line}: count {text!r} is negative")
    return int(value)


def _parse_timestep(text: str, line: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f"bad timestep {text!r}", line) from None


def _wide_cells(body, n_nodes: int):
    """Timesteps and an (n_rows, n_nodes) count matrix from parsed wide rows."""
    try:
        steps = np.array([row[0] for _, row in body], dtype=np.int64)
        counts = np.array([row[1:] for _, row in body], dtype=float).reshape(len(body), n_nodes)
        if np.all(np.isfinite(counts)) and np.all(counts >= 0) and np.all(counts == np.floor(counts)):
            return steps, counts.astype(np.int64)
    except ValueError:
        pass
    # slow path: pinpoint the offending cell
    steps = [_parse_timestep(row[0], line) for line, row in body]
    counts = [[_parse_count(c, line) for c in row[1:]] for line, row in body]
    return np.array(steps, dtype=np.int64), np.array(counts, dtype=np.int64).reshape(len(body), n_nodes)


def ingest_csv(path, layout: str = "wide", timestep_seconds: int = 3600) -> CountPanel:
    """Read a count panel from CSV.

    ``wide``: header ``timestep,<node>,<node>,...`` and one row per timestep.
    ``long``: header ``node_id,timestep,count``; every (node, timestep) cell in
    the range ``min..max`` timestep that the file omits is zero.  Timesteps
    come out sorted ascending in both layouts.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty CSV file")
    (hline, header), body = rows[0], rows[1:]
    header = [h.strip() for h in header]

    if layout == "wide":
        if len(header) < 2 or header[0] != "timestep":
            raise ParseError("wide layout needs header 'timestep,<node ids...>'", hline)
        nodes = header[1:]
        for line, row in body:
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        steps, counts = _wide_cells(body, len(nodes))
        if np.unique(steps).size != steps.size:
            raise ParseError("duplicate timestep rows")
        order = np.argsort(steps, kind="stable")
        return CountPanel(counts[order].T, tuple(nodes), timestep_seconds)

    if layout == "long":
        if header != ["node_id", "timestep", "count"]:
            raise ParseError("long layout needs header 'node_id,timestep,count'", hline)
        cells = {}
        nodes = {}
        for line, row in body:
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            node = row[0].strip()
            t = _parse_timestep(row[1], line)
            key = (node, t)
            if key in cells:
                raise ParseError(f"duplicate cell ({node}, {t})", line)
            cells[key] = _parse_count(row[2], line)
            nodes.setdefault(node, len(nodes))
        if not cells:
            raise ParseError("no data rows")
        # feeds omit zero rows, so fill the whole contiguous timestep range
        t_min = min(t for _, t in cells)
        t_max = max(t for _, t in cells)
        values = np.zeros((len(nodes), t_max - t_min + 1), dtype=np.int64)
        for (node, t), v in cells.items():
            values[nodes[node], t - t_min] = v
        return CountPanel(values, tuple(nodes), timestep_seconds)

    raise DomainError(f"layout must be 'wide' or 'long', got {layout!r}")


def write_csv(panel: CountPanel, path) -> None:
    """Write ``panel`` in the wide layout (timesteps numbered from 0)."""
    with Path(path).open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(["timestep", *panel.node_ids])
        body = np.column_stack([np.arange(panel.n_steps), panel.values.T])
        np.savetxt(fh, body, fmt="%d", delimiter=",")


# --------------------------------------------------------------------------
# reshaping
# --------------------------------------------------------------------------

def aggregate(panel: CountPanel, factor: int) -> CountPanel:
    """Sum consecutive blocks of ``factor`` timesteps; a trailing partial block is dropped."""
    if int(factor) != factor or factor < 1:
        raise DomainError("aggregation factor must be a positive integer")
    factor = int(factor)
    n_blocks = panel.n_steps // factor
    if n_blocks == 0:
        raise DomainError("aggregation factor exceeds the number of timesteps")
    v = panel.values[:, : n_blocks * factor].reshape(panel.n_nodes, n_blocks, factor).sum(axis=2)
    return CountPanel(v, panel.node_ids, panel.timestep_seconds * factor)


def split(panel_or_steps, fractions=(0.6, 0.2, 0.2)) -> SplitIndex:
    n_steps = panel_or_steps.n_steps if isinstance(panel_or_steps, CountPanel) else int(panel_or_steps)
    if len(fractions) != 3:
        raise DomainError("fractions must be (train, calib, test)")
    train, calib, test = (float(f) for f in fractions)
    if min(train, calib, test) <= 0:
        raise DomainError("every split fraction must be > 0")
    if abs(train + calib + test - 1.0) > 1e-9:
        raise DomainError("split fractions must sum to 1")
    # the 1e-9 nudge keeps e.g. (0.6 + 0.2) * 10 from flooring to 7
    train_end = math.floor(train * n_steps + 1e-9)
    calib_end = math.floor((train + calib) * n_steps + 1e-9)
    if not 0 < train_end < calib_end < n_steps:
        raise DomainError(f"fractions {fractions} leave an empty split for t={n_steps}")
    return SplitIndex(train_end, calib_end, n_steps)


def build_adjacency(centroids, scale: float = 0.1) -> Adjacency:
    """Exponential distance kernel ``exp(-d_ij / scale)`` on planar (Euclidean) centroids."""
    if not scale > 0:
        raise DomainError("scale must be > 0")
    xy = np.asarray(centroids, dtype=float)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise DomainError("centroids must be an (n, 2) array")
    if not np.all(np.isfinite(xy)):
        raise DomainError("centroid coordinates must be finite")
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    # far pairs would underflow to 0; keep every weight strictly positive
    w = np.maximum(np.exp(-d / scale), np.finfo(float).tiny)
    w = np.minimum(w, w.T)  # bit-exact symmetry
    np.fill_diagonal(w, 1.0)
    return Adjacency(w, float(scale))


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

def _as_node_vector(value, n, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DomainError(f"{name} must be a scalar or a list of {n} values")
    return arr


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the zero-inflated NB panel generator.

    ``mu`` is the marginal mean count per node (after zero inflation), so the
    NB component runs at ``mu / (1 - zero_inflation)``.  ``mu_spread`` > 0
    multiplies node rates by mean-one log-normal weights of that log-sd.
    """

    nodes: int
    steps: int
    mu: float | list = 1.0
    alpha: float | list = 1.0
    zero_inflation: float = 0.0
    seasonal_amplitude: float = 0.0
    seasonal_period: int = 24
    mu_spread: float = 0.0
    timestep_seconds: int = 3600

    def __post_init__(self):
        if int(self.nodes) < 1 or int(self.steps) < 1:
            raise DomainError("nodes and steps must be >= 1")
        mu = _as_node_vector(self.mu, int(self.nodes), "mu")
        alpha = _as_node_vector(self.alpha, int(self.nodes), "alpha")
        if np.any(~np.isfinite(mu)) or np.any(mu <= 0):
            raise DomainError("mu must be > 0")
        if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
            raise DomainError("alpha must be > 0")
        if not 0.0 <= self.zero_inflation < 1.0:
            raise DomainError("zero_inflation must lie in [0, 1)")
        if not 0.0 <= self.seasonal_amplitude < 1.0:
            raise DomainError("seasonal_amplitude must lie in [0, 1)")
        if int(self.seasonal_period) < 1:
            raise DomainError("seasonal_period must be >= 1")
        if self.mu_spread < 0:
            raise DomainError("mu_spread must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


# Hourly urban-crime-like regime: 77 areas, mean 0.3, half the cells structural
# zeros, a daily cycle and mildly heterogeneous area rates (sparsity ~0.79).
PRESETS = {
    "ccr-1h-like": {
        "nodes": 77, "steps": 20000, "mu": 0.3, "alpha": 5.0, "zero_inflation": 0.5,
        "seasonal_amplitude": 0.5, "seasonal_period": 24, "mu_spread": 0.3,
    },
}


def preset(name: str, **overrides) -> SyntheticSpec:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SyntheticSpec.from_dict(base)


def generate_synthetic(spec: SyntheticSpec, seed: int):
    """Draw a panel and return it with the per-point NB the data were drawn from.

    Mask-then-sample: each cell is a structural zero with probability
    ``zero_inflation``, otherwise an NB(``mu_it / (1 - pi)``, ``alpha_i``) draw, where
    ``mu_it = mu_i * (1 + A sin(2 pi t / P))``.  With ``pi > 0`` the zero-inflated
    law has no NB form; the returned truth is the NB matching its first two
    moments: mean ``mu_it`` and dispersion ``alpha (1 - pi) / (1 + pi alpha)``.
    """
    if not 0 <= int(seed) < 2**64:
        raise DomainError("seed must be an unsigned 64-bit integer")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    n, t = int(spec.nodes), int(spec.steps)
    pi = float(spec.zero_inflation)
    mu_node = _as_node_vector(spec.mu, n, "mu")
    alpha_node = _as_node_vector(spec.alpha, n, "alpha")

    if spec.mu_spread > 0:
        w = rng.lognormal(0.0, spec.mu_spread, size=n)
        mu_node = mu_node * (w / w.mean())
    phase = 2.0 * np.pi * np.arange(t) / spec.seasonal_period
    season = 1.0 + spec.seasonal_amplitude * np.sin(phase)
    mu = mu_node[:, None] * season[None, :]
    alpha = np.broadcast_to(alpha_node[:, None], (n, t))

    keep = rng.random((n, t)) >= pi
    mu_nb = mu / (1.0 - pi)
    counts = rng.negative_binomial(alpha, alpha / (mu_nb + alpha))
    counts = np.where(keep, counts, 0)

    alpha_eff = alpha * (1.0 - pi) / (1.0 + pi * alpha)
    truth = PredictiveDistribution.nb(mu, alpha_eff)
    panel = CountPanel(counts, tuple(f"n{i:03d}" for i in range(n)), spec.timestep_seconds)
    return panel, truth
