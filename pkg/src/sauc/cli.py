"""``sauc`` command line: generate / ingest data, forecast, calibrate, evaluate, sweep.

Every command works inside one run directory (``--out``).  Stages read the
files earlier stages left there, so ``pipeline`` is the same as running
``generate`` (or ``ingest``), ``forecast``, ``calibrate`` and ``evaluate`` in turn.

Config is one JSON file; command-line flags override it.  Files are written to
a temporary name and renamed into place, and each command refreshes
``manifest.json`` with the sha256 of every file in the run directory.
"""
import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import calib, data, forecaster, metrics
from .errors import DomainError, MetricUndefinedError, ParseError, StateError

log = logging.getLogger("sauc")

DEFAULT_CONFIG = {
    "seed": None,
    "dataset": {"synthetic": "ccr-1h-like"},
    "split": [0.6, 0.2, 0.2],
    "forecaster": {"kind": "oracle", "bias_mu": 1.0, "bias_alpha": 4.0},
    "calibrator": {"kind": "SAUC", "n_bins": 15, "zero_threshold": 0.5,
                   "bin_on": "mu_hat", "mu_star": "midpoint"},
    "metrics": {"c": metrics.C_DEFAULT, "n_bins": 15, "filters": ["all", "zero_only"]},
    "sweep": {"bins": [1, 5, 10, 15, 20, 25, 30]},
    "jobs": 1,
}

PANEL = "panel.csv"
TRUTH = "truth.csv"
FC_CALIB = "forecast_calib.csv"
FC_TEST = "forecast_test.csv"
MANIFEST = "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"[{stage}] {err}")
        self.stage = stage
        self.cause = err

# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _zero_threshold(text):
    if text is None or str(text).lower() in ("none", "off", "-inf"):
        return None
    return float(text)


def resolve_config(args) -> dict:
    """Defaults, then the JSON file, then flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e.msg}", e.lineno) from None
        cfg = _merge(cfg, user)
        if "dataset" in user:
            cfg["dataset"] = copy.deepcopy(user["dataset"])     # a dataset is one choice, never a blend
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "calibrator", None):
        kinds = [k.strip() for k in args.calibrator.split(",") if k.strip()]
        cfg["calibrator"]["kind"] = kinds[0] if len(kinds) == 1 else kinds
    if getattr(args, "bins", None):
        bins = [int(b) for b in str(args.bins).split(",")]
        if args.command == "sweep-bins":
            cfg["sweep"]["bins"] = bins
        else:
            cfg["calibrator"]["n_bins"] = bins[0]
    if getattr(args, "zero_threshold", None) is not None:
        cfg["calibrator"]["zero_threshold"] = _zero_threshold(args.zero_threshold)
    if getattr(args, "c", None) is not None:
        cfg["metrics"]["c"] = args.c
    if getattr(args, "filter", None):
        cfg["metrics"]["filters"] = [metrics.normalize_filter(f) for f in args.filter]
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "input", None):
        cfg["dataset"] = {"csv": args.input, "layout": args.layout}
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    ds = cfg["dataset"]
    if "synthetic" in ds:
        if cfg["seed"] is None:
            raise DomainError("a seed is required for synthetic datasets (--seed or config 'seed')")
        if not 0 <= int(cfg["seed"]) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        synthetic_spec(cfg)         # raises on a bad spec
    elif "csv" in ds:
        if not Path(ds["csv"]).is_file():
            raise DomainError(f"dataset file {ds['csv']} does not exist")
        if ds.get("layout", "wide") not in ("wide", "long"):
            raise DomainError("layout must be 'wide' or 'long'")
    else:
        raise DomainError("dataset needs a 'synthetic' spec or a 'csv' path")
    kinds = calibrator_kinds(cfg)
    for k in kinds:
        if k not in calib.ALL_KINDS:
            raise DomainError(f"unknown calibrator {k!r}; choose from {list(calib.ALL_KINDS)}")
    fk = cfg["forecaster"].get("kind")
    if fk not in ("oracle", "seasonal"):
        raise DomainError("forecaster kind must be 'oracle' or 'seasonal'")
    if fk == "oracle" and "synthetic" not in ds:
        raise DomainError("the oracle forecaster needs a synthetic dataset")
    if not float(cfg["metrics"]["c"]) > 0:
        raise DomainError("c must be > 0")
    if int(cfg["jobs"]) < 1:
        raise DomainError("jobs must be >= 1")
    for f in cfg["metrics"]["filters"]:
        metrics.normalize_filter(f)


def calibrator_kinds(cfg: dict) -> list:
    kind = cfg["calibrator"]["kind"]
    return [kind] if isinstance(kind, str) else list(kind)


def synthetic_spec(cfg: dict) -> data.SyntheticSpec:
    spec = cfg["dataset"]["synthetic"]
    if isinstance(spec, str):
        return data.preset(spec)
    if isinstance(spec, dict) and "preset" in spec:
        rest = {k: v for k, v in spec.items() if k != "preset"}
        return data.preset(spec["preset"], **rest)
    return data.SyntheticSpec.from_dict(spec)


def _public(cfg: dict) -> dict:
    # ``jobs`` only affects scheduling, so it stays out of hashes and manifests
    return {k: v for k, v in cfg.items() if k != "jobs"}


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical config, ``jobs`` excluded."""
    cfg = _public(cfg)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()

# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, writer) -> Path:
    """Call ``writer(tmp_path)`` then rename onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def atomic_text(path, text: str) -> Path:
    return atomic_write(path, lambda p: p.write_text(text))


def atomic_json(path, obj) -> Path:
    return atomic_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_forecast(fc: forecaster.ForecastSet, path) -> None:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    atomic_write(path, lambda p: atomic_write(sidecar, lambda s: fc.write(p, s)))


def update_manifest(out: Path, extra: dict | None = None) -> dict:
    """Checksum every file under ``out`` (manifest excluded) into ``manifest.json``."""
    mpath = out / MANIFEST
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    if extra:
        manifest.update(extra)
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST and not p.name.startswith(".tmp-"):
            files[p.relative_to(out).as_posix()] = sha256_file(p)
    manifest["files"] = files
    atomic_json(mpath, manifest)
    return manifest


def _stage(name):
    def wrap(fn):
        def run(*a, **kw):
            log.info("stage %s", name)
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except (DomainError, ParseError, StateError, OSError, ValueError) as e:
                raise StageError(name, e) from e
        return run
    return wrap

# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


@_stage("generate")
def stage_generate(cfg: dict, out: Path) -> dict:
    spec = synthetic_spec(cfg)
    panel, truth = data.generate_synthetic(spec, int(cfg["seed"]))
    atomic_write(out / PANEL, lambda p: data.write_csv(panel, p))
    fc = forecaster.ForecastSet(truth, panel.node_ids, 0, "all", "truth", int(cfg["seed"]))
    write_forecast(fc, out / TRUTH)
    info = {"spec": spec.to_dict(), "seed": int(cfg["seed"]), "sparsity": panel.sparsity,
            "n_nodes": panel.n_nodes, "n_steps": panel.n_steps}
    log.info("generated %d x %d panel, sparsity %.3f", panel.n_nodes, panel.n_steps, panel.sparsity)
    return info


@_stage("ingest")
def stage_ingest(cfg: dict, out: Path) -> dict:
    ds = cfg["dataset"]
    panel = data.ingest_csv(ds["csv"], ds.get("layout", "wide"), int(ds.get("timestep_seconds", 3600)))
    atomic_write(out / PANEL, lambda p: data.write_csv(panel, p))
    return {"source": str(ds["csv"]), "layout": ds.get("layout", "wide"), "sparsity": panel.sparsity,
            "n_nodes": panel.n_nodes, "n_steps": panel.n_steps}


def load_panel(cfg: dict, out: Path) -> data.CountPanel:
    path = out / PANEL
    if not path.exists():
        raise DomainError(f"{path} missing; run generate or ingest first")
    ts = int(cfg["dataset"].get("timestep_seconds", 3600)) if isinstance(cfg["dataset"], dict) else 3600
    return data.ingest_csv(path, "wide", ts)


@_stage("forecast")
def stage_forecast(cfg: dict, out: Path):
    panel = load_panel(cfg, out)
    sp = data.split(panel, tuple(cfg["split"]))
    fcfg = cfg["forecaster"]
    if fcfg["kind"] == "oracle":
        truth_path = out / TRUTH
        if not truth_path.exists():
            raise DomainError(f"{truth_path} missing; the oracle needs generated data")
        truth = forecaster.ForecastSet.read(truth_path)
        distortion = forecaster.DistortionSpec(float(fcfg.get("bias_mu", 1.0)),
                                               float(fcfg.get("bias_alpha", 1.0)))
        full = forecaster.oracle_forecast(truth.dist, truth.node_ids, distortion, seed=cfg.get("seed"))
        fc_calib = full.select(*sp.bounds("calib"), "calib")
        fc_test = full.select(*sp.bounds("test"), "test")
    else:
        model = forecaster.fit_seasonal_nb(panel, sp, int(fcfg.get("period", 24)))
        fc_calib = forecaster.predict(model, panel, sp, "calib")
        fc_test = forecaster.predict(model, panel, sp, "test")
    write_forecast(fc_calib, out / FC_CALIB)
    write_forecast(fc_test, out / FC_TEST)
    return panel, fc_calib, fc_test


def _load_forecasts(out: Path):
    for name in (FC_CALIB, FC_TEST):
        if not (out / name).exists():
            raise DomainError(f"{out / name} missing; run forecast first")
    return forecaster.ForecastSet.read(out / FC_CALIB), forecaster.ForecastSet.read(out / FC_TEST)


def _fit(kind: str, cfg: dict, fc_calib, y_calib, n_bins=None):
    c = cfg["calibrator"]
    return calib.fit_calibrator(
        kind, fc_calib, y_calib,
        n_bins=int(n_bins if n_bins is not None else c.get("n_bins", 15)),
        zero_threshold=_zero_threshold(c.get("zero_threshold", 0.5)),
        bin_on=c.get("bin_on", "mu_hat"), mu_star=c.get("mu_star", "midpoint"),
    )


def _calib_dir(out: Path, kind: str, kinds: list) -> Path:
    return out / kind if len(kinds) > 1 else out


@_stage("calibrate")
def stage_calibrate(cfg: dict, out: Path, panel=None, fc_calib=None, fc_test=None) -> dict:
    panel = panel if panel is not None else load_panel(cfg, out)
    if fc_calib is None:
        fc_calib, fc_test = _load_forecasts(out)
    y_calib = fc_calib.targets(panel)
    kinds = calibrator_kinds(cfg)

    def one(kind):
        model = _fit(kind, cfg, fc_calib, y_calib)
        return kind, model, calib.apply_calibrator(model, fc_test)

    results = _parallel(one, kinds, int(cfg["jobs"]))
    for kind, model, iv in results:
        d = _calib_dir(out, kind, kinds)
        atomic_write(d / "calibrator.json", model.write)
        atomic_write(d / "intervals.csv", iv.write)
    return {kind: iv for kind, _, iv in results}


def _report(iv, y, cfg: dict, filt: str, n_bins=None) -> dict:
    m = cfg["metrics"]
    try:
        rep = metrics.ence(iv, y, n_bins=int(n_bins or m["n_bins"]), c=float(m["c"]), filter=filt)
    except MetricUndefinedError as e:
        return {"filter": metrics.normalize_filter(filt), "error": str(e)}
    if rep.filter == "all":
        try:
            rep.slope = metrics.width_rmse_slope(iv, y, int(m["n_bins"]))
        except MetricUndefinedError:
            rep.slope = None
    return rep.to_dict()


def evaluate_intervals(iv, y, cfg: dict, d: Path, prefix: str) -> dict:
    """Metrics JSON plus reliability CSVs for every configured filter."""
    m = cfg["metrics"]
    reports = {}
    for filt in m["filters"]:
        filt = metrics.normalize_filter(filt)
        reports[filt] = _report(iv, y, cfg, filt)
        try:
            curve = metrics.reliability_curve(iv, y, int(m["n_bins"]), float(m["c"]), filt)
        except DomainError:
            curve = []
        atomic_write(d / f"reliability_{prefix}_{filt}.csv",
                     lambda p, curve=curve: metrics.write_reliability_csv(curve, p))
    atomic_json(d / f"metrics_{prefix}.json", {"config_hash": config_hash(cfg), "reports": reports})
    return reports


def write_node_risk(iv, path) -> None:
    risk = metrics.node_risk(iv)

    def writer(p):
        lines = ["node_id,risk_score"] + [f"{k},{float(v)!r}" for k, v in risk.items()]
        p.write_text("\n".join(lines) + "\n")
    atomic_write(path, writer)


@_stage("evaluate")
def stage_evaluate(cfg: dict, out: Path, panel=None, fc_test=None, intervals=None) -> dict:
    panel = panel if panel is not None else load_panel(cfg, out)
    if fc_test is None:
        _, fc_test = _load_forecasts(out)
    y = fc_test.targets(panel)
    kinds = calibrator_kinds(cfg)
    summary = {"pre": evaluate_intervals(calib.identity_intervals(fc_test), y, cfg, out, "pre")}
    for kind in kinds:
        d = _calib_dir(out, kind, kinds)
        if intervals is not None:
            iv = intervals[kind]
        else:
            if not (d / "intervals.csv").exists():
                raise DomainError(f"{d / 'intervals.csv'} missing; run calibrate first")
            iv = calib.CalibratedIntervals.read(d / "intervals.csv", fc_test.model_id, kind)
        summary[kind] = evaluate_intervals(iv, y, cfg, d, "post")
        write_node_risk(iv, d / "node_risk.csv")
    return summary


def _dataset_stage(cfg, out):
    return stage_generate(cfg, out) if "synthetic" in cfg["dataset"] else stage_ingest(cfg, out)


def cmd_pipeline(cfg: dict, out: Path) -> dict:
    info = _dataset_stage(cfg, out)
    panel, fc_calib, fc_test = stage_forecast(cfg, out)
    ivs = stage_calibrate(cfg, out, panel, fc_calib, fc_test)
    summary = stage_evaluate(cfg, out, panel, fc_test, ivs)
    update_manifest(out, {"command": "pipeline", "config": _public(cfg), "config_hash": config_hash(cfg),
                          "dataset": info})
    return summary


@_stage("sweep-bins")
def cmd_sweep_bins(cfg: dict, out: Path, bins=None) -> list:
    """Per N: SAUC with N bins, evaluated with N ENCE bins on all and zero-only targets."""
    bins = list(bins or cfg["sweep"]["bins"])
    if not (out / PANEL).exists():
        _dataset_stage(cfg, out)
    if not (out / FC_CALIB).exists():
        stage_forecast(cfg, out)
    panel = load_panel(cfg, out)
    fc_calib, fc_test = _load_forecasts(out)
    y_calib, y_test = fc_calib.targets(panel), fc_test.targets(panel)

    def one(n):
        t = time.perf_counter()
        iv = calib.apply_calibrator(_fit("SAUC", cfg, fc_calib, y_calib, n_bins=n), fc_test)
        row = [n]
        for filt in ("all", "zero_only"):
            try:
                row.append(metrics.ence(iv, y_test, n_bins=n, c=float(cfg["metrics"]["c"]), filter=filt).ence)
            except (MetricUndefinedError, DomainError):
                row.append(float("nan"))
        row.append((time.perf_counter() - t) * 1e3)
        return row

    # compile the kernels outside the timed region
    calib.fit_calibrator("SAUC", fc_calib.select(fc_calib.t0, fc_calib.t0 + 1, "warmup"), y_calib[:, :1], n_bins=1)
    rows = _parallel(one, bins, int(cfg["jobs"]))
    text = "n_bins,ence_all,ence_zero,wall_ms\n" + "".join(
        f"{n},{a!r},{z!r},{w:.3f}\n" for n, a, z, w in rows)
    atomic_text(out / "sweep_bins.csv", text)
    return rows


def _parallel(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))       # map keeps input order

# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sauc", description="Sparsity-aware interval calibration.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="run", help="run directory (default: ./run)")
    common.add_argument("--jobs", type=int)
    common.add_argument("--calibrator", help="calibrator kind, or a comma-separated list")
    common.add_argument("--bins", help="calibration bins (sweep-bins: comma-separated list)")
    common.add_argument("--zero-threshold", help="zero/non-zero split point, or 'none'")
    common.add_argument("--c", type=float, help="ENCE normalising constant")
    common.add_argument("--filter", action="append", choices=["all", "zero", "nonzero"],
                        help="target filter for metrics (repeatable)")
    for name, help_ in [("generate", "draw a synthetic panel"),
                        ("forecast", "produce calibration and test forecasts"),
                        ("calibrate", "fit calibrators and write intervals"),
                        ("evaluate", "write pre/post metrics, reliability curves and risk scores"),
                        ("pipeline", "run every stage"),
                        ("sweep-bins", "ENCE across SAUC bin counts")]:
        sub.add_parser(name, parents=[common], help=help_)
    ing = sub.add_parser("ingest", parents=[common], help="load a count CSV into the run directory")
    ing.add_argument("--input", required=True)
    ing.add_argument("--layout", choices=["wide", "long"], default="wide")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SAUC_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        extra = {"command": cmd, "config": _public(cfg), "config_hash": config_hash(cfg)}
        if cmd == "generate":
            if "synthetic" not in cfg["dataset"]:
                raise DomainError("generate needs a synthetic dataset in the config")
            extra["dataset"] = stage_generate(cfg, out)
        elif cmd == "ingest":
            extra["dataset"] = stage_ingest(cfg, out)
        elif cmd == "forecast":
            stage_forecast(cfg, out)
        elif cmd == "calibrate":
            stage_calibrate(cfg, out)
        elif cmd == "evaluate":
            stage_evaluate(cfg, out)
        elif cmd == "pipeline":
            cmd_pipeline(cfg, out)
            extra = None
        elif cmd == "sweep-bins":
            for n, a, z, w in cmd_sweep_bins(cfg, out):
                print(f"N={n:3d} ence_all={a:.4f} ence_zero={z:.4f} wall_ms={w:.1f}")
        if extra is not None:
            update_manifest(out, extra)
    except StageError as e:
        print(f"sauc: error: {e}", file=sys.stderr)
        return 2
    except (DomainError, ParseError, StateError, OSError) as e:
        print(f"sauc: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
