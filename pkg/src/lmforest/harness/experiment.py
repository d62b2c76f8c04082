"""End-to-end experiment runner.

One experiment = a cohort (read from CSV or simulated), `n_splits` seeded
admission-level train/test splits, and a list of model variants fitted and
evaluated on every split. Each (split, variant) cell gets its own seed
derived by hashing the master seed with the cell coordinates, so runs
reproduce bit-exactly and cells can run in parallel. A failing cell is
recorded and skipped; the rest of the grid still completes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import simgen
from ..cohort import (
    ImputePolicy,
    LandmarkFrame,
    binary_labels,
    fit_imputer,
    read_landmark_csv,
    split_by_admission,
)
from ..errors import InvalidInputError
from ..forest import Hyperparams, minimal_depth_importance
from ..metrics import (
    METRIC_NAMES,
    MetricReport,
    calibration_curve,
    net_benefit,
    per_landmark_reports,
    pooled_reports,
)
from ..tuning import (
    baseline_space,
    dynamic_space,
    oob_logloss_objective,
    tune,
    write_trace_csv,
)
from .variants import MODES, encode_outcome, prepare_rows, variant, variant_names, variant_pipeline

SCHEMA_VERSION = 1
TIMING_PHASES = ("tune", "build", "predict")


def _fmt(value) -> str:
    return repr(float(value))


@dataclass
class ExperimentConfig:
    cohort_csv: str | None = None
    simulate: dict | None = None
    mode: str = "baseline"
    n_splits: int = 100
    train_fraction: float = 2.0 / 3.0
    horizon: float = 7.0
    variants: list[str] | None = None
    tuning: bool = False
    tuning_n_trees: int = 50
    n_trees: int = 1000
    mtry: int = 5
    nodesize: int = 50
    subsample_fraction: float | None = None
    seed: int = 0
    out_dir: str = "experiment-out"
    jobs: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidInputError(
                f"config schema_version must be {SCHEMA_VERSION}, got {self.schema_version}"
            )
        if (self.cohort_csv is None) == (self.simulate is None):
            raise InvalidInputError("config needs exactly one of cohort_csv or simulate")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_splits < 1:
            raise InvalidInputError("n_splits must be at least 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise InvalidInputError("train_fraction must lie strictly between 0 and 1")
        if self.horizon <= 0:
            raise InvalidInputError("horizon must be positive")
        if self.jobs < 1:
            raise InvalidInputError("jobs must be at least 1")
        allowed = set(variant_names(self.mode))
        for name in self.resolved_variants():
            spec = variant(name)
            if spec.name not in allowed:
                raise InvalidInputError(
                    f"variant {name!r} is not available in {self.mode} mode"
                )

    def resolved_variants(self) -> list[str]:
        return list(self.variants) if self.variants else variant_names(self.mode)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidInputError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(**raw)


def cell_seed(master: int, split_id: int, variant_name: str) -> int:
    """Stable per-cell seed: low 8 bytes of a SHA-256 over the coordinates."""
    digest = hashlib.sha256(f"{master}|{split_id}|{variant_name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def load_cohort(config: ExperimentConfig) -> LandmarkFrame:
    if config.cohort_csv is not None:
        return read_landmark_csv(config.cohort_csv)
    options = dict(config.simulate)
    sim_config = simgen.default_config(
        n_admissions=int(options.pop("n_admissions", 2000)),
        seed=int(options.pop("seed", 0)),
    )
    if options:
        try:
            sim_config = replace(sim_config, **options)
        except TypeError as exc:
            raise InvalidInputError(f"bad simulate options: {exc}") from None
    return simgen.simulate_cohort(sim_config).frame


# ---------------------------------------------------------------------------
# one (split, variant) cell
# ---------------------------------------------------------------------------


@dataclass
class _CellOutput:
    split_id: int
    model: str
    ok: bool
    error: str = ""
    admission_id: np.ndarray | None = None
    episode_id: np.ndarray | None = None
    lm: np.ndarray | None = None
    risk: np.ndarray | None = None
    y: np.ndarray | None = None
    timings: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)
    mean_min_depth: np.ndarray | None = None
    usage: np.ndarray | None = None
    trace: list | None = None


def _run_cell(args) -> _CellOutput:
    config, split_id, name, train, test = args
    spec = variant(name)
    seed = cell_seed(config.seed, split_id, name)
    hp = Hyperparams(config.n_trees, config.mtry, config.nodesize,
                     config.subsample_fraction, seed)
    try:
        seconds_tune = 0.0
        trace = None
        if config.tuning:
            t0 = time.perf_counter()
            rows, X, _ = prepare_rows(train, config.mode)
            outcome = encode_outcome(spec, rows, config.horizon)
            y_bin = binary_labels(rows.event_type, rows.event_time, rows.lm, config.horizon)
            dynamic = config.mode == "dynamic"
            space = dynamic_space() if dynamic else baseline_space()
            base = Hyperparams(config.tuning_n_trees, config.mtry, config.nodesize,
                               config.subsample_fraction, seed)
            objective = oob_logloss_objective(
                X, rows.admission_id, outcome, spec.rule, base, y_bin,
                sample_mode="subsample" if dynamic else "bootstrap",
                horizon=config.horizon,
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                result = tune(objective, space, seed=seed)
            hp = replace(
                hp,
                mtry=int(result.best_params["mtry"]),
                nodesize=int(result.best_params["nodesize"]),
                subsample_fraction=result.best_params.get(
                    "subsample_fraction", hp.subsample_fraction
                ),
            )
            trace = result.trace
            seconds_tune = time.perf_counter() - t0

        cell = variant_pipeline(spec, train, test, config.mode, hp, config.horizon)
        depth, usage = minimal_depth_importance(cell.forest)
        feature_names = list(cell.forest.feature_names)
        return _CellOutput(
            split_id, name, True,
            admission_id=cell.rows.admission_id,
            episode_id=cell.rows.episode_id,
            lm=cell.rows.lm,
            risk=cell.risk,
            y=cell.y,
            timings=[("tune", seconds_tune), ("build", cell.seconds_build),
                     ("predict", cell.seconds_predict)],
            feature_names=feature_names,
            mean_min_depth=depth,
            usage=usage,
            trace=trace,
        )
    except Exception as exc:  # noqa: BLE001 - cell isolation by contract
        return _CellOutput(split_id, name, False, error=f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, lines: list[str]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _metric_rows(reports: list[MetricReport]) -> list[str]:
    rows = []
    for r in reports:
        lm = "" if r.lm is None else str(int(r.lm))
        value = "" if r.value is None else _fmt(r.value)
        rows.append(f"{r.split_id},{r.model},{r.scope},{lm},{r.metric},{value}")
    return rows


def _summary_rows(reports: list[MetricReport], models: list[str]) -> list[str]:
    rows = []
    for model in models:
        for metric in METRIC_NAMES:
            values = [
                r.value for r in reports
                if r.model == model and r.scope == "pooled"
                and r.metric == metric and r.value is not None
            ]
            if not values:
                rows.append(f"{model},{metric},,,,")
                continue
            q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
            display = f"{med:.3f} ({q1:.3f}-{q3:.3f})"
            rows.append(f"{model},{metric},{_fmt(med)},{_fmt(q1)},{_fmt(q3)},{display}")
    return rows


def _emit_curves(out: Path, models: list[str], pooled: dict) -> None:
    curves = out / "curves"
    curves.mkdir(parents=True, exist_ok=True)

    deciles = ["model,predicted,observed,count"]
    splines = ["model,predicted,observed"]
    benefit = ["model,threshold,net_benefit,treat_all,treat_none"]
    density = ["model,bin_left,bin_right,count"]
    edges = np.linspace(0.0, 1.0, 51)
    for model in models:
        if model not in pooled:
            continue
        p, y = pooled[model]
        curve = calibration_curve(p, y, method="deciles")
        if curve is not None:
            for x, obs, count in zip(curve.x, curve.y, curve.counts):
                deciles.append(f"{model},{_fmt(x)},{_fmt(obs)},{int(count)}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            smooth = calibration_curve(p, y, method="splines")
        if smooth is not None:
            for x, obs in zip(smooth.x, smooth.y):
                splines.append(f"{model},{_fmt(x)},{_fmt(obs)}")
        nb = net_benefit(p, y)
        for t, m, ta, tn in zip(nb.threshold, nb.model, nb.treat_all, nb.treat_none):
            benefit.append(f"{model},{_fmt(t)},{_fmt(m)},{_fmt(ta)},{_fmt(tn)}")
        counts = np.bincount(
            np.clip(np.searchsorted(edges, p, side="right") - 1, 0, 49), minlength=50
        )
        for b in range(50):
            density.append(f"{model},{_fmt(edges[b])},{_fmt(edges[b + 1])},{int(counts[b])}")

    _atomic_write(curves / "calibration_deciles.csv", deciles)
    _atomic_write(curves / "calibration_spline.csv", splines)
    _atomic_write(curves / "net_benefit.csv", benefit)
    _atomic_write(curves / "risk_density.csv", density)


def emit_reports(config: ExperimentConfig, cells: list[_CellOutput]) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    models = config.resolved_variants()

    reports: list[MetricReport] = []
    predictions = ["split_id,model,admission_id,episode_id,lm,risk"]
    timings = ["split_id,model,phase,seconds"]
    importance = ["split_id,model,feature,mean_min_depth,usage"]
    failures = ["split_id,model,error"]
    pooled: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    for cell in cells:
        if not cell.ok:
            failures.append(f"{cell.split_id},{cell.model},\"{cell.error}\"")
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            reports.extend(pooled_reports(cell.split_id, cell.model, cell.risk, cell.y))
            reports.extend(
                per_landmark_reports(cell.split_id, cell.model, cell.risk, cell.y, cell.lm)
            )
        for adm, epi, lm, risk in zip(cell.admission_id, cell.episode_id, cell.lm, cell.risk):
            predictions.append(
                f"{cell.split_id},{cell.model},{adm},{int(epi)},{int(lm)},{_fmt(risk)}"
            )
        for phase, seconds in cell.timings:
            timings.append(f"{cell.split_id},{cell.model},{phase},{_fmt(seconds)}")
        for j, feat in enumerate(cell.feature_names):
            importance.append(
                f"{cell.split_id},{cell.model},{feat},"
                f"{_fmt(cell.mean_min_depth[j])},{_fmt(cell.usage[j])}"
            )
        if cell.model in pooled:
            p0, y0 = pooled[cell.model]
            pooled[cell.model] = (np.r_[p0, cell.risk], np.r_[y0, cell.y])
        else:
            pooled[cell.model] = (cell.risk.copy(), cell.y.copy())
        if cell.trace is not None:
            tuning_dir = out / "tuning"
            tuning_dir.mkdir(parents=True, exist_ok=True)
            write_trace_csv(cell.trace, tuning_dir / f"trace_s{cell.split_id}_{cell.model}.csv")

    _atomic_write(out / "metrics.csv",
                  ["split_id,model,scope,lm,metric,value"] + _metric_rows(reports))
    _atomic_write(out / "predictions.csv", predictions)
    _atomic_write(out / "timings.csv", timings)
    _atomic_write(out / "importance.csv", importance)
    _atomic_write(out / "failures.csv", failures)
    _atomic_write(out / "summary.csv",
                  ["model,metric,median,q1,q3,display"] + _summary_rows(reports, models))
    _emit_curves(out, models, pooled)

    echo = dataclasses.asdict(config)
    tmp = out / "config.json.tmp"
    tmp.write_text(json.dumps(echo, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, out / "config.json")
    return out


def run_experiment(config: ExperimentConfig) -> Path:
    """Run the full split-by-variant grid and write every report artifact."""
    frame = load_cohort(config)
    models = config.resolved_variants()

    cells: list[_CellOutput] = []
    executor = ProcessPoolExecutor(max_workers=config.jobs) if config.jobs > 1 else None
    try:
        for split_id in range(config.n_splits):
            split_seed = cell_seed(config.seed, split_id, "__split__")
            train, test = split_by_admission(frame, config.train_fraction, split_seed)
            imputer = fit_imputer(
                train, {name: ImputePolicy("mean") for name in frame.feature_names}
            )
            train_i = imputer.transform(train)
            test_i = imputer.transform(test)
            payloads = [(config, split_id, name, train_i, test_i) for name in models]
            if executor is None:
                cells.extend(_run_cell(payload) for payload in payloads)
            else:
                cells.extend(executor.map(_run_cell, payloads))
    finally:
        if executor is not None:
            executor.shutdown()
    return emit_reports(config, cells)
