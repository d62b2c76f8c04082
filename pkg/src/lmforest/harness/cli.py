"""Command-line entry points.

Exit codes: 0 on success, 1 on usage errors (including unknown variant
names), 2 on data errors such as unreadable files or invalid cohorts.
Output directories and job counts can also come from the environment via
LMFOREST_OUT and LMFOREST_JOBS; explicit flags win over both.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import simgen
from ..cohort import (
    ImputePolicy,
    Imputer,
    binary_labels,
    fit_imputer,
    read_landmark_csv,
    split_by_admission,
    write_landmark_csv,
)
from ..errors import LmForestError
from ..forest import Hyperparams, deserialize, minimal_depth_importance, serialize
from ..metrics import per_landmark_reports, pooled_reports
from ..tuning import baseline_space, dynamic_space, oob_logloss_objective, tune, write_trace_csv
from .experiment import _fmt, _metric_rows, load_config, run_experiment
from .variants import (
    BASELINE_VARIANT_NAMES,
    encode_outcome,
    fit_variant,
    predict_variant,
    prepare_rows,
    variant,
    variant_names,
)

MODEL_ARTIFACT = "lmforest-model"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _check_variant(name: str, mode: str) -> None:
    if name not in BASELINE_VARIANT_NAMES:
        raise UsageError(
            f"unknown variant {name!r}; valid names: {', '.join(BASELINE_VARIANT_NAMES)}"
        )
    allowed = variant_names(mode)
    if name not in allowed:
        raise UsageError(
            f"variant {name!r} is not available in {mode} mode; "
            f"valid names: {', '.join(allowed)}"
        )


def _mean_imputer(frame):
    return fit_imputer(frame, {name: ImputePolicy("mean") for name in frame.feature_names})


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    config = simgen.default_config(n_admissions=args.n_admissions, seed=args.seed)
    config = replace(config, missing_rate=args.missing_rate, episode_mean=args.episode_mean)
    cohort = simgen.simulate_cohort(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_landmark_csv(cohort.frame, out / "cohort.csv")
    simgen.write_truth_csv(cohort, out / "truth.csv")
    print(f"wrote {out / 'cohort.csv'} and {out / 'truth.csv'}")
    return 0


def _cmd_split(args) -> int:
    frame = read_landmark_csv(args.cohort)
    train, test = split_by_admission(frame, args.train_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_landmark_csv(train, out / "train.csv")
    write_landmark_csv(test, out / "test.csv")
    print(f"wrote {out / 'train.csv'} ({len(train)} rows) and {out / 'test.csv'} ({len(test)} rows)")
    return 0


def _cmd_train(args) -> int:
    _check_variant(args.variant, args.mode)
    frame = read_landmark_csv(args.cohort)
    imputer = _mean_imputer(frame)
    spec = variant(args.variant)
    hp = Hyperparams(args.n_trees, args.mtry, args.nodesize, args.subsample_fraction, args.seed)
    forest = fit_variant(spec, imputer.transform(frame), args.mode, hp, args.horizon)
    artifact = {
        "artifact": MODEL_ARTIFACT,
        "schema_version": 1,
        "variant": args.variant,
        "mode": args.mode,
        "horizon": args.horizon,
        "imputer": {
            "policies": {n: {"method": p.method, "value": p.value}
                         for n, p in imputer.policies.items()},
            "fill": imputer.fill,
        },
        "forest": json.loads(serialize(forest)),
    }
    with open(args.out, "w") as fh:
        json.dump(artifact, fh, separators=(",", ":"))
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _load_model(path) -> dict:
    with open(path) as fh:
        artifact = json.load(fh)
    if not isinstance(artifact, dict) or artifact.get("artifact") != MODEL_ARTIFACT:
        raise LmForestError(f"{path} is not a model artifact")
    return artifact


def _artifact_imputer(artifact: dict) -> Imputer:
    policies = {
        name: ImputePolicy(blob["method"], blob.get("value"))
        for name, blob in artifact["imputer"]["policies"].items()
    }
    return Imputer(policies, dict(artifact["imputer"]["fill"]))


def _cmd_predict(args) -> int:
    artifact = _load_model(args.model)
    forest = deserialize(json.dumps(artifact["forest"]))
    frame = read_landmark_csv(args.cohort)
    frame = _artifact_imputer(artifact).transform(frame)
    rows, risk = predict_variant(forest, frame, artifact["mode"], artifact["horizon"])
    lines = ["split_id,model,admission_id,episode_id,lm,risk"]
    for adm, epi, lm, value in zip(rows.admission_id, rows.episode_id, rows.lm, risk):
        lines.append(f",{artifact['variant']},{adm},{int(epi)},{int(lm)},{_fmt(value)}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_evaluate(args) -> int:
    frame = read_landmark_csv(args.cohort)
    y = binary_labels(frame.event_type, frame.event_time, frame.lm, args.horizon)
    labels = {
        (str(adm), int(epi), int(lm)): int(v)
        for adm, epi, lm, v in zip(frame.admission_id, frame.episode_id, frame.lm, y)
    }
    groups: dict[tuple, list] = {}
    with open(args.predictions, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"split_id", "model", "admission_id", "episode_id", "lm", "risk"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise LmForestError("predictions file is missing required columns")
        for record in reader:
            key = (str(record["admission_id"]), int(record["episode_id"]), int(record["lm"]))
            if key not in labels:
                raise LmForestError(f"prediction row {key} has no matching cohort row")
            groups.setdefault((record["split_id"], record["model"]), []).append(
                (float(record["risk"]), labels[key], key[2])
            )
    if not groups:
        raise LmForestError("predictions file has no rows")
    reports = []
    for (split_id, model), triples in groups.items():
        p = np.array([t[0] for t in triples])
        yy = np.array([t[1] for t in triples])
        lm = np.array([t[2] for t in triples])
        reports.extend(pooled_reports(split_id, model, p, yy))
        reports.extend(per_landmark_reports(split_id, model, p, yy, lm))
    lines = ["split_id,model,scope,lm,metric,value"] + _metric_rows(reports)
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_tune(args) -> int:
    _check_variant(args.variant, args.mode)
    frame = read_landmark_csv(args.cohort)
    frame = _mean_imputer(frame).transform(frame)
    spec = variant(args.variant)
    rows, X, _ = prepare_rows(frame, args.mode)
    outcome = encode_outcome(spec, rows, args.horizon)
    y_bin = binary_labels(rows.event_type, rows.event_time, rows.lm, args.horizon)
    dynamic = args.mode == "dynamic"
    base = Hyperparams(args.n_trees, 5, 50, None, args.seed)
    objective = oob_logloss_objective(
        X, rows.admission_id, outcome, spec.rule, base, y_bin,
        sample_mode="subsample" if dynamic else "bootstrap", horizon=args.horizon,
    )
    result = tune(objective, dynamic_space() if dynamic else baseline_space(), seed=args.seed)
    write_trace_csv(result.trace, args.out)
    best = dict(result.best_params)
    best["objective"] = result.best_objective
    if args.best:
        Path(args.best).write_text(json.dumps(best, sort_keys=True) + "\n")
    print(json.dumps(best, sort_keys=True))
    return 0


def _cmd_importance(args) -> int:
    artifact = _load_model(args.model)
    forest = deserialize(json.dumps(artifact["forest"]))
    depth, usage = minimal_depth_importance(forest)
    names = forest.feature_names or [f"x{j}" for j in range(forest.n_features)]
    lines = ["split_id,model,feature,mean_min_depth,usage"]
    for j, name in enumerate(names):
        lines.append(f",{artifact['variant']},{name},{_fmt(depth[j])},{_fmt(usage[j])}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_run_experiment(args) -> int:
    config = load_config(args.config)
    overrides = {}
    out = args.out or os.environ.get("LMFOREST_OUT")
    if out:
        overrides["out_dir"] = out
    jobs = args.jobs if args.jobs is not None else os.environ.get("LMFOREST_JOBS")
    if jobs is not None:
        overrides["jobs"] = int(jobs)
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.variants:
        names = [v.strip() for v in args.variants.split(",") if v.strip()]
        mode = overrides.get("mode", config.mode)
        for name in names:
            _check_variant(name, mode)
        overrides["variants"] = names
    if overrides:
        config = replace(config, **overrides)
    out_dir = run_experiment(config)
    print(f"experiment written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="lmforest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a cohort and write cohort.csv + truth.csv")
    p.add_argument("--n-admissions", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--episode-mean", type=float, default=1.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("split", help="admission-level train/test split")
    p.add_argument("--cohort", required=True)
    p.add_argument("--train-fraction", type=float, default=2.0 / 3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="fit one model variant and save the artifact")
    p.add_argument("--cohort", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--mode", choices=("baseline", "dynamic"), default="baseline")
    p.add_argument("--horizon", type=float, default=7.0)
    p.add_argument("--n-trees", type=int, default=1000)
    p.add_argument("--mtry", type=int, default=5)
    p.add_argument("--nodesize", type=int, default=50)
    p.add_argument("--subsample-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="7-day risk for every row of a cohort")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a predictions file against cohort labels")
    p.add_argument("--cohort", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--horizon", type=float, default=7.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("tune", help="model-based hyperparameter search on one variant")
    p.add_argument("--cohort", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--mode", choices=("baseline", "dynamic"), default="baseline")
    p.add_argument("--horizon", type=float, default=7.0)
    p.add_argument("--n-trees", type=int, default=50,
                   help="forest size used inside the tuning objective")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--best", default=None, help="optional best-params JSON path")
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("importance", help="minimal-depth importances of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("run-experiment", help="run the full split-by-variant grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--mode", choices=("baseline", "dynamic"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variants", default=None, help="comma-separated variant names")
    p.set_defaults(func=_cmd_run_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (LmForestError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
