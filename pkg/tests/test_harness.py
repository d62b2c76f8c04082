"""Tests for the variant table, experiment runner, and CLI."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from lmforest.cohort import EventType, LandmarkFrame, split_by_admission
from lmforest.errors import InvalidInputError
from lmforest.forest import Hyperparams
from lmforest.harness import (
    BASELINE_VARIANT_NAMES,
    DYNAMIC_VARIANT_NAMES,
    ExperimentConfig,
    cell_seed,
    encode_outcome,
    load_config,
    prepare_rows,
    run_experiment,
    variant,
    variant_names,
)
from lmforest.harness import experiment as experiment_mod
from lmforest.harness.cli import main
from lmforest.harness.experiment import _summary_rows, load_cohort
from lmforest.harness.variants import variant_pipeline
from lmforest.metrics import METRIC_NAMES, MetricReport

EXPECTED_BASELINE = (
    "bin", "multinom",
    "surv7d", "surv7d_cens7", "surv30d", "surv30d_cens7",
    "CR7d_LRCR_c_1", "CR7d_LR_c_1", "CR7d_LRCR_c_all", "CR7d_LR_c_all",
    "CR30d_LRCR_c_1", "CR30d_LR_c_1", "CR30d_LRCR_c_all", "CR30d_LR_c_all",
)


def one_row_frame(event_type, event_time, lm=0):
    return LandmarkFrame(
        admission_id=np.array(["a0"], dtype=object),
        episode_id=np.array([1]),
        lm=np.array([lm]),
        X=np.array([[0.0]]),
        feature_names=["x0"],
        event_type=np.array([int(event_type)]),
        event_time=np.array([float(event_time)]),
    )


def stacked_frame():
    """Three episodes with landmark stacks of lengths 3, 1, 2."""
    spec = [
        ("a0", 1, EventType.CLABSI, 2.4),
        ("a0", 2, EventType.DISCHARGE, 0.9),
        ("a1", 1, EventType.DEATH, 1.6),
    ]
    adm, epi, lm, et, tt = [], [], [], [], []
    for a, e, kind, t in spec:
        for day in range(math.ceil(t)):
            adm.append(a)
            epi.append(e)
            lm.append(day)
            et.append(int(kind))
            tt.append(t)
    n = len(adm)
    rng = np.random.default_rng(0)
    return LandmarkFrame(
        np.array(adm, dtype=object), np.array(epi), np.array(lm),
        rng.normal(size=(n, 2)), ["x0", "x1"], np.array(et), np.array(tt),
    )


# ---------------------------------------------------------------------------
# variant table
# ---------------------------------------------------------------------------


def test_baseline_table_has_the_14_expected_names():
    assert BASELINE_VARIANT_NAMES == EXPECTED_BASELINE
    assert len({variant(n) for n in BASELINE_VARIANT_NAMES}) == 14


def test_dynamic_mode_drops_day30_variants():
    assert DYNAMIC_VARIANT_NAMES == (
        "bin", "multinom", "surv7d", "surv7d_cens7",
        "CR7d_LRCR_c_1", "CR7d_LR_c_1", "CR7d_LRCR_c_all", "CR7d_LR_c_all",
    )
    assert all(variant(n).tau in (None, 7.0) for n in DYNAMIC_VARIANT_NAMES)


def test_variant_fields_follow_the_name():
    b = variant("bin")
    assert (b.outcome_kind, b.rule_kind, b.tau, b.scheme) == ("binary", "gini", None, None)
    m = variant("multinom")
    assert (m.outcome_kind, m.rule_kind) == ("multinomial", "gini")
    s = variant("surv7d")
    assert (s.outcome_kind, s.rule_kind, s.tau) == ("survival", "logrank", 7.0)
    assert s.scheme.name == "AT_EVENT_TIME"
    assert variant("surv7d_cens7").scheme.name == "AT_HORIZON"
    s30 = variant("surv30d_cens7")
    assert (s30.tau, s30.scheme.name, s30.dynamic_eligible) == (30.0, "AT_HORIZON", False)
    cr = variant("CR7d_LRCR_c_1")
    assert (cr.rule_kind, cr.cause_weights, cr.tau) == ("cr_logrank_cif", (1.0, 0.0, 0.0), 7.0)
    cr2 = variant("CR30d_LR_c_all")
    assert (cr2.rule_kind, cr2.cause_weights, cr2.tau) == ("cr_logrank", (1.0, 1.0, 1.0), 30.0)


def test_unknown_variant_lists_valid_names():
    with pytest.raises(InvalidInputError, match="bin, multinom"):
        variant("cox")
    with pytest.raises(InvalidInputError):
        variant_names("online")


# ---------------------------------------------------------------------------
# outcome transforms
# ---------------------------------------------------------------------------


def test_surv7d_discharge_just_before_day7_becomes_censored_day7():
    outcome = encode_outcome(variant("surv7d"), one_row_frame(EventType.DISCHARGE, 6.1))
    assert (outcome.time[0], outcome.status[0]) == (7.0, 0)


def test_surv7d_cens7_pushes_early_discharge_to_day7():
    outcome = encode_outcome(variant("surv7d_cens7"), one_row_frame(EventType.DISCHARGE, 5.0))
    assert (outcome.time[0], outcome.status[0]) == (7.0, 0)


def test_surv7d_keeps_early_discharge_where_it_happened():
    outcome = encode_outcome(variant("surv7d"), one_row_frame(EventType.DISCHARGE, 5.0))
    assert (outcome.time[0], outcome.status[0]) == (5.0, 0)


def test_clabsi_is_the_event_in_both_survival_schemes():
    for name in ("surv7d", "surv7d_cens7"):
        outcome = encode_outcome(variant(name), one_row_frame(EventType.CLABSI, 6.1))
        assert (outcome.time[0], outcome.status[0]) == (7.0, 1)


def test_administrative_censoring_cuts_late_clabsi_at_tau():
    outcome = encode_outcome(variant("surv7d"), one_row_frame(EventType.CLABSI, 8.5))
    assert (outcome.time[0], outcome.status[0]) == (7.0, 0)
    outcome30 = encode_outcome(variant("surv30d"), one_row_frame(EventType.CLABSI, 8.5))
    assert (outcome30.time[0], outcome30.status[0]) == (9.0, 1)


def test_competing_risks_encoding_keeps_cause_codes():
    outcome = encode_outcome(variant("CR7d_LRCR_c_1"), one_row_frame(EventType.DEATH, 3.2))
    assert (outcome.time[0], outcome.status[0]) == (4.0, 2)
    outcome30 = encode_outcome(variant("CR30d_LR_c_all"), one_row_frame(EventType.DISCHARGE, 9.5))
    assert (outcome30.time[0], outcome30.status[0]) == (10.0, 3)
    late = encode_outcome(variant("CR7d_LR_c_1"), one_row_frame(EventType.DISCHARGE, 9.5))
    assert (late.time[0], late.status[0]) == (7.0, 0)


def test_classification_variants_bypass_time_transforms():
    bin_out = encode_outcome(variant("bin"), one_row_frame(EventType.CLABSI, 6.9))
    assert bin_out.y[0] == 1 and bin_out.classes == (0, 1)
    assert encode_outcome(variant("bin"), one_row_frame(EventType.CLABSI, 7.4)).y[0] == 0
    assert encode_outcome(variant("bin"), one_row_frame(EventType.DISCHARGE, 2.0)).y[0] == 0
    multi = encode_outcome(variant("multinom"), one_row_frame(EventType.DEATH, 3.2))
    assert multi.y[0] == 2 and multi.kind == "multinomial"
    assert encode_outcome(variant("multinom"), one_row_frame(EventType.DISCHARGE, 10.0)).y[0] == 0


def test_landmarks_shift_the_transform_origin():
    outcome = encode_outcome(variant("surv7d"), one_row_frame(EventType.CLABSI, 6.1, lm=2))
    assert (outcome.time[0], outcome.status[0]) == (5.0, 1)


# ---------------------------------------------------------------------------
# mode row handling
# ---------------------------------------------------------------------------


def test_baseline_mode_keeps_only_day_zero_rows():
    frame = stacked_frame()
    rows, X, names = prepare_rows(frame, "baseline")
    assert np.array_equal(rows.lm, np.zeros(3, dtype=rows.lm.dtype))
    assert X.shape == (3, 2) and names == ["x0", "x1"]


def test_dynamic_mode_appends_the_landmark_feature():
    frame = stacked_frame()
    rows, X, names = prepare_rows(frame, "dynamic")
    assert len(rows) == len(frame) == 6
    assert names == ["x0", "x1", "lm"]
    assert np.array_equal(X[:, 2], frame.lm.astype(float))
    with pytest.raises(InvalidInputError):
        prepare_rows(frame, "batch")


def test_variant_pipeline_times_phases_and_bounds_risk():
    config = ExperimentConfig(simulate={"n_admissions": 150, "seed": 3, "missing_rate": 0.0},
                              n_splits=1, out_dir="unused")
    frame = load_cohort(config)
    train, test = split_by_admission(frame, 2.0 / 3.0, seed=1)
    hp = Hyperparams(n_trees=10, mtry=3, nodesize=30, seed=2)
    for name in ("bin", "surv7d", "CR7d_LR_c_all"):
        cell = variant_pipeline(variant(name), train, test, "baseline", hp)
        assert cell.seconds_build >= 0.0 and cell.seconds_predict >= 0.0
        assert cell.risk.shape == cell.y.shape
        assert np.all((cell.risk >= 0.0) & (cell.risk <= 1.0))
        assert set(np.unique(cell.y)) <= {0, 1}


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------


def test_config_validation_errors():
    base = dict(simulate={"n_admissions": 100}, out_dir="x")
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, schema_version=2)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(out_dir="x")  # no cohort source
    with pytest.raises(InvalidInputError):
        ExperimentConfig(cohort_csv="a.csv", simulate={}, out_dir="x")
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, n_splits=0)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, horizon=0.0)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, mode="online")
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, train_fraction=1.0)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, jobs=0)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, mode="dynamic", variants=["surv30d"])
    with pytest.raises(InvalidInputError):
        ExperimentConfig(**base, variants=["nope"])


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"simulate": {"n_admissions": 50}, "n_split": 2}))
    with pytest.raises(InvalidInputError, match="n_split"):
        load_config(path)
    path.write_text(json.dumps({"simulate": {"n_admissions": 50}, "n_splits": 2}))
    config = load_config(path)
    assert config.n_splits == 2 and config.resolved_variants() == list(EXPECTED_BASELINE)


def test_cell_seed_is_stable_and_coordinate_sensitive():
    a = cell_seed(7, 0, "bin")
    assert a == cell_seed(7, 0, "bin")
    assert len({a, cell_seed(7, 1, "bin"), cell_seed(7, 0, "multinom"),
                cell_seed(8, 0, "bin")}) == 4
    assert 0 <= a < 2 ** 64


# ---------------------------------------------------------------------------
# experiment artifacts
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    config = ExperimentConfig(
        simulate={"n_admissions": 200, "seed": 11, "missing_rate": 0.05},
        mode="baseline",
        n_splits=2,
        variants=["bin", "surv7d"],
        n_trees=8,
        mtry=3,
        nodesize=40,
        seed=5,
        out_dir=str(out / "run"),
    )
    return config, run_experiment(config)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_metric_rows_cover_cells_metrics_scopes(small_run):
    _, out = small_run
    rows = _read_csv(out / "metrics.csv")
    # 2 splits x 2 variants x 8 metrics x (pooled + the single lm-0 stratum)
    assert len(rows) == 2 * 2 * 8 * 2
    assert {r["scope"] for r in rows} == {"pooled", "per-lm"}
    assert {r["metric"] for r in rows} == set(METRIC_NAMES)
    pooled = [r for r in rows if r["scope"] == "pooled"]
    assert all(r["lm"] == "" for r in pooled)


def test_all_variants_share_split_membership(small_run):
    config, out = small_run
    frame = load_cohort(config)
    rows = _read_csv(out / "predictions.csv")
    for split_id in range(config.n_splits):
        seed = cell_seed(config.seed, split_id, "__split__")
        _, test = split_by_admission(frame, config.train_fraction, seed)
        expected = {
            (str(a), int(e), int(l))
            for a, e, l in zip(test.admission_id, test.episode_id, test.lm)
            if l == 0
        }
        for model in ("bin", "surv7d"):
            got = {
                (r["admission_id"], int(r["episode_id"]), int(r["lm"]))
                for r in rows
                if r["split_id"] == str(split_id) and r["model"] == model
            }
            assert got == expected


def test_timing_rows_cover_the_three_phases(small_run):
    _, out = small_run
    rows = _read_csv(out / "timings.csv")
    assert len(rows) == 2 * 2 * 3
    by_cell = {}
    for r in rows:
        by_cell.setdefault((r["split_id"], r["model"]), []).append(r["phase"])
        assert float(r["seconds"]) >= 0.0
    assert all(phases == ["tune", "build", "predict"] for phases in by_cell.values())
    tune_rows = [r for r in rows if r["phase"] == "tune"]
    assert all(float(r["seconds"]) == 0.0 for r in tune_rows)  # tuning disabled


def test_importance_rows_cover_all_features(small_run):
    config, out = small_run
    frame = load_cohort(config)
    rows = _read_csv(out / "importance.csv")
    assert len(rows) == 2 * 2 * frame.n_features
    per_cell = {r["feature"] for r in rows if r["split_id"] == "0" and r["model"] == "bin"}
    assert per_cell == set(frame.feature_names)
    assert all(float(r["usage"]) <= 1.0 and float(r["mean_min_depth"]) >= 0.0 for r in rows)


def test_summary_matches_hand_computed_medians(small_run):
    _, out = small_run
    metric_rows = _read_csv(out / "metrics.csv")
    summary = {(r["model"], r["metric"]): r for r in _read_csv(out / "summary.csv")}
    for model in ("bin", "surv7d"):
        for metric in METRIC_NAMES:
            values = [
                float(r["value"])
                for r in metric_rows
                if r["model"] == model and r["metric"] == metric
                and r["scope"] == "pooled" and r["value"] != ""
            ]
            row = summary[(model, metric)]
            if not values:
                assert row["median"] == ""
                continue
            q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
            assert float(row["median"]) == med
            assert float(row["q1"]) == q1 and float(row["q3"]) == q3
            assert row["display"] == f"{med:.3f} ({q1:.3f}-{q3:.3f})"


def test_no_failures_and_config_echo(small_run):
    config, out = small_run
    assert (out / "failures.csv").read_text() == "split_id,model,error\n"
    echo = json.loads((out / "config.json").read_text())
    assert echo["seed"] == config.seed and echo["variants"] == ["bin", "surv7d"]
    for name in ("calibration_deciles.csv", "net_benefit.csv", "risk_density.csv"):
        assert (out / "curves" / name).stat().st_size > 0


def test_rerun_is_bit_identical(small_run, tmp_path):
    config, out = small_run
    from dataclasses import replace

    config2 = replace(config, out_dir=str(tmp_path / "again"))
    out2 = run_experiment(config2)
    for name in ("metrics.csv", "predictions.csv", "importance.csv", "summary.csv"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_cell_failures_are_isolated(tmp_path, monkeypatch):
    real = experiment_mod.variant_pipeline

    def sometimes(spec, *args, **kwargs):
        if spec.name == "surv7d":
            raise RuntimeError("synthetic cell failure")
        return real(spec, *args, **kwargs)

    monkeypatch.setattr(experiment_mod, "variant_pipeline", sometimes)
    config = ExperimentConfig(
        simulate={"n_admissions": 120, "seed": 2}, n_splits=2,
        variants=["bin", "surv7d"], n_trees=6, mtry=2, nodesize=40,
        seed=1, out_dir=str(tmp_path / "fail"),
    )
    out = run_experiment(config)
    failures = _read_csv(out / "failures.csv")
    assert [(r["split_id"], r["model"]) for r in failures] == [("0", "surv7d"), ("1", "surv7d")]
    assert all("synthetic cell failure" in r["error"] for r in failures)
    metrics = _read_csv(out / "metrics.csv")
    assert {r["model"] for r in metrics} == {"bin"}
    assert len(metrics) == 2 * 8 * 2


def test_dynamic_experiment_stratifies_by_landmark(tmp_path):
    config = ExperimentConfig(
        simulate={"n_admissions": 150, "seed": 9}, mode="dynamic",
        n_splits=1, variants=["bin"], n_trees=8, mtry=3, nodesize=60,
        subsample_fraction=0.5, seed=3, out_dir=str(tmp_path / "dyn"),
    )
    out = run_experiment(config)
    predictions = _read_csv(out / "predictions.csv")
    assert {int(r["lm"]) for r in predictions} > {0}
    metrics = _read_csv(out / "metrics.csv")
    lm_strata = {r["lm"] for r in metrics if r["scope"] == "per-lm"}
    assert len(lm_strata) > 1


def test_tuned_experiment_writes_traces(tmp_path):
    config = ExperimentConfig(
        simulate={"n_admissions": 100, "seed": 4}, n_splits=1,
        variants=["bin"], tuning=True, tuning_n_trees=5,
        n_trees=8, mtry=3, nodesize=50, seed=2, out_dir=str(tmp_path / "tuned"),
    )
    out = run_experiment(config)
    assert (out / "failures.csv").read_text() == "split_id,model,error\n"
    trace = (out / "tuning" / "trace_s0_bin.csv").read_text().splitlines()
    assert trace[0] == "step,phase,mtry,nodesize,subsample_fraction,objective,seconds"
    assert len(trace) == 51
    timing = {r["phase"]: float(r["seconds"]) for r in _read_csv(out / "timings.csv")}
    assert timing["tune"] > 0.0


def test_summary_display_matches_the_hand_example():
    reports = [
        MetricReport(i, "m", "pooled", None, "AUROC", float(v))
        for i, v in enumerate([1, 2, 3, 4, 5])
    ]
    row = _summary_rows(reports, ["m"])[0]
    assert row.split(",")[5] == "3.000 (2.000-4.000)"


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_simulate_is_deterministic(tmp_path, capsys):
    assert main(["simulate", "--n-admissions", "60", "--seed", "7",
                 "--out", str(tmp_path / "one")]) == 0
    assert main(["simulate", "--n-admissions", "60", "--seed", "7",
                 "--out", str(tmp_path / "two")]) == 0
    capsys.readouterr()
    assert (tmp_path / "one/cohort.csv").read_bytes() == (tmp_path / "two/cohort.csv").read_bytes()
    assert (tmp_path / "one/truth.csv").read_bytes() == (tmp_path / "two/truth.csv").read_bytes()


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--n-admissions", "120", "--seed", "5",
                 "--out", str(root / "sim")]) == 0
    assert main(["split", "--cohort", str(root / "sim/cohort.csv"),
                 "--seed", "3", "--out", str(root / "sp")]) == 0
    return root


def test_cli_train_predict_evaluate_importance(cli_workspace, capsys):
    root = cli_workspace
    model = root / "model.json"
    assert main(["train", "--cohort", str(root / "sp/train.csv"), "--variant", "surv7d_cens7",
                 "--n-trees", "10", "--nodesize", "30", "--seed", "1",
                 "--out", str(model)]) == 0
    assert main(["predict", "--model", str(model), "--cohort", str(root / "sp/test.csv"),
                 "--out", str(root / "preds.csv")]) == 0
    assert main(["evaluate", "--cohort", str(root / "sp/test.csv"),
                 "--predictions", str(root / "preds.csv"),
                 "--out", str(root / "scores.csv")]) == 0
    assert main(["importance", "--model", str(model),
                 "--out", str(root / "imp.csv")]) == 0
    capsys.readouterr()

    preds = _read_csv(root / "preds.csv")
    assert preds and all(0.0 <= float(r["risk"]) <= 1.0 for r in preds)
    assert all(r["model"] == "surv7d_cens7" for r in preds)
    scores = _read_csv(root / "scores.csv")
    assert {r["metric"] for r in scores} == set(METRIC_NAMES)
    imp = _read_csv(root / "imp.csv")
    assert {r["feature"] for r in imp} == {
        "icu", "parenteral_nutrition", "age_std", "sofa_std", "ward_turnover", "baseline_crp"
    }


def test_cli_exit_codes(cli_workspace, tmp_path, capsys):
    root = cli_workspace
    assert main(["train", "--cohort", str(root / "sp/train.csv"), "--variant", "cox",
                 "--out", str(tmp_path / "m.json")]) == 1
    assert "valid names" in capsys.readouterr().err
    assert main(["train", "--cohort", str(root / "sp/train.csv"), "--variant", "surv30d",
                 "--mode", "dynamic", "--out", str(tmp_path / "m.json")]) == 1
    assert "dynamic mode" in capsys.readouterr().err
    assert main(["predict", "--model", str(tmp_path / "missing.json"),
                 "--cohort", str(root / "sp/test.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 2
    assert main([]) == 1
    assert main(["not-a-command"]) == 1
    capsys.readouterr()


def test_cli_evaluate_rejects_unmatched_rows(cli_workspace, tmp_path, capsys):
    root = cli_workspace
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "split_id,model,admission_id,episode_id,lm,risk\n"
        ",bin,ghost,1,0,0.5\n"
    )
    assert main(["evaluate", "--cohort", str(root / "sp/test.csv"),
                 "--predictions", str(bad), "--out", str(tmp_path / "s.csv")]) == 2
    assert "no matching cohort row" in capsys.readouterr().err


def test_cli_tune_writes_trace_and_best(cli_workspace, tmp_path, capsys):
    root = cli_workspace
    trace = tmp_path / "trace.csv"
    best = tmp_path / "best.json"
    assert main(["tune", "--cohort", str(root / "sp/train.csv"), "--variant", "bin",
                 "--n-trees", "5", "--seed", "2",
                 "--out", str(trace), "--best", str(best)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    saved = json.loads(best.read_text())
    assert printed == saved
    assert {"mtry", "nodesize", "objective"} <= set(saved)
    assert len(trace.read_text().splitlines()) == 51


def test_cli_run_experiment_honors_env_output(tmp_path, monkeypatch, capsys):
    config = {
        "simulate": {"n_admissions": 80, "seed": 6},
        "n_splits": 1,
        "variants": ["bin"],
        "n_trees": 6,
        "mtry": 2,
        "nodesize": 40,
        "seed": 9,
        "out_dir": str(tmp_path / "ignored"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    monkeypatch.setenv("LMFOREST_OUT", str(tmp_path / "from-env"))
    assert main(["run-experiment", "--config", str(path)]) == 0
    capsys.readouterr()
    metrics = (tmp_path / "from-env" / "metrics.csv").read_text()
    assert metrics.startswith("split_id,model,scope,lm,metric,value\n")
    assert len(metrics.splitlines()) > 1
    assert not (tmp_path / "ignored").exists()


def test_cli_run_experiment_rejects_unknown_variant_override(tmp_path, capsys):
    config = {"simulate": {"n_admissions": 80}, "n_splits": 1,
              "out_dir": str(tmp_path / "x")}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    assert main(["run-experiment", "--config", str(path), "--variants", "bin,cox"]) == 1
    assert "valid names" in capsys.readouterr().err
