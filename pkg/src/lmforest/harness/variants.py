"""The model variant table and the per-variant training pipeline.

Fourteen baseline variants cover the four outcome encodings: plain binary
and multinomial classification, single-event survival with the competing
events censored either where they happened or at day 7, and competing-risks
forests under both split rules with CLABSI-only or all-cause weights, each
at administrative censoring day 7 or 30. Dynamic mode keeps the eight
day-7 variants and adds the landmark index as a feature.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..cohort import (
    CensorScheme,
    LandmarkFrame,
    administrative_censor_times,
    apply_censor_scheme,
    binary_labels,
    competing_times,
    discretize_times,
    multinomial_labels,
)
from ..errors import InvalidInputError
from ..forest import (
    ClassificationOutcome,
    CompetingRisksOutcome,
    Forest,
    Hyperparams,
    SplitRule,
    SurvivalOutcome,
    fit,
    predict_risk,
)

MODES = ("baseline", "dynamic")
LM_FEATURE = "lm"


@dataclass(frozen=True)
class ModelVariantSpec:
    name: str
    outcome_kind: str                      # binary | multinomial | survival | competing_risks
    rule_kind: str                         # gini | logrank | cr_logrank | cr_logrank_cif
    cause_weights: tuple | None
    tau: float | None                      # administrative censoring day
    scheme: CensorScheme | None            # competing-event handling, survival only
    dynamic_eligible: bool

    @property
    def rule(self) -> SplitRule:
        return SplitRule(self.rule_kind, self.cause_weights)


def _cr(tau: float, rule_code: str, weights_code: str) -> ModelVariantSpec:
    return ModelVariantSpec(
        name=f"CR{int(tau)}d_{rule_code}_c_{weights_code}",
        outcome_kind="competing_risks",
        rule_kind="cr_logrank_cif" if rule_code == "LRCR" else "cr_logrank",
        cause_weights=(1.0, 0.0, 0.0) if weights_code == "1" else (1.0, 1.0, 1.0),
        tau=tau,
        scheme=None,
        dynamic_eligible=tau == 7.0,
    )


BASELINE_VARIANTS: tuple[ModelVariantSpec, ...] = (
    ModelVariantSpec("bin", "binary", "gini", None, None, None, True),
    ModelVariantSpec("multinom", "multinomial", "gini", None, None, None, True),
    ModelVariantSpec("surv7d", "survival", "logrank", None, 7.0,
                     CensorScheme.AT_EVENT_TIME, True),
    ModelVariantSpec("surv7d_cens7", "survival", "logrank", None, 7.0,
                     CensorScheme.AT_HORIZON, True),
    ModelVariantSpec("surv30d", "survival", "logrank", None, 30.0,
                     CensorScheme.AT_EVENT_TIME, False),
    ModelVariantSpec("surv30d_cens7", "survival", "logrank", None, 30.0,
                     CensorScheme.AT_HORIZON, False),
    _cr(7.0, "LRCR", "1"),
    _cr(7.0, "LR", "1"),
    _cr(7.0, "LRCR", "all"),
    _cr(7.0, "LR", "all"),
    _cr(30.0, "LRCR", "1"),
    _cr(30.0, "LR", "1"),
    _cr(30.0, "LRCR", "all"),
    _cr(30.0, "LR", "all"),
)

_BY_NAME = {spec.name: spec for spec in BASELINE_VARIANTS}

BASELINE_VARIANT_NAMES = tuple(spec.name for spec in BASELINE_VARIANTS)
DYNAMIC_VARIANT_NAMES = tuple(
    spec.name for spec in BASELINE_VARIANTS if spec.dynamic_eligible
)


def variant(name: str) -> ModelVariantSpec:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown variant {name!r}; valid names: {', '.join(BASELINE_VARIANT_NAMES)}"
        ) from None


def variant_names(mode: str = "baseline") -> list[str]:
    if mode == "baseline":
        return list(BASELINE_VARIANT_NAMES)
    if mode == "dynamic":
        return list(DYNAMIC_VARIANT_NAMES)
    raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")


def prepare_rows(frame: LandmarkFrame, mode: str) -> tuple[LandmarkFrame, np.ndarray, list]:
    """Row filter and design matrix for a mode.

    Baseline keeps only the admission-day rows; dynamic keeps the whole
    stack and appends the landmark index as a feature.
    """
    if mode == "baseline":
        sub = frame.subset(frame.lm == 0)
        return sub, sub.X, list(sub.feature_names)
    if mode == "dynamic":
        X = np.column_stack([frame.X, frame.lm.astype(float)])
        return frame, X, list(frame.feature_names) + [LM_FEATURE]
    raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")


def encode_outcome(spec: ModelVariantSpec, frame: LandmarkFrame, horizon: float = 7.0):
    """Variant-specific training outcome for already-filtered rows.

    Time-to-event encodings share one pipeline: residual time from the
    landmark, whole-day ceiling, administrative censoring at tau, then the
    competing-event censor scheme for the single-event case.
    """
    if spec.outcome_kind == "binary":
        y = binary_labels(frame.event_type, frame.event_time, frame.lm, horizon)
        return ClassificationOutcome(y=y, classes=(0, 1), horizon=horizon)
    if spec.outcome_kind == "multinomial":
        y = multinomial_labels(frame.event_type, frame.event_time, frame.lm, horizon)
        return ClassificationOutcome(
            y=y, classes=(0, 1, 2, 3), horizon=horizon, kind="multinomial"
        )
    time_, status = competing_times(frame.event_type, frame.event_time, frame.lm)
    time_ = discretize_times(time_)
    time_, status = administrative_censor_times(time_, status, spec.tau)
    if spec.outcome_kind == "survival":
        time_, status = apply_censor_scheme(time_, status, spec.scheme, horizon)
        return SurvivalOutcome(time=time_, status=status, support=float(spec.tau))
    return CompetingRisksOutcome(time=time_, status=status, support=float(spec.tau))


def fit_variant(
    spec: ModelVariantSpec,
    frame: LandmarkFrame,
    mode: str,
    hyperparams: Hyperparams,
    horizon: float = 7.0,
) -> Forest:
    rows, X, names = prepare_rows(frame, mode)
    outcome = encode_outcome(spec, rows, horizon)
    sample_mode = "subsample" if hyperparams.subsample_fraction is not None else "bootstrap"
    return fit(X, rows.admission_id, outcome, spec.rule, hyperparams,
               sample_mode=sample_mode, feature_names=names)


def predict_variant(
    forest: Forest, frame: LandmarkFrame, mode: str, horizon: float = 7.0
) -> tuple[LandmarkFrame, np.ndarray]:
    """Risk at the horizon for every mode-eligible row; returns rows used."""
    rows, X, _ = prepare_rows(frame, mode)
    return rows, predict_risk(forest, X, horizon)


@dataclass
class CellResult:
    rows: LandmarkFrame
    risk: np.ndarray
    y: np.ndarray
    seconds_build: float
    seconds_predict: float
    forest: Forest


def variant_pipeline(
    spec: ModelVariantSpec,
    train: LandmarkFrame,
    test: LandmarkFrame,
    mode: str,
    hyperparams: Hyperparams,
    horizon: float = 7.0,
) -> CellResult:
    t0 = time.perf_counter()
    forest = fit_variant(spec, train, mode, hyperparams, horizon)
    t1 = time.perf_counter()
    rows, risk = predict_variant(forest, test, mode, horizon)
    t2 = time.perf_counter()
    y = binary_labels(rows.event_type, rows.event_time, rows.lm, horizon)
    return CellResult(rows, risk, y, t1 - t0, t2 - t1, forest)
