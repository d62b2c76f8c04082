"""Forest fitting, prediction, out-of-bag evaluation and serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..stepfun import StepFunction
from .inbag import InBagPlan, plan_inbags
from .tree import (
    CompetingRisksScorer,
    GiniScorer,
    LogrankScorer,
    Tree,
    grow_tree,
    min_depth_by_feature,
    tree_leaves,
)

FORMAT_VERSION = 1
CLABSI_CODE = 1


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 1000
    mtry: int = 5
    nodesize: int = 50
    subsample_fraction: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise InvalidInputError("n_trees must be at least 1")
        if self.mtry < 1:
            raise InvalidInputError("mtry must be at least 1")
        if self.nodesize < 1:
            raise InvalidInputError("nodesize must be at least 1")
        if self.subsample_fraction is not None and not (0.0 < self.subsample_fraction <= 1.0):
            raise InvalidInputError("subsample_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SplitRule:
    kind: str  # gini | logrank | cr_logrank | cr_logrank_cif
    cause_weights: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gini", "logrank", "cr_logrank", "cr_logrank_cif"):
            raise InvalidInputError(f"unknown split rule {self.kind!r}")
        if self.kind.startswith("cr_"):
            w = self.cause_weights
            if w is None or len(w) != 3 or any(v < 0 for v in w) or not any(v > 0 for v in w):
                raise InvalidInputError(
                    "competing-risks rules need 3 non-negative cause weights, not all zero"
                )
        elif self.cause_weights is not None:
            raise InvalidInputError(f"{self.kind} takes no cause weights")


@dataclass
class ClassificationOutcome:
    y: np.ndarray
    classes: tuple[int, ...]
    horizon: float
    kind: str = "binary"  # binary | multinomial


@dataclass
class SurvivalOutcome:
    time: np.ndarray
    status: np.ndarray  # 1 event, 0 censored
    support: float      # largest horizon the encoding can answer


@dataclass
class CompetingRisksOutcome:
    time: np.ndarray
    status: np.ndarray  # 0 censored, 1..3 cause codes
    support: float


@dataclass
class Forest:
    trees: list[Tree]
    rule: SplitRule
    hyperparams: Hyperparams
    sample_mode: str
    outcome_kind: str        # binary | multinomial | survival | competing_risks
    support: float
    classes: tuple[int, ...] | None
    n_features: int
    feature_names: list[str] | None = None
    plan: InBagPlan | None = field(default=None, repr=False)
    X_train: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _build_scorer(outcome, rule: SplitRule):
    if isinstance(outcome, ClassificationOutcome):
        if rule.kind != "gini":
            raise InvalidInputError(f"{rule.kind} cannot split class labels")
        y = np.asarray(outcome.y, dtype=np.int64)
        codes = {c: i for i, c in enumerate(outcome.classes)}
        if not set(np.unique(y)).issubset(codes):
            raise InvalidInputError("labels outside the declared classes")
        packed = np.array([codes[v] for v in y], dtype=np.int64)
        return GiniScorer(packed, len(outcome.classes)), outcome.kind
    if isinstance(outcome, SurvivalOutcome):
        if rule.kind != "logrank":
            raise InvalidInputError(f"{rule.kind} cannot split survival times")
        status = np.asarray(outcome.status, dtype=np.int64)
        if not set(np.unique(status)).issubset({0, 1}):
            raise InvalidInputError("survival status must be 0 or 1")
        return LogrankScorer(np.asarray(outcome.time, dtype=float), status), "survival"
    if isinstance(outcome, CompetingRisksOutcome):
        if rule.kind not in ("cr_logrank", "cr_logrank_cif"):
            raise InvalidInputError(f"{rule.kind} cannot split competing-risks times")
        status = np.asarray(outcome.status, dtype=np.int64)
        if not set(np.unique(status)).issubset({0, 1, 2, 3}):
            raise InvalidInputError("competing-risks status must lie in {0, 1, 2, 3}")
        return (
            CompetingRisksScorer(
                np.asarray(outcome.time, dtype=float),
                status,
                rule.cause_weights,
                subdistribution=(rule.kind == "cr_logrank_cif"),
            ),
            "competing_risks",
        )
    raise InvalidInputError(f"unsupported outcome {type(outcome).__name__}")


def fit(
    X: np.ndarray,
    admission_id: np.ndarray,
    outcome,
    rule: SplitRule,
    hyperparams: Hyperparams,
    sample_mode: str = "bootstrap",
    feature_names: list[str] | None = None,
) -> Forest:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("X must be a non-empty 2-d array")
    if np.isnan(X).any():
        raise InvalidInputError("X contains missing values; impute before fitting")
    if sample_mode == "subsample" and hyperparams.subsample_fraction is None:
        raise InvalidInputError("subsample mode needs hyperparams.subsample_fraction")

    scorer_all, outcome_kind = _build_scorer(outcome, rule)
    if isinstance(outcome, ClassificationOutcome):
        support = float(outcome.horizon)
        classes = tuple(outcome.classes)
        outcome_kind = outcome.kind
    else:
        support = float(outcome.support)
        classes = None

    root_ss = np.random.SeedSequence(hyperparams.seed)
    plan_ss, trees_ss = root_ss.spawn(2)
    plan = plan_inbags(
        admission_id,
        sample_mode,
        hyperparams.n_trees,
        plan_ss,
        hyperparams.subsample_fraction,
    )

    tree_keys = [tuple(int(v) for v in child.generate_state(2, dtype=np.uint64))
                 for child in trees_ss.spawn(hyperparams.n_trees)]
    trees: list[Tree] = []
    for t in range(hyperparams.n_trees):
        rows = plan.tree_rows[t]
        Xb = X[rows]
        scorer = _slice_scorer(scorer_all, rows)
        trees.append(grow_tree(Xb, scorer, hyperparams.mtry, hyperparams.nodesize, tree_keys[t]))

    return Forest(
        trees=trees,
        rule=rule,
        hyperparams=hyperparams,
        sample_mode=sample_mode,
        outcome_kind=outcome_kind,
        support=support,
        classes=classes,
        n_features=X.shape[1],
        feature_names=list(feature_names) if feature_names is not None else None,
        plan=plan,
        X_train=X,
    )


def _slice_scorer(scorer, rows: np.ndarray):
    if isinstance(scorer, GiniScorer):
        return GiniScorer(scorer.y[rows], scorer.n_classes)
    if isinstance(scorer, LogrankScorer):
        return LogrankScorer(scorer.time[rows], scorer.status[rows])
    return CompetingRisksScorer(
        scorer.time[rows],
        scorer.status[rows],
        scorer.cause_weights,
        scorer.subdistribution,
    )


def _leaf_values(forest: Forest, tree: Tree, horizon: float) -> np.ndarray:
    """Per-payload contribution: class-1 probability, cumulative hazard, or CIF_1."""
    kind = forest.outcome_kind
    if kind in ("binary", "multinomial"):
        pos = forest.classes.index(CLABSI_CODE)
        return np.array([p[pos] for p in tree.payloads])
    if kind == "survival":
        return np.array([p(horizon) for p in tree.payloads])
    return np.array([p[CLABSI_CODE](horizon) for p in tree.payloads])


def _check_horizon(forest: Forest, horizon: float) -> None:
    if forest.outcome_kind in ("binary", "multinomial"):
        if horizon != forest.support:
            raise InvalidInputError(
                f"model answers only its label horizon {forest.support}, got {horizon}"
            )
    elif horizon > forest.support:
        raise InvalidInputError(
            f"horizon {horizon} exceeds the encoding's censoring support {forest.support}"
        )


def predict_risk(forest: Forest, X: np.ndarray, horizon: float) -> np.ndarray:
    """Ensemble 7-day-style risk: P(CLABSI by `horizon`) for each row of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise InvalidInputError("X has the wrong number of features")
    if np.isnan(X).any():
        raise InvalidInputError("X contains missing values; impute before predicting")
    _check_horizon(forest, horizon)
    total = np.zeros(X.shape[0])
    for tree in forest.trees:
        values = _leaf_values(forest, tree, horizon)
        total += values[tree_leaves(tree, X)]
    mean = total / forest.n_trees
    if forest.outcome_kind == "survival":
        return 1.0 - np.exp(-mean)
    return mean


def oob_predict(forest: Forest, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-bag risk for each training row.

    A row receives contributions only from trees whose in-bag contains no
    row of its admission. Rows covered by no tree come back NaN.
    """
    if forest.plan is None or forest.X_train is None:
        raise InvalidInputError("out-of-bag predictions need the fitted model, not a reload")
    _check_horizon(forest, horizon)
    n = forest.X_train.shape[0]
    total = np.zeros(n)
    count = np.zeros(n)
    for t, tree in enumerate(forest.trees):
        mask = forest.plan.admission_oob_mask(t)
        if not mask.any():
            continue
        values = _leaf_values(forest, tree, horizon)
        total[mask] += values[tree_leaves(tree, forest.X_train[mask])]
        count[mask] += 1
    with np.errstate(invalid="ignore"):
        mean = total / count
    if forest.outcome_kind == "survival":
        mean = 1.0 - np.exp(-mean)
    mean[count == 0] = np.nan
    return mean, count.astype(np.int64)


def minimal_depth_importance(forest: Forest) -> tuple[np.ndarray, np.ndarray]:
    """(mean minimal depth, usage fraction) per feature.

    Depth 0 is a root split; a tree that never uses the feature contributes
    its max depth + 1.
    """
    p = forest.n_features
    depths = np.zeros(p)
    used = np.zeros(p)
    for tree in forest.trees:
        md = min_depth_by_feature(tree, p)
        depths += md
        used += md <= tree.max_depth
    return depths / forest.n_trees, used / forest.n_trees


# ---------------------------------------------------------------------------
# JSON serialization. Floats go through repr, so a load returns bit-equal
# values and predictions round-trip exactly. The in-bag plan and training
# matrix are not serialized: a reloaded model predicts but cannot produce
# out-of-bag estimates.
# ---------------------------------------------------------------------------


def _payload_to_json(kind: str, payload):
    if kind in ("binary", "multinomial"):
        return list(payload)
    if kind == "survival":
        return {"x": payload.x.tolist(), "y": payload.y.tolist()}
    shared = payload[1].x.tolist()
    return {
        "x": shared,
        "cif": [payload[k].y.tolist() for k in (1, 2, 3)],
    }


def _payload_from_json(kind: str, blob):
    if kind in ("binary", "multinomial"):
        return np.asarray(blob, dtype=float)
    if kind == "survival":
        return StepFunction(np.asarray(blob["x"]), np.asarray(blob["y"]), y0=0.0)
    x = np.asarray(blob["x"])
    return {
        k: StepFunction(x, np.asarray(blob["cif"][k - 1]), y0=0.0) for k in (1, 2, 3)
    }


def serialize(forest: Forest) -> str:
    doc = {
        "format": FORMAT_VERSION,
        "outcome_kind": forest.outcome_kind,
        "support": forest.support,
        "classes": list(forest.classes) if forest.classes is not None else None,
        "rule": {
            "kind": forest.rule.kind,
            "cause_weights": list(forest.rule.cause_weights)
            if forest.rule.cause_weights
            else None,
        },
        "hyperparams": {
            "n_trees": forest.hyperparams.n_trees,
            "mtry": forest.hyperparams.mtry,
            "nodesize": forest.hyperparams.nodesize,
            "subsample_fraction": forest.hyperparams.subsample_fraction,
            "seed": forest.hyperparams.seed,
        },
        "sample_mode": forest.sample_mode,
        "n_features": forest.n_features,
        "feature_names": forest.feature_names,
        "trees": [
            {
                "feature": tree.feature.tolist(),
                "threshold": tree.threshold.tolist(),
                "left": tree.left.tolist(),
                "right": tree.right.tolist(),
                "payload": tree.payload.tolist(),
                "depth": tree.depth.tolist(),
                "payloads": [
                    _payload_to_json(forest.outcome_kind, p) for p in tree.payloads
                ],
            }
            for tree in forest.trees
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def deserialize(text: str) -> Forest:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model format {doc.get('format')!r}")
    kind = doc["outcome_kind"]
    rule = SplitRule(
        doc["rule"]["kind"],
        tuple(doc["rule"]["cause_weights"]) if doc["rule"]["cause_weights"] else None,
    )
    hp = Hyperparams(**doc["hyperparams"])
    trees = []
    for blob in doc["trees"]:
        trees.append(
            Tree(
                np.asarray(blob["feature"], dtype=np.int32),
                np.asarray(blob["threshold"], dtype=float),
                np.asarray(blob["left"], dtype=np.int32),
                np.asarray(blob["right"], dtype=np.int32),
                np.asarray(blob["payload"], dtype=np.int32),
                np.asarray(blob["depth"], dtype=np.int32),
                [_payload_from_json(kind, p) for p in blob["payloads"]],
            )
        )
    return Forest(
        trees=trees,
        rule=rule,
        hyperparams=hp,
        sample_mode=doc["sample_mode"],
        outcome_kind=kind,
        support=doc["support"],
        classes=tuple(doc["classes"]) if doc["classes"] is not None else None,
        n_features=doc["n_features"],
        feature_names=doc["feature_names"],
    )
