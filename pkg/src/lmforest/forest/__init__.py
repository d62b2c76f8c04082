"""Random forest core: estimators, split rules, in-bag plans, trees, ensembles."""

from .estimators import aalen_johansen, kaplan_meier, nelson_aalen
from .inbag import InBagPlan, plan_inbags
from .model import (
    ClassificationOutcome,
    CompetingRisksOutcome,
    Forest,
    Hyperparams,
    SplitRule,
    SurvivalOutcome,
    deserialize,
    fit,
    minimal_depth_importance,
    oob_predict,
    predict_risk,
    serialize,
)
from .splits import (
    split_cr_logrank,
    split_cr_logrank_cif,
    split_gini,
    split_logrank,
)

__all__ = [
    "aalen_johansen",
    "kaplan_meier",
    "nelson_aalen",
    "InBagPlan",
    "plan_inbags",
    "ClassificationOutcome",
    "CompetingRisksOutcome",
    "SurvivalOutcome",
    "Forest",
    "Hyperparams",
    "SplitRule",
    "fit",
    "predict_risk",
    "oob_predict",
    "minimal_depth_importance",
    "serialize",
    "deserialize",
    "split_gini",
    "split_logrank",
    "split_cr_logrank",
    "split_cr_logrank_cif",
]
