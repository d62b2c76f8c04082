"""Experiment harness: variant table, end-to-end runner, and the CLI."""

from .variants import (
    BASELINE_VARIANT_NAMES,
    DYNAMIC_VARIANT_NAMES,
    ModelVariantSpec,
    encode_outcome,
    fit_variant,
    predict_variant,
    prepare_rows,
    variant,
    variant_names,
)
from .experiment import ExperimentConfig, cell_seed, load_config, run_experiment

__all__ = [
    "BASELINE_VARIANT_NAMES",
    "DYNAMIC_VARIANT_NAMES",
    "ModelVariantSpec",
    "variant",
    "variant_names",
    "encode_outcome",
    "prepare_rows",
    "fit_variant",
    "predict_variant",
    "ExperimentConfig",
    "load_config",
    "cell_seed",
    "run_experiment",
]
