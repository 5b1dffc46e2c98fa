from ._core import (
    CLASS_NAMES,
    LEAD_NAMES,
    ConfigError,
    InputError,
    Model,
    compute_metrics,
    preprocess,
    selftest,
    synth_ecg,
)

__all__ = [
    "CLASS_NAMES",
    "LEAD_NAMES",
    "ConfigError",
    "InputError",
    "Model",
    "compute_metrics",
    "preprocess",
    "selftest",
    "synth_ecg",
]
