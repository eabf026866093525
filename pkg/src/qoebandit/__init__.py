"""Online DNN selection for on-device inference with a neural contextual bandit."""

from . import aggregation, bandit, harness, metrics, qpn, simenv, solicitation
from .harness import ExperimentConfig, run_experiment
from .qpn import QpnParams, TrainConfig
from .solicitation import Schedule

__version__ = "0.1.0"

__all__ = [
    "aggregation", "bandit", "harness", "metrics", "qpn", "simenv", "solicitation",
    "ExperimentConfig", "run_experiment", "QpnParams", "TrainConfig", "Schedule",
]
