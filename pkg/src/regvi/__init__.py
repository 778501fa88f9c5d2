"""Data-driven value iteration for linear output regulation.

Learner-visible machinery (observer filter bank, regression, value
iteration) is separated from the model-based oracle layer used only for
certification; see the module docstrings.
"""

from .experiment import (ExperimentConfig, NotConvergedError, PRESETS,
                         parse_config, run_experiment, serialize_config,
                         verify)
from .internal_model import Exosystem, InternalModel, build_p_copy, \
    minimal_polynomial, recast_exosystem
from .observer import ObserverKnown
from .oracle import LtiPlant, solve_care, solve_sylvester_regulator
from .regression import SamplingGrid, build_regression, check_rank
from .sim import ExplorationSignal, Policy, Tone, simulate
from .vi import RankConditionError, ViConfig, vi_run

__all__ = [
    "ExperimentConfig", "NotConvergedError", "PRESETS", "parse_config",
    "run_experiment", "serialize_config", "verify",
    "Exosystem", "InternalModel", "build_p_copy", "minimal_polynomial",
    "recast_exosystem", "ObserverKnown", "LtiPlant", "solve_care",
    "solve_sylvester_regulator", "SamplingGrid", "build_regression",
    "check_rank", "ExplorationSignal", "Policy", "Tone", "simulate",
    "RankConditionError", "ViConfig", "vi_run",
]

__version__ = "1.0.0"
