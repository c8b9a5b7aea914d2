"""Safe critic learning with self-organizing clustered experience replay."""

__version__ = "0.1.0"

from .critic import CostConfig, control_law, features, value
from .dynamics import ControlVector, HpvParameters, SystemState, integrate_step
from .errors import (
    ClusterCapacityExceeded,
    ConfigError,
    DegenerateInput,
    EmptyReplay,
    NonFiniteState,
    NonFiniteUpdate,
    SaturationBoundary,
    SodacerError,
    StepFailure,
)
from .experiments import ScenarioConfig, compare_methods, friedman_ranks, run_scenario
from .optimizer import OptimizerConfig, OptimizerState
from .replay import ReplayConfig, Sample
from .safety import default_hpv_barriers, safety_filter
from .trainer import RunResult, TrainerConfig, rollout_constant, train_episode

__all__ = [
    "ClusterCapacityExceeded", "ConfigError", "ControlVector", "CostConfig", "DegenerateInput",
    "EmptyReplay", "HpvParameters", "NonFiniteState", "NonFiniteUpdate", "OptimizerConfig",
    "OptimizerState", "ReplayConfig", "RunResult", "Sample", "SaturationBoundary", "ScenarioConfig",
    "SodacerError", "StepFailure", "SystemState", "TrainerConfig", "compare_methods", "control_law",
    "default_hpv_barriers", "features", "friedman_ranks", "integrate_step", "rollout_constant",
    "run_scenario", "safety_filter", "train_episode", "value",
]
