"""Learning in noncooperative games: dynamics, flows, equilibria, networks.

The package models finite, continuous, and network games; runs discrete-time
learning dynamics under configurable feedback; integrates their mean-field
flows; verifies Nash equilibria through variational-inequality residuals;
and bundles three network applications (secure routing under jamming,
smart-grid demand response, network formation for distributed learning).
"""

from .config import ConfigError, ExperimentConfig, parse_config
from .equilibrium import (
    NEVerdict,
    SampledVerdict,
    Witness,
    continuous_ne_residual,
    mvi_check,
    payoff_gradient,
    pure_ne_enumerate,
    svi_residual,
    vs_probe,
)
from .feedback import (
    Delayed,
    FeedbackError,
    FeedbackSetup,
    GaussianTruncatedNoise,
    GlobalView,
    IndividualView,
    LocalView,
    NoNoise,
    Perfect,
    UniformNoise,
    Windowed,
)
from .flows import (
    FlowDivergence,
    FlowError,
    FlowSystem,
    FlowTrajectory,
    apt_distance,
    apt_flagged,
    br_flow,
    da_flow,
    detect_stationary,
    integrate,
    replicator_flow,
    sbr_flow,
    sbr_single_flow,
    stationary_residual,
)
from .games import (
    Box,
    ContinuousGame,
    DivergenceError,
    FiniteGame,
    GameError,
    PlayerGraph,
    Profile,
    Simplex,
    SimplexSet,
    build_finite_game,
    coordination,
    finite_game_from_json,
    finite_game_to_json,
    matching_pennies,
    prisoners_dilemma,
    pure_profile,
    random_game,
    random_potential_game,
    random_zero_sum,
    uniform_profile,
    utility_vector,
)
from .learners import (
    Constant,
    InverseK,
    InversePow,
    LearnerConfig,
    LearnerError,
    Trajectory,
    TwoTimescale,
    run_repeated_game,
)
from .responses import Entropy, SquaredEuclidean, TieRule

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ConfigError",
    "Constant",
    "ContinuousGame",
    "Delayed",
    "DivergenceError",
    "Entropy",
    "ExperimentConfig",
    "FeedbackError",
    "FeedbackSetup",
    "FiniteGame",
    "FlowDivergence",
    "FlowError",
    "FlowSystem",
    "FlowTrajectory",
    "GameError",
    "GaussianTruncatedNoise",
    "GlobalView",
    "IndividualView",
    "InverseK",
    "InversePow",
    "LearnerConfig",
    "LearnerError",
    "LocalView",
    "NEVerdict",
    "NoNoise",
    "Perfect",
    "PlayerGraph",
    "Profile",
    "SampledVerdict",
    "Simplex",
    "SimplexSet",
    "SquaredEuclidean",
    "TieRule",
    "Trajectory",
    "TwoTimescale",
    "UniformNoise",
    "uniform_profile",
    "utility_vector",
    "vs_probe",
    "Windowed",
    "Witness",
    "apt_distance",
    "apt_flagged",
    "br_flow",
    "build_finite_game",
    "continuous_ne_residual",
    "coordination",
    "da_flow",
    "detect_stationary",
    "finite_game_from_json",
    "finite_game_to_json",
    "integrate",
    "matching_pennies",
    "mvi_check",
    "parse_config",
    "payoff_gradient",
    "prisoners_dilemma",
    "pure_ne_enumerate",
    "pure_profile",
    "random_game",
    "random_potential_game",
    "random_zero_sum",
    "replicator_flow",
    "run_repeated_game",
    "sbr_flow",
    "sbr_single_flow",
    "stationary_residual",
    "svi_residual",
]
