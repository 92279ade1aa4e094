"""Bundled network applications built on the core library.

Three self-contained games: secure routing against jammers (zero-sum,
path-level), a smart-grid generation game on a synthetic power network
(parallel / randomized / measurement-driven update algorithms), and a
distributed-learning network-formation game (two-layer learning over model
parameters and link weights).
"""

from .routing import (
    RoutingInstance,
    RoutingReport,
    build_routing_game,
    make_routing_instance,
    run_secure_routing,
)
from .grid import (
    PDA,
    PUA,
    RUA,
    GridInstance,
    build_grid_game,
    grid_best_response,
    make_grid_instance,
    run_grid,
    run_grid_audited,
)
from .dml import (
    DmlInstance,
    DmlTrajectory,
    make_dml_instance,
    run_dml,
)

__all__ = [
    "RoutingInstance",
    "RoutingReport",
    "build_routing_game",
    "make_routing_instance",
    "run_secure_routing",
    "GridInstance",
    "PUA",
    "RUA",
    "PDA",
    "build_grid_game",
    "grid_best_response",
    "make_grid_instance",
    "run_grid",
    "run_grid_audited",
    "DmlInstance",
    "DmlTrajectory",
    "make_dml_instance",
    "run_dml",
]
