"""Secure routing against jammers as a zero-sum matrix game.

A router picks one of up to K candidate source-destination paths; a jammer
coalition picks a joint placement of jammers on nodes.  Each hop of a path
succeeds with its edge probability q, degraded multiplicatively when either
endpoint of the hop is jammed.  The router's payoff is the log success
probability of the whole path minus a delay penalty; the jammer receives the
negation.  Both sides learn by smoothed best response from their own payoffs
only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np

from ..feedback import FeedbackSetup, IndividualView
from ..games import FiniteGame, GameError
from ..learners import InverseK, InversePow, LearnerConfig, Trajectory, run_repeated_game
from ..responses import Entropy

DEFAULT_DEGRADATION = 0.1
DEFAULT_K_PATHS = 8
SIZE_CAP = 10**6


@dataclass(frozen=True)
class RoutingInstance:
    """A routing scenario: weighted graph, candidate paths, jammer placements.

    ``edges`` maps undirected node pairs to (success probability q, delay τ);
    ``paths`` are node sequences from source to destination; ``jammer_sets``
    lists each jammer's feasible nodes (the coalition picks one node per
    jammer).  ``lam`` weighs delay against log success; ``degradation``
    multiplies a hop's q once per jammed hop endpoint.
    """

    n_nodes: int
    edges: tuple[tuple[int, int, float, float], ...]
    source: int
    destination: int
    paths: tuple[tuple[int, ...], ...]
    jammer_sets: tuple[tuple[int, ...], ...] = ()
    lam: float = 1.0
    degradation: float = DEFAULT_DEGRADATION

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise GameError("routing needs at least two nodes")
        seen = {}
        for u, v, q, tau in self.edges:
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes) or u == v:
                raise GameError(f"edge ({u},{v}) is not a valid node pair")
            if not 0.0 < q <= 1.0:
                raise GameError(f"edge ({u},{v}) success probability {q} outside (0,1]")
            if tau < 0.0:
                raise GameError(f"edge ({u},{v}) delay {tau} is negative")
            seen[frozenset((u, v))] = (float(q), float(tau))
        if not self.paths:
            raise GameError("at least one candidate path is required")
        for path in self.paths:
            if path[0] != self.source or path[-1] != self.destination:
                raise GameError(f"path {path} does not connect source to destination")
            if len(path) < 2:
                raise GameError(f"path {path} has no hops")
            for a, b in zip(path, path[1:]):
                if frozenset((a, b)) not in seen:
                    raise GameError(f"path {path} uses missing edge ({a},{b})")
        for nodes in self.jammer_sets:
            if not nodes:
                raise GameError("a jammer needs at least one feasible node")
            for node in nodes:
                if not 0 <= node < self.n_nodes:
                    raise GameError(f"jammer node {node} out of range")
        if self.lam < 0.0:
            raise GameError("delay weight must be nonnegative")
        if not 0.0 < self.degradation < 1.0:
            raise GameError("degradation factor must lie in (0,1)")

    def edge_lookup(self) -> dict[frozenset, tuple[float, float]]:
        return {frozenset((u, v)): (q, tau) for u, v, q, tau in self.edges}

    def joint_positions(self) -> list[tuple[int, ...]]:
        """All joint jammer placements (a single empty placement if no jammers)."""
        if not self.jammer_sets:
            return [()]
        return [tuple(p) for p in itertools.product(*self.jammer_sets)]


def make_routing_instance(
    edges,
    source: int,
    destination: int,
    jammer_sets=(),
    lam: float = 1.0,
    k_paths: int = DEFAULT_K_PATHS,
    degradation: float = DEFAULT_DEGRADATION,
) -> RoutingInstance:
    """Build an instance, enumerating up to ``k_paths`` lowest-delay paths."""
    n_nodes = 0
    graph = nx.Graph()
    for u, v, q, tau in edges:
        graph.add_edge(u, v, delay=float(tau))
        n_nodes = max(n_nodes, u + 1, v + 1)
    if source not in graph or destination not in graph:
        raise GameError("source or destination missing from the edge set")
    if not nx.has_path(graph, source, destination):
        raise GameError("no path connects source to destination")
    gen = nx.shortest_simple_paths(graph, source, destination, weight="delay")
    paths = tuple(tuple(p) for p in itertools.islice(gen, k_paths))
    return RoutingInstance(
        n_nodes=n_nodes,
        edges=tuple((int(u), int(v), float(q), float(tau)) for u, v, q, tau in edges),
        source=source,
        destination=destination,
        paths=paths,
        jammer_sets=tuple(tuple(int(n) for n in s) for s in jammer_sets),
        lam=lam,
        degradation=degradation,
    )


def path_payoff(inst: RoutingInstance, path: tuple[int, ...], jammed: tuple[int, ...]) -> float:
    """Router payoff for one path under a joint jammer placement.

    Sum over hops of ln(q_eff) minus lam times the total delay, where q_eff
    is the hop's q multiplied by the degradation factor once per jammed hop
    endpoint.
    """
    lookup = inst.edge_lookup()
    jammed_set = set(jammed)
    total = 0.0
    for a, b in zip(path, path[1:]):
        q, tau = lookup[frozenset((a, b))]
        hits = (a in jammed_set) + (b in jammed_set)
        total += math.log(q * inst.degradation**hits) - inst.lam * tau
    return total


def build_routing_game(inst: RoutingInstance) -> FiniteGame:
    """Zero-sum matrix game: router over paths, jammer coalition over placements."""
    n_positions = math.prod(len(nodes) for nodes in inst.jammer_sets)
    if len(inst.paths) * n_positions > SIZE_CAP:
        raise GameError(
            f"game size {len(inst.paths)}x{n_positions} exceeds the "
            f"{SIZE_CAP} cell cap"
        )
    positions = inst.joint_positions()
    router = np.empty((len(inst.paths), len(positions)))
    for i, path in enumerate(inst.paths):
        for j, placement in enumerate(positions):
            router[i, j] = path_payoff(inst, path, placement)
    return FiniteGame((router, -router))


@dataclass(frozen=True)
class RoutingReport:
    """Learning outcome: the run plus chosen-path statistics."""

    trajectory: Trajectory
    paths: tuple[tuple[int, ...], ...]
    path_frequencies: np.ndarray
    jammer_frequencies: np.ndarray
    mass_avoiding_jammers: float


def _default_router_config() -> LearnerConfig:
    # a sharp choice map with a fast-decaying score rate keeps the strategy
    # pinned to the payoff ranking once the bandit estimates settle
    return LearnerConfig(
        kind="sbr",
        regularizer=Entropy(0.1),
        mu=InversePow(0.9),
        lam=InverseK(),
    )


def run_secure_routing(
    inst: RoutingInstance,
    rounds: int,
    seed: int,
    config: LearnerConfig | None = None,
) -> RoutingReport:
    """Run smoothed-best-response learning for router and jammer.

    Both players observe only their own sampled payoff each round.  Reports
    the empirical distribution over chosen paths and the probability mass on
    paths that touch no jammer-feasible node.
    """
    game = build_routing_game(inst)
    if config is None:
        config = _default_router_config()
    if config.kind != "sbr":
        raise GameError("secure routing runs smoothed best response learners")
    feedback = FeedbackSetup(kind=IndividualView())
    traj = run_repeated_game(game, [config, config], rounds=rounds, seed=seed, feedback=feedback)
    n_paths = len(inst.paths)
    positions = inst.joint_positions()
    if rounds > 0:
        path_freq = np.bincount(traj.actions[:, 0], minlength=n_paths) / rounds
        jam_freq = np.bincount(traj.actions[:, 1], minlength=len(positions)) / rounds
    else:
        path_freq = np.zeros(n_paths)
        jam_freq = np.zeros(len(positions))
    feasible = set().union(*inst.jammer_sets) if inst.jammer_sets else set()
    clear = [i for i, p in enumerate(inst.paths) if not feasible.intersection(p)]
    mass = float(path_freq[clear].sum()) if clear else 0.0
    return RoutingReport(
        trajectory=traj,
        paths=inst.paths,
        path_frequencies=path_freq,
        jammer_frequencies=jam_freq,
        mass_avoiding_jammers=mass,
    )
