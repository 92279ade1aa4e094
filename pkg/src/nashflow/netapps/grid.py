"""Smart-grid generation game on a synthetic power network.

Each renewable bus chooses its generation p_i within [0, cap].  Voltage
angles follow the linearized flow relation θ = s·(p^g − p^l); bus i's utility
trades generation cost against market revenue and penalizes angle deviation:
u_i = −c_i·p_i − c·(l_i − p_i) − ½·r_i²·θ_i².  The quadratic is concave in
the own action, so each player's best response is a clipped closed form.

Three update schemes share that best response but differ in information
access: the parallel scheme reads every bus's injection, the randomized
scheme holds each player with a fixed probability, and the measurement-driven
scheme sees only the player's own metered angle.  The access distinction is
structural: measurement-driven players receive a meter object that carries
only their own angle, and every foreign-injection read is counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..equilibrium import continuous_ne_residual
from ..games import Box, ContinuousGame, GameError
from ..learners import Trajectory

# stop when the best-response gap falls this low; the recorded per-iteration
# change is one contraction factor above the gap, so this keeps the last
# written change safely below 1e-10
CONVERGENCE_TOL = 1e-12


@dataclass(frozen=True)
class PUA:
    """Parallel update: every player jumps to its exact clipped best response."""


@dataclass(frozen=True)
class RUA:
    """Randomized update: each player best-responds with probability
    1 − epsilon, otherwise holds its current action."""

    epsilon: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise GameError("hold probability must lie in [0,1)")


@dataclass(frozen=True)
class PDA:
    """Measurement-driven update: the best response is computed from the
    player's own metered angle only, never from others' injections."""


@dataclass(frozen=True)
class GridInstance:
    """Network data: angle-sensitivity matrix, loads, caps, costs, weights.

    ``susceptance`` is the symmetric positive matrix s with θ = s·(p^g−p^l);
    ``players`` lists the renewable buses (everything else generates 0).
    """

    susceptance: np.ndarray
    loads: np.ndarray
    caps: np.ndarray
    unit_costs: np.ndarray
    price: float
    weights: np.ndarray
    players: tuple[int, ...]

    def __post_init__(self) -> None:
        s = np.asarray(self.susceptance, dtype=np.float64)
        n = s.shape[0]
        if s.shape != (n, n):
            raise GameError("susceptance matrix must be square")
        if not np.all(np.isfinite(s)):
            raise GameError("susceptance matrix must be finite")
        if not np.allclose(s, s.T, atol=1e-12):
            raise GameError("susceptance matrix must be symmetric")
        for name, vec in (
            ("loads", self.loads),
            ("caps", self.caps),
            ("unit_costs", self.unit_costs),
            ("weights", self.weights),
        ):
            if np.asarray(vec).shape != (n,):
                raise GameError(f"{name} must have one entry per bus")
        if np.any(np.asarray(self.caps) < 0.0):
            raise GameError("generation caps must be nonnegative")
        if len(self.players) == 0:
            raise GameError("at least one renewable bus is required")
        for i in self.players:
            if not 0 <= i < n:
                raise GameError(f"player bus {i} out of range")
            if self.weights[i] <= 0.0 or s[i, i] <= 0.0:
                raise GameError(
                    f"bus {i} needs weight > 0 and positive self-sensitivity "
                    "for a concave utility with a unique best response"
                )
        object.__setattr__(self, "susceptance", np.ascontiguousarray(s))
        for name in ("loads", "caps", "unit_costs", "weights"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)

    @property
    def n_buses(self) -> int:
        return self.susceptance.shape[0]

    def angles(self, generation: np.ndarray) -> np.ndarray:
        """θ = s·(p^g − p^l) for a full per-bus generation vector."""
        return self.susceptance @ (generation - self.loads)

    def target_angle(self, i: int) -> float:
        """The angle solving bus i's first-order condition."""
        return (self.price - self.unit_costs[i]) / (self.weights[i] ** 2 * self.susceptance[i, i])


def _laplacian(n: int, topology: str) -> np.ndarray:
    lap = np.zeros((n, n))
    pairs = [(i, i + 1) for i in range(n - 1)]
    if topology == "ring":
        if n < 3:
            raise GameError("a ring needs at least three buses")
        pairs.append((n - 1, 0))
    elif topology != "chain":
        raise GameError(f"unknown topology {topology!r} (chain or ring)")
    for a, b in pairs:
        lap[a, a] += 1.0
        lap[b, b] += 1.0
        lap[a, b] -= 1.0
        lap[b, a] -= 1.0
    return lap


def make_grid_instance(
    n_buses: int,
    topology: str = "chain",
    seed: int = 0,
    players: tuple[int, ...] | None = None,
) -> GridInstance:
    """Generate a random instance on a chain or ring network.

    The sensitivity matrix is s = (L + g·I)^{-1} for the topology Laplacian L
    with a grounding shunt g at every bus; g is raised until the parallel
    best-response map is a verified max-norm contraction on the player set,
    which guarantees one fixed point shared by all three update schemes.
    """
    if n_buses < 2:
        raise GameError("a grid instance needs at least two buses")
    rng = np.random.default_rng(seed)
    lap = _laplacian(n_buses, topology)
    if players is None:
        players = tuple(range(n_buses))
    g = 1.0
    for _ in range(40):
        s = np.linalg.inv(lap + g * np.eye(n_buses))
        ratios = [
            np.abs(s[i, list(set(players) - {i})]).sum() / s[i, i] for i in players
        ]
        if max(ratios) < 0.9:
            break
        g *= 2.0
    else:
        raise GameError("could not ground the network into a contraction")
    # ranges chosen so the market-clearing angles are typically reachable
    # inside the generation boxes (interior, non-corner equilibria)
    loads = rng.uniform(0.2, 1.0, size=n_buses)
    caps = rng.uniform(0.8, 1.6, size=n_buses)
    unit_costs = rng.uniform(0.8, 1.2, size=n_buses)
    weights = rng.uniform(2.0, 3.0, size=n_buses)
    price = float(rng.uniform(1.0, 1.3))
    return GridInstance(
        susceptance=s,
        loads=loads,
        caps=caps,
        unit_costs=unit_costs,
        price=price,
        weights=weights,
        players=players,
    )


def build_grid_game(inst: GridInstance) -> ContinuousGame:
    """Continuous concave game over per-player generation boxes."""
    players = inst.players

    def full_generation(actions) -> np.ndarray:
        gen = np.zeros(inst.n_buses)
        for idx, bus in enumerate(players):
            gen[bus] = float(np.asarray(actions[idx]).reshape(()))
        return gen

    def utilities(actions) -> np.ndarray:
        gen = full_generation(actions)
        theta = inst.angles(gen)
        out = np.empty(len(players))
        for idx, bus in enumerate(players):
            out[idx] = (
                -inst.unit_costs[bus] * gen[bus]
                - inst.price * (inst.loads[bus] - gen[bus])
                - 0.5 * inst.weights[bus] ** 2 * theta[bus] ** 2
            )
        return out

    def gradient(actions) -> list[np.ndarray]:
        gen = full_generation(actions)
        theta = inst.angles(gen)
        return [
            np.array(
                [
                    -inst.unit_costs[bus]
                    + inst.price
                    - inst.weights[bus] ** 2 * theta[bus] * inst.susceptance[bus, bus]
                ]
            )
            for bus in players
        ]

    sets = tuple(
        Box(np.zeros(1), np.array([inst.caps[bus]])) for bus in players
    )
    return ContinuousGame(action_sets=sets, utilities=utilities, gradient=gradient)


def grid_best_response(inst: GridInstance, i: int, measured_angle: float, current: float) -> float:
    """Clipped best response of bus i given its own metered angle.

    Solves θ_i(p_i') = target by moving the own action: the angle responds to
    the own injection with slope s_ii, so p' = p + (θ* − θ)/s_ii, clipped to
    the generation box.
    """
    step = (inst.target_angle(i) - measured_angle) / inst.susceptance[i, i]
    return float(np.clip(current + step, 0.0, inst.caps[i]))


@dataclass
class _Meter:
    """A measurement handle carrying exactly one bus's angle."""

    angle: float


@dataclass
class GridAudit:
    """Counts how many foreign injected-power reads each scheme performed."""

    foreign_injection_reads: int = 0


def _best_response_from_injections(
    inst: GridInstance, i: int, generation: np.ndarray, audit: GridAudit
) -> float:
    """Best response computed the direct way: read every bus's injection."""
    injections = generation - inst.loads
    # reading all other buses' injected power is what the audit counts
    audit.foreign_injection_reads += inst.n_buses - 1
    cross = float(inst.susceptance[i] @ injections) - inst.susceptance[i, i] * injections[i]
    target = inst.target_angle(i)
    best = (target - cross) / inst.susceptance[i, i] + inst.loads[i]
    return float(np.clip(best, 0.0, inst.caps[i]))


def run_grid_audited(
    inst: GridInstance,
    algo: PUA | RUA | PDA,
    iters: int,
    seed: int,
) -> tuple[Trajectory, GridAudit]:
    """Iterate the chosen update scheme; also return the access audit."""
    if iters < 0:
        raise GameError("iteration count must be nonnegative")
    game = build_grid_game(inst)
    players = inst.players
    audit = GridAudit()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    gen = np.zeros(inst.n_buses)
    start = time.perf_counter()
    history = []
    residuals = []
    initial = [np.array([gen[bus]]) for bus in players]
    for _ in range(iters):
        if isinstance(algo, RUA):
            holds = rng.random(len(players)) < algo.epsilon
        else:
            holds = np.zeros(len(players), dtype=bool)
        new_gen = gen.copy()
        if isinstance(algo, PDA):
            theta = inst.angles(gen)
            for idx, bus in enumerate(players):
                meter = _Meter(angle=float(theta[bus]))
                new_gen[bus] = grid_best_response(inst, bus, meter.angle, gen[bus])
        else:
            for idx, bus in enumerate(players):
                if holds[idx]:
                    continue
                new_gen[bus] = _best_response_from_injections(inst, bus, gen, audit)
        gen = new_gen
        actions = [np.array([gen[bus]]) for bus in players]
        history.append(actions)
        residuals.append(continuous_ne_residual(game, actions).residual)
        # stop on the intrinsic best-response gap, not the iterate change:
        # a randomized sweep where every player held must not count as converged
        theta_now = inst.angles(gen)
        gap = max(
            abs(grid_best_response(inst, bus, float(theta_now[bus]), gen[bus]) - gen[bus])
            for bus in players
        )
        if gap <= CONVERGENCE_TOL:
            break
    rounds = len(history)
    strategies = [
        np.array([history[k][idx] for k in range(rounds)]).reshape(rounds, 1)
        for idx in range(len(players))
    ]
    final = history[-1] if history else initial
    final_residual = residuals[-1] if residuals else continuous_ne_residual(game, initial).residual
    traj = Trajectory(
        game_kind="continuous",
        dims=tuple(1 for _ in players),
        rounds=rounds,
        seed=seed,
        algorithms=tuple(type(algo).__name__ for _ in players),
        initial=initial,
        strategies=strategies,
        actions=np.full((rounds, len(players)), -1, dtype=np.int64),
        payoffs_raw=np.array([game.utilities(h) for h in history]).reshape(rounds, len(players)),
        payoffs_noisy=np.array([game.utilities(h) for h in history]).reshape(rounds, len(players)),
        residuals=np.asarray(residuals, dtype=np.float64),
        final=[a.copy() for a in final],
        final_residual=float(final_residual),
        wall_time=time.perf_counter() - start,
    )
    return traj, audit


def run_grid(inst: GridInstance, algo: PUA | RUA | PDA, iters: int, seed: int) -> Trajectory:
    """Iterate the chosen update scheme until convergence or the cap."""
    traj, _ = run_grid_audited(inst, algo, iters, seed)
    return traj
