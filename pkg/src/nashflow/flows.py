"""Continuous-time mean-field dynamics over finite games.

Four flows share one state convention — a flat vector of per-player blocks,
optionally with leading batch axes so many initial conditions integrate in
one pass:

- score flow ("da"):       state û, strategies derived via the choice map;
                           dû/dt = u(QR(û)).
- coupled smoothed flow    state (û, π); dû/dt = u(π) − û,
  ("sbr"):                 dπ/dt = QR(û) − π.
- single-timescale variant dπ/dt = QR(u(π)) − π.
  ("sbr_single"):
- best-response flow       dπ/dt = BR(π) − π with a fixed tie selection
  ("br"):                  (one solution branch of the underlying inclusion).
- replicator ("replicator"): dπ_a/dt = π_a (u_a − ⟨π, u⟩).

Integration is fixed-step (RK4 default, Euler optional); strategy blocks are
renormalized each step and a drift beyond tolerance or a non-finite value
aborts with the timestamp.  The asymptotic-pseudo-trajectory checker embeds
a discrete run on its step-size mesh and measures how far the interpolated
path drifts from the flow started at each anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import svi_residual
from .games import DivergenceError, FiniteGame, GameError, Profile, Simplex, utility_vectors_batch
from .learners import DEFAULT_EPSILON, Trajectory
from .responses import BR_TIE_TOL, Entropy, Regularizer, SquaredEuclidean, TieRule

DRIFT_TOL = 1e-7
STATIONARY_TOL = 1e-8
DEFAULT_DT = 1e-3
ANCHOR_FLOOR = 1e-300


class FlowError(GameError):
    """Raised for invalid flow states or failed integrations."""


class FlowDivergence(FlowError, DivergenceError):
    """A numerically diverged integration (non-finite state)."""


# ---------------------------------------------------------------------------
# Batched primitives.


def _project_simplex_batch(y: np.ndarray) -> np.ndarray:
    """Euclidean simplex projection along the last axis (sorted-threshold)."""
    m = y.shape[-1]
    srt = np.sort(y, axis=-1)[..., ::-1]
    css = np.cumsum(srt, axis=-1)
    idx = np.arange(1, m + 1, dtype=np.float64)
    keep = srt - (css - 1.0) / idx > 0
    rho = keep.sum(axis=-1)
    theta = (np.take_along_axis(css, rho[..., None] - 1, -1)[..., 0] - 1.0) / rho
    return np.maximum(y - theta[..., None], 0.0)


def _qr_batch(u: np.ndarray, reg: Regularizer) -> np.ndarray:
    """Quantal response along the last axis of a (..., m) score array."""
    w = (u - u.max(axis=-1, keepdims=True)) / reg.epsilon
    if isinstance(reg, Entropy):
        z = np.exp(w)
        return z / z.sum(axis=-1, keepdims=True)
    if isinstance(reg, SquaredEuclidean):
        return _project_simplex_batch(w)
    raise FlowError(f"unknown regularizer {reg!r}")


def _br_batch(u: np.ndarray, tie_rule: TieRule) -> np.ndarray:
    """Best-response vertex (or tie-average) along the last axis."""
    mask = u >= u.max(axis=-1, keepdims=True) - BR_TIE_TOL
    if tie_rule == TieRule.UNIFORM_OVER_ARGMAX:
        return mask / mask.sum(axis=-1, keepdims=True)
    m = u.shape[-1]
    return np.eye(m)[mask.argmax(axis=-1)]


# ---------------------------------------------------------------------------
# Flow systems.


@dataclass(frozen=True)
class FlowSystem:
    """One mean-field dynamic on a finite game, as a flat-vector ODE."""

    kind: str
    game: FiniteGame
    regularizer: Regularizer | None
    tie_rule: TieRule | None
    score_slices: tuple[slice, ...]
    strategy_slices: tuple[slice, ...]
    dim: int

    # -- state layout -------------------------------------------------------

    @property
    def simplex_blocks(self) -> tuple[slice, ...]:
        return self.strategy_slices

    def _probs_from_state(self, y: np.ndarray) -> list[np.ndarray]:
        if self.kind == "da":
            return [_qr_batch(y[..., sl], self.regularizer) for sl in self.score_slices]
        return [y[..., sl] for sl in self.strategy_slices]

    def strategies_from_state(self, y: np.ndarray) -> list[np.ndarray]:
        """Per-player strategy components derived from a state array."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.dim:
            raise FlowError(f"state has dimension {y.shape[-1]}, expected {self.dim}")
        return self._probs_from_state(y)

    # -- vector field --------------------------------------------------------

    def rhs(self, y: np.ndarray) -> np.ndarray:
        """Time derivative of the flat state; broadcasts over leading axes."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.dim:
            raise FlowError(f"state has dimension {y.shape[-1]}, expected {self.dim}")
        lead = y.shape[:-1]
        y2 = y.reshape(-1, self.dim)
        out = np.empty_like(y2)
        probs = [p.reshape(-1, p.shape[-1]) for p in self._probs_from_state(y)]
        game = self.game
        vecs = [utility_vectors_batch(game, probs, i) for i in range(game.n_players)]
        if self.kind == "da":
            for sl, v in zip(self.score_slices, vecs):
                out[:, sl] = v
        elif self.kind == "replicator":
            for sl, p, v in zip(self.strategy_slices, probs, vecs):
                avg = np.einsum("za,za->z", p, v)[:, None]
                out[:, sl] = p * (v - avg)
        elif self.kind == "br":
            for sl, p, v in zip(self.strategy_slices, probs, vecs):
                out[:, sl] = _br_batch(v, self.tie_rule) - p
        elif self.kind == "sbr_single":
            for sl, p, v in zip(self.strategy_slices, probs, vecs):
                out[:, sl] = _qr_batch(v, self.regularizer) - p
        elif self.kind == "sbr":
            for ssl, psl, p, v in zip(
                self.score_slices, self.strategy_slices, probs, vecs
            ):
                scores = y2[:, ssl]
                out[:, ssl] = v - scores
                out[:, psl] = _qr_batch(scores, self.regularizer) - p
        else:
            raise FlowError(f"unknown flow kind {self.kind!r}")
        return out.reshape(*lead, self.dim)

    # -- chain-rule strategy velocity ----------------------------------------

    def strategy_velocity(self, y: np.ndarray) -> list[np.ndarray]:
        """dπ/dt at a state: direct for strategy states, chain rule for scores."""
        y = np.asarray(y, dtype=np.float64)
        dy = self.rhs(y)
        if self.kind != "da":
            return [dy[..., sl] for sl in self.strategy_slices]
        probs = self._probs_from_state(y)
        return [
            _choice_map_tangent(p, dy[..., sl], self.regularizer)
            for p, sl in zip(probs, self.score_slices)
        ]

    def strategy_velocity_from_profile(self, strategies) -> list[np.ndarray]:
        """dπ/dt evaluated directly at a strategy profile.

        For the score flow this is the chain-rule image of the utility
        vectors, well defined on the whole simplex (vertices included)
        even though interior scores cannot represent boundary points.
        """
        probs = _probs_list(self.game, strategies)
        stacked = [p[None, :] for p in probs]
        vecs = [
            utility_vectors_batch(self.game, stacked, i)[0]
            for i in range(self.game.n_players)
        ]
        if self.kind == "da":
            return [
                _choice_map_tangent(p, v, self.regularizer)
                for p, v in zip(probs, vecs)
            ]
        if self.kind == "replicator":
            return [p * (v - np.dot(p, v)) for p, v in zip(probs, vecs)]
        if self.kind == "br":
            return [_br_batch(v, self.tie_rule) - p for p, v in zip(probs, vecs)]
        if self.kind in ("sbr", "sbr_single"):
            # coupled flow anchored at its fast-timescale limit û = u(π)
            return [
                _qr_batch(v, self.regularizer) - p for p, v in zip(probs, vecs)
            ]
        raise FlowError(f"unknown flow kind {self.kind!r}")

    # -- constructors for states ----------------------------------------------

    def initial_state(self, strategies=None, scores=None) -> np.ndarray:
        """Flat initial state from strategies and/or scores (defaults: û=0, π uniform)."""
        counts = self.game.action_counts
        if strategies is not None:
            probs = _probs_list(self.game, strategies)
        else:
            probs = [np.full(m, 1.0 / m) for m in counts]
        if self.kind == "da":
            if scores is not None:
                return _flat(self.game, scores, self.dim, self.score_slices)
            if strategies is not None:
                return self.state_from_strategies(strategies)
            return np.zeros(self.dim)
        if self.kind == "sbr":
            y = np.zeros(self.dim)
            if scores is not None:
                y = _flat(self.game, scores, self.dim, self.score_slices, out=y)
            for sl, p in zip(self.strategy_slices, probs):
                y[sl] = p
            return y
        if scores is not None:
            raise FlowError(f"{self.kind} flow state carries no scores")
        y = np.zeros(self.dim)
        for sl, p in zip(self.strategy_slices, probs):
            y[sl] = p
        return y

    def state_from_strategies(self, strategies) -> np.ndarray:
        """State whose derived strategies equal the given profile (APT anchor)."""
        probs = _probs_list(self.game, strategies)
        y = np.zeros(self.dim)
        if self.kind == "da":
            for sl, p in zip(self.score_slices, probs):
                y[sl] = _choice_map_preimage(p, self.regularizer)
            return y
        if self.kind == "sbr":
            stacked = [p[None, :] for p in probs]
            for i, (sl, p) in enumerate(zip(self.strategy_slices, probs)):
                y[sl] = p
            for i, sl in enumerate(self.score_slices):
                y[sl] = utility_vectors_batch(self.game, stacked, i)[0]
            return y
        for sl, p in zip(self.strategy_slices, probs):
            y[sl] = p
        return y


def _choice_map_tangent(p: np.ndarray, dscore: np.ndarray, reg: Regularizer) -> np.ndarray:
    """Derivative of the choice map applied to a score velocity, at strategy p."""
    if isinstance(reg, Entropy):
        avg = (p * dscore).sum(axis=-1, keepdims=True)
        return p * (dscore - avg) / reg.epsilon
    if isinstance(reg, SquaredEuclidean):
        # projection differential: average-out on the support, zero off it
        support = p > 0.0
        size = support.sum(axis=-1, keepdims=True)
        mean = np.where(support, dscore, 0.0).sum(axis=-1, keepdims=True) / size
        return np.where(support, (dscore - mean) / reg.epsilon, 0.0)
    raise FlowError(f"unknown regularizer {reg!r}")


def _choice_map_preimage(p: np.ndarray, reg: Regularizer) -> np.ndarray:
    if isinstance(reg, Entropy):
        if p.min() <= 0.0:
            raise FlowError("score preimage needs an interior strategy")
        return reg.epsilon * np.log(p)
    if isinstance(reg, SquaredEuclidean):
        return reg.epsilon * p
    raise FlowError(f"unknown regularizer {reg!r}")


def _probs_list(game: FiniteGame, strategies) -> list[np.ndarray]:
    if len(strategies) != game.n_players:
        raise FlowError("one strategy per player required")
    out = []
    for i, s in enumerate(strategies):
        p = s.probs if isinstance(s, Simplex) else np.asarray(s, dtype=np.float64)
        if p.shape != (game.action_counts[i],):
            raise FlowError(f"strategy for player {i} has shape {p.shape}")
        out.append(Simplex(p).probs)
    return out


def _flat(game, per_player, dim, slices, out=None) -> np.ndarray:
    y = np.zeros(dim) if out is None else out
    if len(per_player) != game.n_players:
        raise FlowError("one score vector per player required")
    for sl, v in zip(slices, per_player):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (sl.stop - sl.start,):
            raise FlowError(f"score block has shape {v.shape}")
        y[sl] = v
    return y


def _player_slices(counts, offset=0):
    slices = []
    pos = offset
    for m in counts:
        slices.append(slice(pos, pos + m))
        pos += m
    return tuple(slices), pos


def da_flow(game: FiniteGame, regularizer: Regularizer | None = None) -> FlowSystem:
    """Score flow dû/dt = u(QR(û)); strategies are the mirrored scores."""
    reg = regularizer if regularizer is not None else Entropy(DEFAULT_EPSILON)
    slices, dim = _player_slices(game.action_counts)
    return FlowSystem("da", game, reg, None, slices, (), dim)


def sbr_flow(game: FiniteGame, regularizer: Regularizer | None = None) -> FlowSystem:
    """Coupled smoothed flow on (û, π)."""
    reg = regularizer if regularizer is not None else Entropy(DEFAULT_EPSILON)
    score_slices, mid = _player_slices(game.action_counts)
    strat_slices, dim = _player_slices(game.action_counts, offset=mid)
    return FlowSystem("sbr", game, reg, None, score_slices, strat_slices, dim)


def sbr_single_flow(game: FiniteGame, regularizer: Regularizer | None = None) -> FlowSystem:
    """Single-timescale smoothed flow dπ/dt = QR(u(π)) − π."""
    reg = regularizer if regularizer is not None else Entropy(DEFAULT_EPSILON)
    slices, dim = _player_slices(game.action_counts)
    return FlowSystem("sbr_single", game, reg, None, (), slices, dim)


def br_flow(game: FiniteGame, tie_rule: TieRule = TieRule.LOWEST_INDEX) -> FlowSystem:
    """Best-response flow dπ/dt = BR(π) − π under a fixed tie selection."""
    slices, dim = _player_slices(game.action_counts)
    return FlowSystem("br", game, None, tie_rule, (), slices, dim)


def replicator_flow(game: FiniteGame) -> FlowSystem:
    slices, dim = _player_slices(game.action_counts)
    return FlowSystem("replicator", game, None, None, (), slices, dim)


# ---------------------------------------------------------------------------
# Named right-hand sides on explicit per-player arguments.


def replicator_rhs(game: FiniteGame, profile) -> list[np.ndarray]:
    """Per-player simplex-tangent replicator derivative at a profile."""
    system = replicator_flow(game)
    dy = system.rhs(system.initial_state(strategies=profile))
    return [dy[sl] for sl in system.strategy_slices]


def br_rhs(
    game: FiniteGame, profile, tie_rule: TieRule = TieRule.LOWEST_INDEX
) -> list[np.ndarray]:
    """Selected best-response-flow derivative (one branch of the inclusion)."""
    system = br_flow(game, tie_rule)
    dy = system.rhs(system.initial_state(strategies=profile))
    return [dy[sl] for sl in system.strategy_slices]


def da_flow_rhs(
    game: FiniteGame, scores, regularizer: Regularizer | None = None
) -> list[np.ndarray]:
    """Score derivative dû/dt = u(QR(û)) per player."""
    system = da_flow(game, regularizer)
    dy = system.rhs(system.initial_state(scores=scores))
    return [dy[sl] for sl in system.score_slices]


def sbr_rhs(
    game: FiniteGame, scores, profile, regularizer: Regularizer | None = None
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Coupled smoothed-flow derivatives (dû list, dπ list)."""
    system = sbr_flow(game, regularizer)
    y = system.initial_state(strategies=profile, scores=scores)
    dy = system.rhs(y)
    return (
        [dy[sl] for sl in system.score_slices],
        [dy[sl] for sl in system.strategy_slices],
    )


def sbr_single_rhs(
    game: FiniteGame, profile, regularizer: Regularizer | None = None
) -> list[np.ndarray]:
    """Single-timescale smoothed-flow derivative dπ/dt = QR(u(π)) − π."""
    system = sbr_single_flow(game, regularizer)
    dy = system.rhs(system.initial_state(strategies=profile))
    return [dy[sl] for sl in system.strategy_slices]


# ---------------------------------------------------------------------------
# Fixed-step integration.


@dataclass
class FlowTrajectory:
    """Sampled flow path: times (T,), states (T, ..., dim), source system."""

    times: np.ndarray
    states: np.ndarray
    system: FlowSystem
    max_drift: float

    def strategy_path(self) -> list[np.ndarray]:
        return self.system.strategies_from_state(self.states)

    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def final_strategies(self) -> list[np.ndarray]:
        return self.system.strategies_from_state(self.states[-1])


def _renormalize(system: FlowSystem, y: np.ndarray, t: float) -> float:
    """Clamp and renormalize simplex blocks in place; return the drift seen."""
    worst = 0.0
    for sl in system.simplex_blocks:
        block = y[..., sl]
        neg = float(block.min())
        if neg < -DRIFT_TOL:
            raise FlowError(f"strategy left the simplex (entry {neg:.3e}) at t={t:.6g}")
        np.clip(block, 0.0, None, out=block)
        sums = block.sum(axis=-1)
        drift = float(np.max(np.abs(sums - 1.0)))
        if max(drift, -neg) > DRIFT_TOL:
            raise FlowError(f"simplex sum drifted by {drift:.3e} at t={t:.6g}")
        worst = max(worst, drift, -min(neg, 0.0))
        block /= sums[..., None]
    return worst


def integrate(
    system: FlowSystem,
    y0: np.ndarray,
    t_end: float,
    dt: float = DEFAULT_DT,
    method: str = "rk4",
    record_every: int = 1,
) -> FlowTrajectory:
    """Fixed-step integration of a flow from a flat state (batch axes allowed).

    Records every ``record_every``-th step plus the initial and final states.
    Strategy blocks are renormalized after every step; drift beyond tolerance
    or non-finite values abort with the timestamp.
    """
    if dt <= 0.0:
        raise FlowError(f"dt must be positive, got {dt!r}")
    if t_end < 0.0:
        raise FlowError(f"t_end must be nonnegative, got {t_end!r}")
    if method not in ("rk4", "euler"):
        raise FlowError(f"unknown method {method!r}")
    if record_every < 1:
        raise FlowError("record_every must be >= 1")
    y = np.array(y0, dtype=np.float64)
    if y.shape[-1] != system.dim:
        raise FlowError(f"state has dimension {y.shape[-1]}, expected {system.dim}")
    n_full = int(np.floor(t_end / dt + 1e-12))
    rem = t_end - n_full * dt
    if rem < 1e-12 * max(1.0, abs(t_end)):
        rem = 0.0
    steps = n_full + (1 if rem > 0.0 else 0)

    times = [0.0]
    states = [y.copy()]
    max_drift = _renormalize(system, y, 0.0)
    rhs = system.rhs
    t = 0.0
    for s in range(steps):
        h = dt if s < n_full else rem
        if method == "rk4":
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            y = y + h * rhs(y)
        t = (s + 1) * dt if s < n_full else t_end
        if not np.all(np.isfinite(y)):
            raise FlowDivergence(f"non-finite state at t={t:.6g}")
        max_drift = max(max_drift, _renormalize(system, y, t))
        if (s + 1) % record_every == 0 or s == steps - 1:
            times.append(t)
            states.append(y.copy())
    return FlowTrajectory(
        times=np.array(times),
        states=np.stack(states, axis=0),
        system=system,
        max_drift=max_drift,
    )


# ---------------------------------------------------------------------------
# Stationary points.


def detect_stationary(
    system: FlowSystem, traj: FlowTrajectory, threshold: float = STATIONARY_TOL
) -> list[tuple[float, list[np.ndarray]]]:
    """Recorded points whose strategy-space velocity is below threshold."""
    if traj.states.ndim != 2:
        raise FlowError("stationary-point detection expects an unbatched trajectory")
    out = []
    vel = system.strategy_velocity(traj.states)
    norms = np.max(np.abs(np.concatenate(vel, axis=-1)), axis=-1)
    probs = system.strategies_from_state(traj.states)
    for row, t in enumerate(traj.times):
        if norms[row] <= threshold:
            out.append((float(t), [p[row].copy() for p in probs]))
    return out


def stationary_residual(game: FiniteGame, strategies) -> float:
    """svi residual of a strategy profile given as per-player arrays."""
    profile = tuple(Simplex(np.asarray(p, dtype=np.float64)) for p in strategies)
    return svi_residual(game, profile).residual


# ---------------------------------------------------------------------------
# Asymptotic-pseudo-trajectory distance.


def apt_distance(
    discrete: Trajectory,
    rates,
    system: FlowSystem,
    window_T: float,
    anchors: list[float] | None = None,
    dt: float = 1e-2,
    n_anchors: int = 6,
) -> list[tuple[float, float]]:
    """Sup distance between the interpolated iterates and the flow per anchor.

    The discrete strategies are placed on the step-size mesh τ^k = Σ_{s≤k}
    rate(s) and linearly interpolated; from each anchor time t the flow runs
    for ``window_T`` and the largest max-norm gap over the window is
    reported.  A sequence that fails to decrease signals a mismatched
    pairing of learner and flow.
    """
    if discrete.game_kind != "finite":
        raise FlowError("pseudo-trajectory comparison needs a finite-game run")
    if tuple(discrete.dims) != tuple(system.game.action_counts):
        raise FlowError("trajectory dimensions do not match the flow's game")
    K = discrete.rounds
    if K < 2:
        raise FlowError("trajectory too short")
    if window_T <= 0.0:
        raise FlowError("window_T must be positive")
    mu = np.array([rates.value(k) for k in range(1, K)])
    tau = np.concatenate([[0.0], np.cumsum(mu)])
    horizon = float(tau[-1])
    if horizon <= window_T:
        raise FlowError(
            f"mesh horizon {horizon:.3g} too short for window {window_T:.3g}"
        )
    path = np.concatenate([discrete.strategies[i] for i in range(discrete.n_players)], axis=1)

    def interp(ts: np.ndarray) -> np.ndarray:
        cols = [np.interp(ts, tau, path[:, c]) for c in range(path.shape[1])]
        return np.stack(cols, axis=-1)

    if anchors is None:
        anchors = list(np.linspace(0.0, horizon - window_T, n_anchors))
    out = []
    for t0 in anchors:
        if t0 < 0.0 or t0 + window_T > horizon + 1e-9:
            raise FlowError(f"anchor {t0:.3g} leaves the mesh horizon")
        start = interp(np.array([t0]))[0]
        split = []
        pos = 0
        for m in system.game.action_counts:
            # interpolated iterates can sit exactly on a vertex, where the
            # entropy choice map has no preimage; nudge into the interior by
            # an amount far below every tolerance in use
            block = np.maximum(start[pos : pos + m], ANCHOR_FLOOR)
            split.append(block / block.sum())
            pos += m
        y0 = system.state_from_strategies(split)
        flow = integrate(system, y0, window_T, dt=dt)
        flow_path = np.concatenate(flow.strategy_path(), axis=-1)
        disc_path = interp(t0 + flow.times)
        gap = float(np.max(np.abs(flow_path - disc_path)))
        out.append((float(t0), gap))
    return out


def apt_flagged(
    distances: list[tuple[float, float]],
    decay: float = 0.5,
    match_floor: float = 1e-3,
) -> bool:
    """True when the distance sequence fails to trend toward zero.

    A correctly paired learner/flow drives the window distances to the
    integrator-error scale; the sequence counts as trending when the last
    distance either falls below ``match_floor`` or is at most ``decay``
    times the first.  Anything else signals a mismatched pairing.
    """
    if len(distances) < 2:
        return False
    first, last = distances[0][1], distances[-1][1]
    if last <= match_floor:
        return False
    return last > decay * first
