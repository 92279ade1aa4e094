"""Discrete-time learning dynamics and the synchronous repeated-game driver.

Finite-game learners (fp, br, sbr, da, ftl) track a score vector built from
either single-sample importance estimates of their utility vector (bandit
feedback) or the exact utility vector against the opponents' mix at the
observed round (full-information variant).  br/sbr smooth the score by a
moving average and move with inertia; da/ftl accumulate weighted scores.
Continuous-game learners (gd, lgd, md, ftrl) climb their payoff gradient
under perfect feedback, eagerly or lazily, with or without a mirror map.

Step functions are pure: state in, state out.  ``LearnerState.round`` counts
completed updates and indexes the rate schedules, so a round whose feedback
is still hidden by a temporal filter does not consume a rate.  The driver
plays all players synchronously, samples actions, applies payoff noise,
enforces the feedback structure, and records a Trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .equilibrium import _continuous_gap_from_grads
from .feedback import (
    FeedbackSetup,
    NoNoise,
    RoundRecord,
    RunStreams,
    apply_noise,
    importance_estimate,
    P_FLOOR,
    sample_action,
    visible_players,
    visible_rounds,
)
from .games import (
    ContinuousGame,
    DivergenceError,
    FiniteGame,
    GameError,
    Simplex,
    SimplexSet,
)
from .responses import (
    BR_TIE_TOL,
    Entropy,
    Regularizer,
    TieRule,
    best_response,
    euclidean_project,
    mirror_map,
    quantal_response,
)

DEFAULT_EPSILON = 0.1

FINITE_KINDS = ("fp", "br", "sbr", "da", "ftl")
CONTINUOUS_KINDS = ("gd", "lgd", "md", "ftrl")

ALGO_NAMES = {
    "fp": "FP",
    "br": "BR-d",
    "sbr": "SBR-d",
    "da": "DA-d",
    "ftl": "FTL",
    "gd": "GD",
    "lgd": "LGD",
    "md": "MD",
    "ftrl": "FTRL",
}


class LearnerError(GameError):
    """Raised for invalid learner configurations or malformed step inputs."""


# ---------------------------------------------------------------------------
# Rate schedules.


@dataclass(frozen=True)
class Constant:
    c: float

    def __post_init__(self) -> None:
        if not 0.0 < self.c <= 1.0:
            raise LearnerError(f"constant rate must lie in (0, 1], got {self.c!r}")

    def value(self, k: int) -> float:
        return self.c


@dataclass(frozen=True)
class InverseK:
    def value(self, k: int) -> float:
        return 1.0 / k


@dataclass(frozen=True)
class InversePow:
    p: float

    def __post_init__(self) -> None:
        if not 0.5 < self.p <= 1.0:
            raise LearnerError(f"power rate needs p in (0.5, 1], got {self.p!r}")

    def value(self, k: int) -> float:
        return float(k) ** -self.p


Schedule = Constant | InverseK | InversePow


def _decay_exponent(s: Schedule) -> float:
    if isinstance(s, Constant):
        return 0.0
    if isinstance(s, InverseK):
        return 1.0
    if isinstance(s, InversePow):
        return s.p
    raise LearnerError(f"unknown schedule {s!r}")


@dataclass(frozen=True)
class TwoTimescale:
    """A (fast, slow) rate pair requiring slow/fast -> 0, checked on construction."""

    fast: Schedule
    slow: Schedule

    def __post_init__(self) -> None:
        if not _decay_exponent(self.slow) > _decay_exponent(self.fast):
            raise LearnerError(
                "two-timescale pair needs the slow rate to decay strictly faster "
                f"than the fast rate, got fast={self.fast!r} slow={self.slow!r}"
            )


DEFAULT_MU = InversePow(0.6)
DEFAULT_LAMBDA = InverseK()


@dataclass(frozen=True)
class LearnerConfig:
    kind: str
    regularizer: Regularizer | None = None
    mu: Schedule = DEFAULT_MU
    lam: Schedule = DEFAULT_LAMBDA
    tie_rule: TieRule = TieRule.LOWEST_INDEX
    p_floor: float = P_FLOOR
    estimator: str = "importance"

    def __post_init__(self) -> None:
        if self.kind not in FINITE_KINDS + CONTINUOUS_KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        if self.estimator not in ("importance", "exact"):
            raise LearnerError(f"unknown estimator {self.estimator!r}")
        if not 0.0 <= self.p_floor < 0.5:
            raise LearnerError(f"p_floor must lie in [0, 0.5), got {self.p_floor!r}")
        if self.kind in ("sbr", "da", "md", "ftrl") and self.regularizer is None:
            object.__setattr__(self, "regularizer", Entropy(DEFAULT_EPSILON))

    @property
    def bandit(self) -> bool:
        return self.estimator == "importance"


@dataclass(frozen=True)
class StepInput:
    """Per-round feedback for one step; only the relevant fields are set.

    ``own_probs`` is the strategy the played action was sampled from (the
    strategy of the observed round, which lags the current one under delay).
    """

    round: int
    own_action: int | None = None
    own_payoff: float | None = None
    own_probs: np.ndarray | None = None
    opp_actions: dict[int, int] | None = None
    exact_vector: np.ndarray | None = None
    gradient: np.ndarray | None = None


@dataclass(frozen=True)
class LearnerState:
    """State of one learner; ``round`` counts completed updates."""

    kind: str
    round: int = 0
    strategy: Simplex | None = None
    action: np.ndarray | None = None
    score: np.ndarray | None = None
    aux: np.ndarray | None = None
    own_counts: np.ndarray | None = None
    opp_counts: dict[int, np.ndarray] | None = None


def _estimate(state: LearnerState, inp: StepInput, cfg: LearnerConfig) -> np.ndarray:
    if cfg.estimator == "exact":
        if inp.exact_vector is None:
            raise LearnerError("exact estimator requested but no utility vector supplied")
        return np.asarray(inp.exact_vector, dtype=np.float64)
    if inp.own_action is None or inp.own_payoff is None:
        raise LearnerError("bandit estimator needs the played action and its payoff")
    probs = inp.own_probs if inp.own_probs is not None else state.strategy.probs
    return importance_estimate(inp.own_payoff, inp.own_action, probs, cfg.p_floor)


def _floor_mix(probs: np.ndarray, p_floor: float) -> np.ndarray:
    return (1.0 - p_floor * probs.shape[0]) * probs + p_floor


def _choice_target(score: np.ndarray, cfg: LearnerConfig) -> np.ndarray:
    target = best_response(score, cfg.tie_rule).probs
    if cfg.bandit and cfg.p_floor > 0.0:
        return _floor_mix(target, cfg.p_floor)
    return target


def brd_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig) -> LearnerState:
    """Best response with inertia on a moving-average score.

    Score: u <- (1-mu_k) u + mu_k * estimate; the strategy moves the fraction
    lambda_k of the way to the best response of the updated score.  Under
    bandit feedback the best-response vertex is mixed with uniform at p_floor
    before the inertia step, so lambda_k = 0 leaves the strategy exactly
    unchanged and lambda_k = 1 lands exactly on the floored choice output.
    """
    k = state.round + 1
    mu = cfg.mu.value(k)
    lam = cfg.lam.value(k)
    est = _estimate(state, inp, cfg)
    score = (1.0 - mu) * state.score + mu * est
    target = _choice_target(score, cfg)
    probs = (1.0 - lam) * state.strategy.probs + lam * target
    return replace(state, round=k, score=score, strategy=Simplex(probs))


def sbr_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig) -> LearnerState:
    """Smoothed best response with inertia: quantal response of the averaged score."""
    k = state.round + 1
    mu = cfg.mu.value(k)
    lam = cfg.lam.value(k)
    est = _estimate(state, inp, cfg)
    score = (1.0 - mu) * state.score + mu * est
    target = quantal_response(score, cfg.regularizer).probs
    probs = (1.0 - lam) * state.strategy.probs + lam * target
    return replace(state, round=k, score=score, strategy=Simplex(probs))


def da_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig) -> LearnerState:
    """Weighted score accumulation with a quantal-response strategy; no inertia."""
    k = state.round + 1
    mu = cfg.mu.value(k)
    est = _estimate(state, inp, cfg)
    score = state.score + mu * est
    return replace(state, round=k, score=score, strategy=quantal_response(score, cfg.regularizer))


def ftl_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig) -> LearnerState:
    """Follow the leader: best-response vertex of the accumulated score."""
    k = state.round + 1
    mu = cfg.mu.value(k)
    est = _estimate(state, inp, cfg)
    score = state.score + mu * est
    return replace(state, round=k, score=score, strategy=Simplex(_choice_target(score, cfg)))


def _lowest_argmax(vec: np.ndarray) -> int:
    return int(np.flatnonzero(vec >= vec.max() - BR_TIE_TOL)[0])


@lru_cache(maxsize=None)
def _vertex(m: int, a: int) -> Simplex:
    return Simplex.pure(m, a)


def fp_step(
    state: LearnerState,
    inp: StepInput,
    cfg: LearnerConfig,
    game: FiniteGame,
    player: int,
) -> LearnerState:
    """Fictitious play: best pure reply to the opponents' empirical mix.

    Opponent counts are exact integers updated from the observed round; the
    chosen action (lowest index among ties) is immediately counted into the
    own empirical record, realizing the 1/k opponent-frequency and 1/(k+1)
    own-frequency recursions.
    """
    if inp.opp_actions is None:
        raise LearnerError("fictitious play needs the opponents' actions")
    opp_counts = {j: c.copy() for j, c in state.opp_counts.items()}
    for j in opp_counts:
        if j not in inp.opp_actions:
            raise LearnerError(f"fictitious play for player {player} cannot see player {j}")
        opp_counts[j][inp.opp_actions[j]] += 1
    t = game.payoffs[player]
    if game.n_players == 2:
        c = opp_counts[1 - player]
        mix = c / c.sum()
        t = t @ mix if player == 0 else mix @ t
    else:
        for j in range(game.n_players - 1, -1, -1):
            if j == player:
                continue
            counts = opp_counts[j]
            t = np.tensordot(t, counts / counts.sum(), axes=([j], [0]))
    a = _lowest_argmax(t)
    own = state.own_counts.copy()
    own[a] += 1
    return replace(
        state,
        round=state.round + 1,
        strategy=_vertex(game.action_counts[player], a),
        own_counts=own,
        opp_counts=opp_counts,
    )


def gd_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig, action_set) -> LearnerState:
    """Projected gradient ascent: a <- proj(a + mu_k * gradient)."""
    k = state.round + 1
    a = euclidean_project(state.action + cfg.mu.value(k) * inp.gradient, action_set)
    return replace(state, round=k, action=a)


def lgd_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig, action_set) -> LearnerState:
    """Lazy gradient ascent: accumulate in Y, project when acting."""
    k = state.round + 1
    y = state.aux + cfg.mu.value(k) * inp.gradient
    return replace(state, round=k, aux=y, action=euclidean_project(y, action_set))


def md_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig, action_set) -> LearnerState:
    """Mirror ascent: accumulate in Y, act through the regularized choice map."""
    k = state.round + 1
    y = state.aux + cfg.mu.value(k) * inp.gradient
    return replace(state, round=k, aux=y, action=mirror_map(y, action_set, cfg.regularizer))


def ftrl_step(state: LearnerState, inp: StepInput, cfg: LearnerConfig, action_set) -> LearnerState:
    """Follow the regularized leader: unit-rate gradient accumulation."""
    k = state.round + 1
    y = state.aux + inp.gradient
    return replace(state, round=k, aux=y, action=mirror_map(y, action_set, cfg.regularizer))


# ---------------------------------------------------------------------------
# Initial states.


def initial_finite_state(
    game: FiniteGame, player: int, cfg: LearnerConfig, initial: np.ndarray | None = None
) -> LearnerState:
    m = game.action_counts[player]
    strategy = Simplex(initial) if initial is not None else Simplex.uniform(m)
    if cfg.kind == "fp":
        a0 = _lowest_argmax(strategy.probs)
        own = np.zeros(m, dtype=np.int64)
        own[a0] = 1
        opp = {
            j: np.zeros(game.action_counts[j], dtype=np.int64)
            for j in range(game.n_players)
            if j != player
        }
        return LearnerState(
            kind="fp",
            strategy=Simplex.pure(m, a0),
            own_counts=own,
            opp_counts=opp,
        )
    return LearnerState(kind=cfg.kind, strategy=strategy, score=np.zeros(m))


def initial_continuous_state(
    game: ContinuousGame, player: int, cfg: LearnerConfig, initial: np.ndarray | None = None
) -> LearnerState:
    aset = game.action_sets[player]
    if initial is not None:
        a0 = np.asarray(initial, dtype=np.float64)
        if not aset.contains(a0):
            raise LearnerError(f"initial action for player {player} is infeasible")
    elif isinstance(aset, SimplexSet):
        a0 = np.full(aset.dim, 1.0 / aset.dim)
    else:
        a0 = 0.5 * (aset.lower + aset.upper)
    if cfg.kind == "gd":
        return LearnerState(kind="gd", action=a0)
    if cfg.kind == "lgd":
        return LearnerState(kind="lgd", action=a0, aux=a0.copy())
    # md / ftrl: start the score at a mirror preimage of the initial action;
    # the default start is exactly mirror_map(0) so score 0 is the preimage
    if initial is None:
        y0 = np.zeros(aset.dim)
        a0 = mirror_map(y0, aset, cfg.regularizer)
    elif isinstance(cfg.regularizer, Entropy):
        if not isinstance(aset, SimplexSet):
            raise LearnerError("entropy regularizer requires a simplex action set")
        if a0.min() <= 0.0:
            raise LearnerError("entropy mirror map needs an interior initial point")
        y0 = cfg.regularizer.epsilon * np.log(a0)
    else:
        y0 = cfg.regularizer.epsilon * a0
    return LearnerState(kind=cfg.kind, action=a0, aux=y0)


# ---------------------------------------------------------------------------
# Trajectories and the synchronous driver.


@dataclass
class Trajectory:
    """Complete record of one repeated-game run.

    strategies[i][k-1] is the strategy (or continuous action) player i used
    at round k; per-round records count rounds x players.  ``actions`` holds
    sampled pure actions for finite runs and -1 for continuous runs.
    """

    game_kind: str
    dims: tuple[int, ...]
    rounds: int
    seed: int
    algorithms: tuple[str, ...]
    initial: list[np.ndarray]
    strategies: list[np.ndarray]
    actions: np.ndarray
    payoffs_raw: np.ndarray
    payoffs_noisy: np.ndarray
    residuals: np.ndarray
    final: list[np.ndarray]
    final_residual: float
    wall_time: float

    @property
    def n_players(self) -> int:
        return len(self.dims)

    @property
    def record_count(self) -> int:
        return self.rounds * self.n_players

    def time_averaged(self) -> list[np.ndarray]:
        if self.rounds == 0:
            return [s.copy() for s in self.initial]
        return [s.mean(axis=0) for s in self.strategies]


def _utility_vector_raw(game: FiniteGame, probs: Sequence[np.ndarray], i: int) -> np.ndarray:
    t = game.payoffs[i]
    if game.n_players == 2:
        return t @ probs[1] if i == 0 else probs[0] @ t
    for j in range(game.n_players - 1, -1, -1):
        if j == i:
            continue
        t = np.tensordot(t, probs[j], axes=([j], [0]))
    return t


def _svi_fast(game: FiniteGame, probs: Sequence[np.ndarray]) -> float:
    total = 0.0
    for i in range(game.n_players):
        vec = _utility_vector_raw(game, probs, i)
        gap = float(vec.max() - np.dot(probs[i], vec))
        if gap > 0.0:
            total += gap
    return total


def _validate_run(game, configs, rounds: int, seed: int, feedback: FeedbackSetup) -> None:
    if rounds < 0:
        raise LearnerError(f"rounds must be nonnegative, got {rounds}")
    if not 0 <= int(seed) < 2**64:
        raise LearnerError("seed must fit in 64 bits")
    if len(configs) != game.n_players:
        raise LearnerError(
            f"{len(configs)} learner configs for {game.n_players} players"
        )
    if isinstance(game, FiniteGame):
        for cfg in configs:
            if cfg.kind not in FINITE_KINDS:
                raise LearnerError(f"learner {cfg.kind!r} cannot play a finite game")
        for i, cfg in enumerate(configs):
            if cfg.kind == "fp":
                vis = visible_players(feedback.kind, i, game.n_players)
                if set(vis) != set(range(game.n_players)):
                    raise LearnerError(
                        f"fictitious play for player {i} needs all opponents visible"
                    )
    else:
        for cfg in configs:
            if cfg.kind not in CONTINUOUS_KINDS:
                raise LearnerError(f"learner {cfg.kind!r} cannot play a continuous game")
        if not isinstance(feedback.noise, NoNoise):
            raise LearnerError("continuous-game runs assume noiseless gradient feedback")
        if 1 not in visible_rounds(feedback.temporal, 1):
            raise LearnerError("continuous-game runs assume undelayed gradient feedback")


def run_repeated_game(
    game: FiniteGame | ContinuousGame,
    configs: Sequence[LearnerConfig],
    rounds: int,
    seed: int,
    feedback: FeedbackSetup | None = None,
    initial: Sequence[np.ndarray | None] | None = None,
) -> Trajectory:
    """Play the game synchronously for ``rounds`` rounds and record everything.

    All randomness (action sampling, payoff noise) flows from ``seed``
    through per-(purpose, player) streams consumed one draw per round, so a
    rerun with the same configuration is reproducible draw for draw.
    """
    feedback = feedback or FeedbackSetup()
    _validate_run(game, configs, rounds, seed, feedback)
    if initial is None:
        initial = [None] * game.n_players
    if len(initial) != game.n_players:
        raise LearnerError("one initial strategy per player required")
    if isinstance(game, FiniteGame):
        return _run_finite(game, configs, rounds, seed, feedback, initial)
    return _run_continuous(game, configs, rounds, seed, feedback, initial)


def _run_finite(game, configs, rounds, seed, feedback, initial) -> Trajectory:
    t0 = time.perf_counter()
    n = game.n_players
    counts = game.action_counts
    states = [
        initial_finite_state(game, i, configs[i], initial[i]) for i in range(n)
    ]
    streams = RunStreams(seed)
    act_rngs = [streams.stream("action", i) for i in range(n)]
    noise_rngs = [streams.stream("noise", i) for i in range(n)]
    vis = [visible_players(feedback.kind, i, n) for i in range(n)]

    K = rounds
    strat_hist = [np.empty((K, counts[i])) for i in range(n)]
    actions = np.empty((K, n), dtype=np.int64)
    payoffs_raw = np.empty((K, n))
    payoffs_noisy = np.empty((K, n))
    residuals = np.empty(K)
    history: list[RoundRecord] = []

    probs = [states[i].strategy.probs for i in range(n)]
    init_probs = [p.copy() for p in probs]

    for k in range(1, K + 1):
        for i in range(n):
            strat_hist[i][k - 1] = probs[i]
        joint = tuple(sample_action(probs[i], act_rngs[i]) for i in range(n))
        raw = tuple(float(game.payoffs[i][joint]) for i in range(n))
        noisy = tuple(
            apply_noise(raw[i], feedback.noise, noise_rngs[i]) for i in range(n)
        )
        actions[k - 1] = joint
        payoffs_raw[k - 1] = raw
        payoffs_noisy[k - 1] = noisy
        residuals[k - 1] = _svi_fast(game, probs)
        history.append(RoundRecord(actions=joint, payoffs_raw=raw, payoffs_noisy=noisy))

        seen = visible_rounds(feedback.temporal, k)
        if len(seen) == 0:
            continue
        r = seen[-1]
        rec = history[r - 1]
        probs_at_r = [strat_hist[i][r - 1] for i in range(n)]
        new_states = []
        for i, cfg in enumerate(configs):
            if cfg.kind == "fp":
                opp = {j: rec.actions[j] for j in vis[i] if j != i}
                inp = StepInput(round=r, opp_actions=opp)
                new_states.append(fp_step(states[i], inp, cfg, game, i))
                continue
            exact = None
            if cfg.estimator == "exact":
                exact = _utility_vector_raw(game, probs_at_r, i)
            inp = StepInput(
                round=r,
                own_action=int(rec.actions[i]),
                own_payoff=float(rec.payoffs_noisy[i]),
                own_probs=probs_at_r[i],
                exact_vector=exact,
            )
            step = _FINITE_STEPS[cfg.kind]
            new_states.append(step(states[i], inp, cfg))
        states = new_states
        probs = [states[i].strategy.probs for i in range(n)]

    final = [p.copy() for p in probs]
    return Trajectory(
        game_kind="finite",
        dims=tuple(counts),
        rounds=K,
        seed=int(seed),
        algorithms=tuple(ALGO_NAMES[c.kind] for c in configs),
        initial=init_probs,
        strategies=strat_hist,
        actions=actions,
        payoffs_raw=payoffs_raw,
        payoffs_noisy=payoffs_noisy,
        residuals=residuals,
        final=final,
        final_residual=_svi_fast(game, probs),
        wall_time=time.perf_counter() - t0,
    )


_FINITE_STEPS = {"br": brd_step, "sbr": sbr_step, "da": da_step, "ftl": ftl_step}

_CONTINUOUS_STEPS = {"gd": gd_step, "lgd": lgd_step, "md": md_step, "ftrl": ftrl_step}


def _run_continuous(game, configs, rounds, seed, feedback, initial) -> Trajectory:
    t0 = time.perf_counter()
    n = game.n_players
    dims = game.dims
    states = [
        initial_continuous_state(game, i, configs[i], initial[i]) for i in range(n)
    ]
    K = rounds
    strat_hist = [np.empty((K, dims[i])) for i in range(n)]
    payoffs = np.empty((K, n))
    residuals = np.empty(K)

    acts = [states[i].action for i in range(n)]
    init_acts = [a.copy() for a in acts]

    for k in range(1, K + 1):
        for i in range(n):
            strat_hist[i][k - 1] = acts[i]
        grads = game.gradient(list(acts))
        grads = [np.asarray(g, dtype=np.float64) for g in grads]
        u = np.asarray(game.utilities(list(acts)), dtype=np.float64)
        if not np.all(np.isfinite(u)) or any(not np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(f"non-finite payoff or gradient at round {k}")
        payoffs[k - 1] = u
        gap, _ = _continuous_gap_from_grads(game, acts, grads)
        residuals[k - 1] = gap
        new_states = []
        for i, cfg in enumerate(configs):
            inp = StepInput(round=k, own_payoff=float(u[i]), gradient=grads[i])
            step = _CONTINUOUS_STEPS[cfg.kind]
            new_states.append(step(states[i], inp, cfg, game.action_sets[i]))
        states = new_states
        acts = [states[i].action for i in range(n)]
        for i in range(n):
            if not np.all(np.isfinite(acts[i])):
                raise DivergenceError(f"non-finite action for player {i} after round {k}")

    final = [a.copy() for a in acts]
    final_grads = [np.asarray(g, dtype=np.float64) for g in game.gradient(list(acts))]
    final_gap, _ = _continuous_gap_from_grads(game, acts, final_grads)
    return Trajectory(
        game_kind="continuous",
        dims=tuple(dims),
        rounds=K,
        seed=int(seed),
        algorithms=tuple(ALGO_NAMES[c.kind] for c in configs),
        initial=init_acts,
        strategies=strat_hist,
        actions=np.full((K, n), -1, dtype=np.int64),
        payoffs_raw=payoffs,
        payoffs_noisy=payoffs.copy(),
        residuals=residuals,
        final=final,
        final_residual=final_gap,
        wall_time=time.perf_counter() - t0,
    )
