"""Game representations and payoff evaluation.

Finite games keep one dense payoff tensor per player, indexed by the joint
action.  Mixed strategies are simplex points; expected payoffs are tensor
contractions against the profile.  Continuous games carry callable payoff
evaluators and gradients over box or simplex action sets.  Markov games are
finite-state stage games evaluated under a fixed stationary policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SUM_TOL = 1e-9
NONNEG_TOL = 1e-12
ENUMERATION_CAP = 10**7

_LETTERS = "abcdefghijklmnopqrstuvwxy"


class GameError(ValueError):
    """Raised for malformed games, profiles, or evaluation requests."""


class DivergenceError(GameError):
    """Raised when a run produces non-finite payoffs, gradients, or iterates."""


def _as_float_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise GameError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise GameError(f"{what} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise GameError(f"{what} must be finite")
    return arr


@dataclass(frozen=True)
class Simplex:
    """A probability vector over a finite action set.

    Construction renormalizes silently when the coordinate sum deviates from 1
    by at most 1e-9 and rejects anything worse.  Entries below -1e-12 are
    rejected; tiny negative round-off is clipped to 0.  The wrapped array is
    read-only.
    """

    probs: np.ndarray

    def __init__(self, probs) -> None:
        arr = _as_float_vector(probs, "simplex point").copy()
        if arr.min() < -NONNEG_TOL:
            raise GameError(f"simplex point has negative entry {arr.min()!r}")
        np.clip(arr, 0.0, None, out=arr)
        total = arr.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise GameError(f"simplex point sums to {total!r}, expected 1")
        arr /= total
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[0]

    @staticmethod
    def _wrap(arr: np.ndarray) -> "Simplex":
        """Wrap a fresh float64 vector already known to lie on the simplex.

        Internal fast path for maps whose output is nonnegative and
        normalized by construction (softmax, simplex projection); skips the
        validation and renormalization of the public constructor.
        """
        arr.setflags(write=False)
        out = object.__new__(Simplex)
        object.__setattr__(out, "probs", arr)
        return out

    @staticmethod
    def uniform(m: int) -> "Simplex":
        return Simplex(np.full(m, 1.0 / m))

    @staticmethod
    def pure(m: int, action: int) -> "Simplex":
        if not 0 <= action < m:
            raise GameError(f"pure action {action} out of range for {m} actions")
        v = np.zeros(m)
        v[action] = 1.0
        return Simplex(v)


Profile = tuple[Simplex, ...]


@dataclass(frozen=True)
class FiniteGame:
    """A finite normal-form game: one payoff tensor per player.

    payoffs[i] has shape ``action_counts`` and payoffs[i][a_1, ..., a_N] is
    player i's payoff at that joint pure action.
    """

    payoffs: tuple[np.ndarray, ...]
    action_labels: tuple[tuple[str, ...], ...] | None = None

    def __init__(self, payoffs: Sequence[np.ndarray], action_labels=None) -> None:
        tensors = tuple(np.ascontiguousarray(t, dtype=np.float64) for t in payoffs)
        if len(tensors) < 1:
            raise GameError("a finite game needs at least one player")
        if len(tensors) >= len(_LETTERS):
            raise GameError("too many players")
        shape = tensors[0].shape
        if len(shape) != len(tensors):
            raise GameError(
                f"payoff tensor rank {len(shape)} does not match player count {len(tensors)}"
            )
        if any(m < 1 for m in shape):
            raise GameError("every player needs at least one action")
        for i, t in enumerate(tensors):
            if t.shape != shape:
                raise GameError(
                    f"payoff tensor for player {i} has shape {t.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(t)):
                raise GameError(f"payoff tensor for player {i} has non-finite entries")
            t.setflags(write=False)
        if action_labels is not None:
            action_labels = tuple(tuple(str(x) for x in labels) for labels in action_labels)
            if tuple(len(labels) for labels in action_labels) != shape:
                raise GameError("action label counts do not match action counts")
        object.__setattr__(self, "payoffs", tensors)
        object.__setattr__(self, "action_labels", action_labels)

    @property
    def n_players(self) -> int:
        return len(self.payoffs)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.payoffs[0].shape

    def joint_action_count(self) -> int:
        return int(np.prod(self.action_counts, dtype=np.int64))


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact box: lower <= x <= upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper) -> None:
        lo = _as_float_vector(lower, "box lower bound")
        hi = _as_float_vector(upper, "box upper bound")
        if lo.shape != hi.shape:
            raise GameError("box bounds must have matching shapes")
        if np.any(lo > hi):
            raise GameError("box lower bound exceeds upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class SimplexSet:
    """The standard probability simplex in R^dim, used as a continuous action set."""

    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise GameError("simplex action set needs dim >= 1")

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= -tol) and abs(float(np.sum(x)) - 1.0) <= tol)


ActionSet = Box | SimplexSet


@dataclass(frozen=True)
class ContinuousGame:
    """A concave continuous game over per-player box or simplex action sets.

    ``utilities(actions)`` returns the per-player payoff vector at a joint
    action (a list of per-player arrays); ``gradient(actions)`` returns each
    player's own-action payoff gradient at that joint action.
    """

    action_sets: tuple[ActionSet, ...]
    utilities: Callable[[Sequence[np.ndarray]], np.ndarray]
    gradient: Callable[[Sequence[np.ndarray]], list[np.ndarray]]

    def __post_init__(self) -> None:
        if len(self.action_sets) < 1:
            raise GameError("a continuous game needs at least one player")

    @property
    def n_players(self) -> int:
        return len(self.action_sets)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.action_sets)


@dataclass(frozen=True)
class MarkovGame:
    """Finite Markov game data for policy evaluation.

    payoffs[i] has shape (n_states, m_1, ..., m_N); transition has shape
    (n_states, m_1, ..., m_N, n_states) with rows summing to 1.  Payoff at
    stage k is discounted by discount**k, with the first stage at k = 1.
    """

    payoffs: tuple[np.ndarray, ...]
    transition: np.ndarray
    discount: float

    def __init__(self, payoffs, transition, discount: float) -> None:
        tensors = tuple(np.ascontiguousarray(t, dtype=np.float64) for t in payoffs)
        trans = np.ascontiguousarray(transition, dtype=np.float64)
        if len(tensors) < 1:
            raise GameError("a Markov game needs at least one player")
        shape = tensors[0].shape
        if len(shape) < 2:
            raise GameError("stage payoffs need a state axis and one action axis per player")
        n_states = shape[0]
        if len(shape) - 1 != len(tensors):
            raise GameError("stage payoff rank does not match player count")
        for i, t in enumerate(tensors):
            if t.shape != shape:
                raise GameError(f"stage payoffs for player {i} have shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise GameError(f"stage payoffs for player {i} have non-finite entries")
            t.setflags(write=False)
        if trans.shape != shape + (n_states,):
            raise GameError(f"transition has shape {trans.shape}, expected {shape + (n_states,)}")
        if np.any(trans < -NONNEG_TOL):
            raise GameError("transition probabilities must be nonnegative")
        sums = trans.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > SUM_TOL:
            raise GameError("transition rows must sum to 1")
        if not 0.0 <= discount < 1.0:
            raise GameError(f"discount must lie in [0, 1), got {discount!r}")
        trans.setflags(write=False)
        object.__setattr__(self, "payoffs", tensors)
        object.__setattr__(self, "transition", trans)
        object.__setattr__(self, "discount", float(discount))

    @property
    def n_states(self) -> int:
        return self.payoffs[0].shape[0]

    @property
    def n_players(self) -> int:
        return len(self.payoffs)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.payoffs[0].shape[1:]


@dataclass(frozen=True)
class PlayerGraph:
    """Undirected interaction graph over players, no self loops."""

    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n_nodes: int, edges) -> None:
        if n_nodes < 1:
            raise GameError("player graph needs at least one node")
        canon = set()
        for e in edges:
            u, v = int(e[0]), int(e[1])
            if u == v:
                raise GameError(f"self loop at node {u}")
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise GameError(f"edge ({u}, {v}) out of range for {n_nodes} nodes")
            canon.add((min(u, v), max(u, v)))
        object.__setattr__(self, "n_nodes", int(n_nodes))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    def neighbors(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.n_nodes:
            raise GameError(f"node {i} out of range")
        out = set()
        for u, v in self.edges:
            if u == i:
                out.add(v)
            elif v == i:
                out.add(u)
        return tuple(sorted(out))


def _check_profile(game: FiniteGame, profile: Profile) -> None:
    if len(profile) != game.n_players:
        raise GameError(
            f"profile has {len(profile)} strategies for {game.n_players} players"
        )
    for j, (pi, m) in enumerate(zip(profile, game.action_counts)):
        if pi.n_actions != m:
            raise GameError(
                f"player {j} strategy has {pi.n_actions} entries, expected {m}"
            )


def _check_player(game, i: int) -> None:
    if not 0 <= i < game.n_players:
        raise GameError(f"player index {i} out of range for {game.n_players} players")


def utility_vector(game: FiniteGame, profile: Profile, i: int) -> np.ndarray:
    """Player i's payoff to each own action against the others' mixed play.

    Returns the vector a -> u_i(e_a, profile_{-i}); its inner product with
    profile[i] is the expected payoff.
    """
    _check_player(game, i)
    _check_profile(game, profile)
    return _contract_opponents(game, [p.probs for p in profile], i)


def _contract_opponents(game: FiniteGame, probs: Sequence[np.ndarray], i: int) -> np.ndarray:
    """Contract every opponent axis of payoffs[i] with that player's strategy."""
    t = game.payoffs[i]
    if game.n_players == 2:
        return t @ probs[1] if i == 0 else probs[0] @ t
    for j in range(game.n_players - 1, -1, -1):
        if j == i:
            continue
        t = np.tensordot(t, probs[j], axes=([j], [0]))
    return t


def expected_utility(game: FiniteGame, profile: Profile, i: int) -> float:
    """Expected payoff of player i under a mixed profile."""
    return float(np.dot(profile[i].probs, utility_vector(game, profile, i)))


def utility_vectors(game: FiniteGame, profile: Profile) -> list[np.ndarray]:
    return [utility_vector(game, profile, i) for i in range(game.n_players)]


def utility_vectors_batch(
    game: FiniteGame, probs: Sequence[np.ndarray], i: int
) -> np.ndarray:
    """Batched utility_vector: probs[j] is a (B, m_j) stack of strategies.

    Returns a (B, m_i) array.  The batch axis is shared across players, so row
    b evaluates the profile (probs[0][b], ..., probs[N-1][b]).
    """
    _check_player(game, i)
    n = game.n_players
    if n == 1:
        b = np.asarray(probs[i]).shape[0]
        return np.broadcast_to(game.payoffs[i], (b, game.action_counts[i])).copy()
    if n == 2:
        t = game.payoffs[i]
        other = np.asarray(probs[1 - i], dtype=np.float64)
        return other @ t.T if i == 0 else other @ t
    subs_in = [_LETTERS[:n]]
    operands: list[np.ndarray] = [game.payoffs[i]]
    for j in range(n):
        if j == i:
            continue
        operands.append(np.asarray(probs[j], dtype=np.float64))
        subs_in.append("z" + _LETTERS[j])
    expr = ",".join(subs_in) + "->z" + _LETTERS[i]
    return np.einsum(expr, *operands, optimize=True)


def pure_payoffs(game: FiniteGame, joint: Sequence[int]) -> np.ndarray:
    """Per-player payoff vector at a joint pure action."""
    idx = tuple(int(a) for a in joint)
    if len(idx) != game.n_players:
        raise GameError("joint action length does not match player count")
    for a, m in zip(idx, game.action_counts):
        if not 0 <= a < m:
            raise GameError(f"action {a} out of range for {m} actions")
    return np.array([t[idx] for t in game.payoffs])


def uniform_profile(game: FiniteGame) -> Profile:
    return tuple(Simplex.uniform(m) for m in game.action_counts)


def pure_profile(game: FiniteGame, joint: Sequence[int]) -> Profile:
    return tuple(Simplex.pure(m, int(a)) for m, a in zip(game.action_counts, joint))


def payoff_gradient(game: ContinuousGame, actions: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Each player's own-action payoff gradient at a feasible joint action."""
    acts = _check_actions(game, actions)
    grads = game.gradient(acts)
    out = []
    for i, g in enumerate(grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (game.action_sets[i].dim,):
            raise GameError(f"gradient for player {i} has shape {g.shape}")
        out.append(g)
    return out


def continuous_utilities(game: ContinuousGame, actions: Sequence[np.ndarray]) -> np.ndarray:
    acts = _check_actions(game, actions)
    u = np.asarray(game.utilities(acts), dtype=np.float64)
    if u.shape != (game.n_players,):
        raise GameError(f"utility evaluator returned shape {u.shape}")
    return u


def _check_actions(game: ContinuousGame, actions: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(actions) != game.n_players:
        raise GameError("joint action length does not match player count")
    acts = []
    for i, (a, s) in enumerate(zip(actions, game.action_sets)):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (s.dim,):
            raise GameError(f"action for player {i} has shape {a.shape}, expected ({s.dim},)")
        if not s.contains(a):
            raise GameError(f"action for player {i} lies outside its action set")
        acts.append(a)
    return acts


def mixed_extension(game: FiniteGame) -> ContinuousGame:
    """The finite game viewed as a continuous game over strategy simplices.

    Utilities are the expected payoffs; each player's payoff gradient is its
    utility vector, by multilinearity.
    """

    # The closures are reached through continuous_utilities / payoff_gradient,
    # whose feasibility checks already vouch for the action vectors, so the
    # contraction runs on the raw arrays.

    def utilities(actions: Sequence[np.ndarray]) -> np.ndarray:
        acts = [np.asarray(a, dtype=np.float64) for a in actions]
        return np.array(
            [float(np.dot(acts[i], _contract_opponents(game, acts, i))) for i in range(game.n_players)]
        )

    def gradient(actions: Sequence[np.ndarray]) -> list[np.ndarray]:
        acts = [np.asarray(a, dtype=np.float64) for a in actions]
        return [_contract_opponents(game, acts, i) for i in range(game.n_players)]

    return ContinuousGame(
        action_sets=tuple(SimplexSet(m) for m in game.action_counts),
        utilities=utilities,
        gradient=gradient,
    )


def _policy_mix(game: MarkovGame, policy: Sequence[Profile]):
    """Per-state mean stage payoffs (S, N) and state transition matrix (S, S)."""
    S = game.n_states
    n = game.n_players
    if len(policy) != S:
        raise GameError(f"policy must give one profile per state ({S}), got {len(policy)}")
    u_bar = np.empty((S, n))
    P = np.empty((S, S))
    for s in range(S):
        profile = policy[s]
        if len(profile) != n:
            raise GameError(f"state {s} profile has {len(profile)} strategies for {n} players")
        joint = np.array(1.0)
        for j, pi in enumerate(profile):
            if pi.n_actions != game.action_counts[j]:
                raise GameError(
                    f"state {s} player {j} strategy size {pi.n_actions} != {game.action_counts[j]}"
                )
            joint = np.multiply.outer(joint, pi.probs)
        axes = tuple(range(n))
        for i in range(n):
            u_bar[s, i] = np.tensordot(game.payoffs[i][s], joint, axes=(axes, axes))
        P[s] = np.tensordot(game.transition[s], joint, axes=(axes, axes))
    return u_bar, P


def state_values(
    game: MarkovGame,
    policy: Sequence[Profile],
    tol: float = 1e-9,
    method: str = "auto",
) -> np.ndarray:
    """Discounted value of every state under a fixed stationary policy.

    Returns an (n_states, n_players) array.  The stage-1 payoff enters with
    weight discount**1.  ``method`` is "auto", "linear", or "iterative";
    "auto" solves the linear system when n_states * prod(action_counts)
    is at most 1e4 and iterates to within ``tol`` otherwise.
    """
    if method not in ("auto", "linear", "iterative"):
        raise GameError(f"unknown policy evaluation method {method!r}")
    u_bar, P = _policy_mix(game, policy)
    g = game.discount
    if method == "auto":
        size = game.n_states * int(np.prod(game.action_counts, dtype=np.int64))
        method = "linear" if size <= 10**4 else "iterative"
    if method == "linear":
        A = np.eye(game.n_states) - g * P
        return np.linalg.solve(A, g * u_bar)
    u_max = max(float(np.max(np.abs(t))) for t in game.payoffs)
    if g == 0.0 or u_max == 0.0:
        return np.zeros_like(u_bar)
    horizon = 1
    bound = g * u_max / (1.0 - g)
    while bound * g**horizon >= tol * g:
        horizon += 1
    V = np.zeros_like(u_bar)
    for _ in range(horizon):
        V = g * (u_bar + P @ V)
    return V


def markov_value(
    game: MarkovGame,
    policy: Sequence[Profile],
    state: int,
    tol: float = 1e-9,
    method: str = "auto",
) -> np.ndarray:
    """Per-player discounted value of ``state`` under a stationary policy."""
    if not 0 <= state < game.n_states:
        raise GameError(f"state {state} out of range for {game.n_states} states")
    return state_values(game, policy, tol=tol, method=method)[state]


def joint_actions(game: FiniteGame):
    """Iterator over all joint pure actions; errors above the enumeration cap."""
    if game.joint_action_count() > ENUMERATION_CAP:
        raise GameError(
            f"joint action space {game.joint_action_count()} exceeds cap {ENUMERATION_CAP}"
        )
    return itertools.product(*(range(m) for m in game.action_counts))


# ---------------------------------------------------------------------------
# Bundled finite games and JSON ingestion.


def matching_pennies() -> FiniteGame:
    u1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return FiniteGame([u1, -u1], action_labels=[("H", "T"), ("H", "T")])


def prisoners_dilemma(r: float = 3.0, s: float = 0.0, t: float = 5.0, p: float = 1.0) -> FiniteGame:
    if not (t > r > p > s):
        raise GameError("payoffs must satisfy t > r > p > s")
    u1 = np.array([[r, s], [t, p]])
    return FiniteGame([u1, u1.T], action_labels=[("C", "D"), ("C", "D")])


def coordination(values: Sequence[float] = (1.0, 2.0)) -> FiniteGame:
    v = _as_float_vector(values, "coordination payoffs")
    u = np.diag(v)
    return FiniteGame([u, u.copy()])


def random_game(actions: Sequence[int], seed: int, low: float = -1.0, high: float = 1.0,
                integer: bool = False) -> FiniteGame:
    shape = tuple(int(m) for m in actions)
    rng = np.random.default_rng(seed)
    if integer:
        tensors = [rng.integers(int(low), int(high) + 1, size=shape).astype(np.float64)
                   for _ in shape]
    else:
        tensors = [rng.uniform(low, high, size=shape) for _ in shape]
    return FiniteGame(tensors)


def random_zero_sum(actions: Sequence[int], seed: int) -> FiniteGame:
    shape = tuple(int(m) for m in actions)
    if len(shape) != 2:
        raise GameError("zero-sum generator builds two-player games")
    u1 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=shape)
    return FiniteGame([u1, -u1])


def random_potential_game(actions: Sequence[int], seed: int) -> FiniteGame:
    """Random exact-potential game: u_i = potential + own-action-independent term."""
    shape = tuple(int(m) for m in actions)
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-1.0, 1.0, size=shape)
    tensors = []
    for i in range(len(shape)):
        other_shape = shape[:i] + (1,) + shape[i + 1:]
        dummy = rng.uniform(-1.0, 1.0, size=other_shape)
        tensors.append(phi + dummy)
    return FiniteGame(tensors)


GENERATORS: dict[str, Callable[..., FiniteGame]] = {
    "matching_pennies": matching_pennies,
    "prisoners_dilemma": prisoners_dilemma,
    "coordination": coordination,
    "random": random_game,
    "random_zero_sum": random_zero_sum,
    "random_potential": random_potential_game,
}


def finite_game_from_json(doc: dict) -> FiniteGame:
    """Build a FiniteGame from {"players": N, "actions": [...], "payoffs": [...]}.

    payoffs[i] is player i's tensor flattened row-major; its length must be
    the product of the action counts.
    """
    try:
        n = int(doc["players"])
        actions = [int(m) for m in doc["actions"]]
        payoffs = doc["payoffs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GameError(f"malformed finite game document: {exc}") from exc
    if n != len(actions):
        raise GameError(f"players = {n} but {len(actions)} action counts given")
    if len(payoffs) != n:
        raise GameError(f"expected {n} payoff lists, got {len(payoffs)}")
    shape = tuple(actions)
    expected = int(np.prod(shape, dtype=np.int64))
    tensors = []
    for i, flat in enumerate(payoffs):
        arr = np.asarray(flat, dtype=np.float64).ravel()
        if arr.size != expected:
            raise GameError(
                f"payoffs for player {i} have {arr.size} entries, expected "
                f"prod(actions) = {expected}"
            )
        tensors.append(arr.reshape(shape))
    labels = doc.get("labels")
    return FiniteGame(tensors, action_labels=labels)


def finite_game_to_json(game: FiniteGame) -> dict:
    doc = {
        "players": game.n_players,
        "actions": list(game.action_counts),
        "payoffs": [t.ravel().tolist() for t in game.payoffs],
    }
    if game.action_labels is not None:
        doc["labels"] = [list(labels) for labels in game.action_labels]
    return doc


def build_finite_game(doc: dict) -> FiniteGame:
    """Dispatch on {"type": "finite", ...} or {"type": "generator", "name": ..., "params": ...}."""
    kind = doc.get("type", "finite")
    if kind == "finite":
        return finite_game_from_json(doc)
    if kind == "generator":
        name = doc.get("name")
        if name not in GENERATORS:
            raise GameError(f"unknown game generator {name!r}")
        params = doc.get("params", {})
        if not isinstance(params, dict):
            raise GameError("generator params must be an object")
        return GENERATORS[name](**params)
    raise GameError(f"unknown game type {kind!r}")
