"""Equilibrium checks via variational-inequality residuals.

A profile is a Nash equilibrium of the mixed extension iff the per-player
best-response gaps all vanish; their sum is the residual reported here.  The
sampled checks probe the equivalent Minty-type condition and the stronger
neighborhood-stability condition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .games import (
    Box,
    ContinuousGame,
    FiniteGame,
    GameError,
    Profile,
    SimplexSet,
    payoff_gradient,
    utility_vector,
    utility_vectors_batch,
)

TOL_EXACT = 1e-9
TOL_TRAJECTORY = 1e-6
PURE_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Witness:
    """A deviation achieving the largest single-player gap."""

    player: int
    action: int | None = None
    direction: np.ndarray | None = None


@dataclass(frozen=True)
class NEVerdict:
    residual: float
    witness: Witness | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


@dataclass(frozen=True)
class SampledVerdict:
    """Outcome of a sampled inequality check: worst value over the samples."""

    worst: float
    n_samples: int
    tol: float
    witness: tuple[np.ndarray, ...] | None

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def pure_ne_enumerate(game: FiniteGame, tol: float = PURE_TIE_TOL) -> list[tuple[tuple[int, ...], bool]]:
    """All pure Nash equilibria as (joint action, strict?) pairs.

    A joint action is an equilibrium when no unilateral pure deviation gains
    more than tol; it is strict when every deviation strictly loses.
    """
    if game.joint_action_count() > 10**7:
        raise GameError("joint action space exceeds the enumeration cap")
    ne_mask = np.ones(game.action_counts, dtype=bool)
    strict_mask = np.ones(game.action_counts, dtype=bool)
    for i, t in enumerate(game.payoffs):
        mx = t.max(axis=i, keepdims=True)
        is_br = t >= mx - tol
        n_ties = is_br.sum(axis=i, keepdims=True)
        ne_mask &= is_br
        strict_mask &= is_br & (n_ties == 1)
    out = []
    for joint in np.argwhere(ne_mask):
        key = tuple(int(a) for a in joint)
        out.append((key, bool(strict_mask[key])))
    return out


def svi_residual(game: FiniteGame, profile: Profile, tol: float = TOL_EXACT) -> NEVerdict:
    """Total best-response gap of a mixed profile (the exploitability).

    Zero exactly at Nash equilibria; the witness is the single (player,
    action) deviation with the largest gap, None when the residual vanishes.
    """
    total = 0.0
    best_gap = -1.0
    witness = None
    for i in range(game.n_players):
        vec = utility_vector(game, profile, i)
        gap = float(vec.max() - np.dot(profile[i].probs, vec))
        gap = max(gap, 0.0)
        total += gap
        if gap > best_gap:
            best_gap = gap
            witness = Witness(player=i, action=int(np.argmax(vec)))
    if total == 0.0:
        witness = None
    return NEVerdict(residual=total, witness=witness, tol=tol)


def _dirichlet_profiles(game: FiniteGame, n_samples: int, rng: np.random.Generator):
    return [rng.dirichlet(np.ones(m), size=n_samples) for m in game.action_counts]


def _joint_inner(game: FiniteGame, probs, candidate: Profile) -> np.ndarray:
    """<u(pi), pi - candidate> for a batch of profiles; probs[j] is (B, m_j)."""
    total = None
    for i in range(game.n_players):
        vec = utility_vectors_batch(game, probs, i)
        diff = probs[i] - candidate[i].probs[None, :]
        term = np.sum(vec * diff, axis=1)
        total = term if total is None else total + term
    return total


def mvi_check(
    game: FiniteGame,
    candidate: Profile,
    n_samples: int = 10**4,
    seed: int = 0,
    tol: float = TOL_EXACT,
) -> SampledVerdict:
    """Sampled Minty-type check: sup over profiles of <u(pi), pi - candidate>.

    At a Nash candidate the inner product is nonpositive for every profile;
    the verdict reports the worst sampled value and the profile achieving it.
    """
    if n_samples < 1:
        raise GameError("mvi_check needs at least one sample")
    rng = np.random.default_rng(seed)
    probs = _dirichlet_profiles(game, n_samples, rng)
    vals = _joint_inner(game, probs, candidate)
    idx = int(np.argmax(vals))
    witness = tuple(p[idx].copy() for p in probs)
    return SampledVerdict(worst=float(vals[idx]), n_samples=n_samples, tol=tol, witness=witness)


def vs_probe(
    game: FiniteGame,
    candidate: Profile,
    radius: float,
    n_samples: int = 10**4,
    seed: int = 0,
    tol: float = TOL_EXACT,
) -> SampledVerdict:
    """Neighborhood stability probe within an l1 ball around the candidate.

    Samples feasible profiles pi with ||pi - candidate||_1 <= radius and
    requires <u(pi), pi - candidate> <= tol on all of them.  radius 0 is the
    degenerate neighborhood {candidate} and passes trivially.
    """
    if radius < 0:
        raise GameError(f"radius must be nonnegative, got {radius!r}")
    if radius == 0.0:
        return SampledVerdict(worst=0.0, n_samples=0, tol=tol, witness=None)
    if n_samples < 1:
        raise GameError("vs_probe needs at least one sample")
    rng = np.random.default_rng(seed)
    raw = _dirichlet_profiles(game, n_samples, rng)
    base = [c.probs[None, :] for c in candidate]
    dist = np.zeros(n_samples)
    for j in range(game.n_players):
        dist += np.sum(np.abs(raw[j] - base[j]), axis=1)
    shrink = np.where(dist > 0, np.minimum(1.0, radius / np.maximum(dist, 1e-300)), 0.0)
    shrink *= rng.uniform(0.0, 1.0, size=n_samples) ** (1.0 / max(game.n_players, 1))
    probs = [base[j] + shrink[:, None] * (raw[j] - base[j]) for j in range(game.n_players)]
    vals = _joint_inner(game, probs, candidate)
    idx = int(np.argmax(vals))
    witness = tuple(p[idx].copy() for p in probs)
    return SampledVerdict(worst=float(vals[idx]), n_samples=n_samples, tol=tol, witness=witness)


def continuous_ne_residual(
    game: ContinuousGame, actions, tol: float = TOL_EXACT
) -> NEVerdict:
    """First-order stationarity residual for a continuous concave game.

    Per player, the maximum of <grad_i, x - a_i> over the player's action set,
    in closed form (corner selection on boxes, best vertex on simplices),
    summed over players.
    """
    grads = payoff_gradient(game, actions)
    total, witness = _continuous_gap_from_grads(game, actions, grads)
    return NEVerdict(residual=total, witness=witness, tol=tol)


def _continuous_gap_from_grads(
    game: ContinuousGame, actions, grads
) -> tuple[float, Witness | None]:
    """Summed first-order gap and worst witness given precomputed gradients."""
    total = 0.0
    best_gap = -1.0
    witness = None
    for i, (g, aset) in enumerate(zip(grads, game.action_sets)):
        a = np.asarray(actions[i], dtype=np.float64)
        if isinstance(aset, Box):
            lo_term = g * (aset.lower - a)
            hi_term = g * (aset.upper - a)
            best = np.maximum(lo_term, hi_term)
            gap = float(np.sum(best))
            direction = np.where(hi_term >= lo_term, aset.upper, aset.lower)
            cand = Witness(player=i, direction=direction)
        elif isinstance(aset, SimplexSet):
            gap = float(g.max() - np.dot(g, a))
            cand = Witness(player=i, action=int(np.argmax(g)))
        else:
            raise GameError(f"unknown action set {aset!r}")
        gap = max(gap, 0.0)
        total += gap
        if gap > best_gap:
            best_gap = gap
            witness = cand
    if total == 0.0:
        witness = None
    return total, witness
