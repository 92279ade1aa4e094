"""Feedback structures: who sees what, when, and through how much noise.

Visibility is Global (everyone), Local (graph neighborhood, self included),
or Individual (self only).  Temporal filters shrink the visible round set:
Windowed(m) keeps the trailing m rounds (k-m, k], Delayed(m) hides the most
recent m rounds, leaving [1, k-m].  Filters compose left to right, so
(Delayed(m), Windowed(w)) applies the delay first and then the window.

All randomness in a run flows from one 64-bit seed.  Each (purpose, player)
pair owns an independent child stream consumed in strict round order with a
fixed number of draws per round, so any draw is a pure function of
(seed, purpose, player, round) and is unaffected by scheduling or thread
count.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .games import GameError, PlayerGraph

P_FLOOR = 1e-6


class FeedbackError(GameError):
    """Raised for malformed feedback structures or estimator guard trips."""


@dataclass(frozen=True)
class GlobalView:
    pass


@dataclass(frozen=True)
class LocalView:
    graph: PlayerGraph


@dataclass(frozen=True)
class IndividualView:
    pass


FeedbackKind = GlobalView | LocalView | IndividualView


@dataclass(frozen=True)
class Perfect:
    pass


@dataclass(frozen=True)
class Windowed:
    m: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise FeedbackError(f"window length must be >= 1, got {self.m}")


@dataclass(frozen=True)
class Delayed:
    m: int

    def __post_init__(self) -> None:
        if self.m < 0:
            raise FeedbackError(f"delay must be >= 0, got {self.m}")


TemporalFilter = Perfect | Windowed | Delayed


@dataclass(frozen=True)
class NoNoise:
    pass


@dataclass(frozen=True)
class UniformNoise:
    half_width: float

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise FeedbackError(f"half_width must be positive, got {self.half_width!r}")


@dataclass(frozen=True)
class GaussianTruncatedNoise:
    sigma: float
    clip: float

    def __post_init__(self) -> None:
        if not self.sigma > 0 or not self.clip > 0:
            raise FeedbackError("sigma and clip must be positive")


NoiseModel = NoNoise | UniformNoise | GaussianTruncatedNoise


@dataclass(frozen=True)
class FeedbackSetup:
    """Complete feedback structure for a run: who, when, and how noisily.

    ``temporal`` may be a single filter or a sequence applied left to right.
    """

    kind: FeedbackKind = GlobalView()
    temporal: object = Perfect()
    noise: NoiseModel = NoNoise()


@dataclass(frozen=True)
class RoundRecord:
    """One played round: joint actions plus raw and noisy payoffs."""

    actions: tuple[int, ...]
    payoffs_raw: tuple[float, ...]
    payoffs_noisy: tuple[float, ...]


@dataclass(frozen=True)
class Observation:
    """What one player sees of one round: entries only for visible players."""

    round: int
    actions: dict[int, int]
    payoffs: dict[int, float]


def visible_players(kind: FeedbackKind, i: int, n_players: int) -> tuple[int, ...]:
    """Players whose actions and (noisy) payoffs player i may see."""
    if not 0 <= i < n_players:
        raise FeedbackError(f"player {i} out of range")
    if isinstance(kind, GlobalView):
        return tuple(range(n_players))
    if isinstance(kind, IndividualView):
        return (i,)
    if isinstance(kind, LocalView):
        if kind.graph.n_nodes != n_players:
            raise FeedbackError(
                f"feedback graph has {kind.graph.n_nodes} nodes for {n_players} players"
            )
        return tuple(sorted({i, *kind.graph.neighbors(i)}))
    raise FeedbackError(f"unknown feedback kind {kind!r}")


def visible_rounds(temporal, k: int) -> range:
    """1-based rounds visible at round k under a filter or filter sequence."""
    if k < 0:
        raise FeedbackError(f"round {k} out of range")
    filters: Sequence[TemporalFilter]
    if isinstance(temporal, (Perfect, Windowed, Delayed)):
        filters = (temporal,)
    else:
        filters = tuple(temporal)
    lo, hi = 1, k
    for f in filters:
        if isinstance(f, Perfect):
            continue
        if isinstance(f, Delayed):
            hi = hi - f.m
        elif isinstance(f, Windowed):
            lo = max(lo, hi - f.m + 1)
        else:
            raise FeedbackError(f"unknown temporal filter {f!r}")
    hi = min(hi, k)
    if hi < lo:
        return range(1, 1)
    return range(lo, hi + 1)


def observe(
    history: Sequence[RoundRecord],
    i: int,
    kind: FeedbackKind,
    temporal=Perfect(),
    n_players: int | None = None,
) -> list[Observation]:
    """Everything player i may see of the history at round k = len(history)."""
    k = len(history)
    if n_players is None:
        n_players = len(history[0].actions) if history else 0
    if k == 0:
        return []
    vis = visible_players(kind, i, n_players)
    out = []
    for r in visible_rounds(temporal, k):
        rec = history[r - 1]
        out.append(
            Observation(
                round=r,
                actions={j: rec.actions[j] for j in vis},
                payoffs={j: rec.payoffs_noisy[j] for j in vis},
            )
        )
    return out


def apply_noise(value: float, model: NoiseModel, rng: np.random.Generator) -> float:
    """value + a zero-mean bounded perturbation; one draw per call at most."""
    if isinstance(model, NoNoise):
        return float(value)
    if isinstance(model, UniformNoise):
        return float(value + rng.uniform(-model.half_width, model.half_width))
    if isinstance(model, GaussianTruncatedNoise):
        xi = rng.normal(0.0, model.sigma)
        return float(value + np.clip(xi, -model.clip, model.clip))
    raise FeedbackError(f"unknown noise model {model!r}")


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sample; consumes exactly one uniform draw."""
    r = rng.random()
    c = 0.0
    last = probs.shape[0] - 1
    for a in range(last):
        c += probs[a]
        if r < c:
            return a
    return last


def importance_estimate(
    payoff: float, action: int, probs: np.ndarray, p_floor: float = P_FLOOR
) -> np.ndarray:
    """Single-sample unbiased estimate of the utility vector from own feedback.

    The played coordinate gets payoff / P(action); every other coordinate is
    zero, so the estimate is unbiased conditional on the opponents' play
    whenever P(action) is used un-floored.  Probabilities below p_floor are
    clamped in the denominator to bound the variance (introducing bias only
    there); a nonpositive probability for the played action is an error.
    """
    m = probs.shape[0]
    if not 0 <= action < m:
        raise FeedbackError(f"action {action} out of range for {m} actions")
    p = float(probs[action])
    if p <= 0.0:
        raise FeedbackError(f"played action {action} has probability {p}")
    out = np.zeros(m)
    out[action] = payoff / max(p, p_floor)
    return out


@dataclass
class RunStreams:
    """Per-(purpose, player) child generators derived from one master seed."""

    seed: int
    _cache: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise FeedbackError("seed must fit in 64 bits")
        self.seed = int(self.seed)

    def stream(self, purpose: str, player: int) -> np.random.Generator:
        key = (purpose, int(player))
        gen = self._cache.get(key)
        if gen is None:
            tag = zlib.crc32(purpose.encode("utf-8")) & 0x7FFFFFFF
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(tag, int(player)))
            gen = np.random.Generator(np.random.Philox(ss))
            self._cache[key] = gen
        return gen
