"""Choice maps: best responses, regularized (quantal) responses, projections."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .games import Box, GameError, Simplex, SimplexSet

BR_TIE_TOL = 1e-12


class TieRule(enum.Enum):
    LOWEST_INDEX = "lowest_index"
    UNIFORM_OVER_ARGMAX = "uniform_over_argmax"


@dataclass(frozen=True)
class Entropy:
    """Negative-entropy regularizer scaled by epsilon; domain is the simplex."""

    epsilon: float = 1.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise GameError(f"entropy regularizer needs epsilon > 0, got {self.epsilon!r}")


@dataclass(frozen=True)
class SquaredEuclidean:
    """0.5 * ||x||^2 regularizer scaled by epsilon."""

    epsilon: float = 1.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise GameError(
                f"squared-euclidean regularizer needs epsilon > 0, got {self.epsilon!r}"
            )


Regularizer = Entropy | SquaredEuclidean


def best_response_set(u: np.ndarray, tol: float = BR_TIE_TOL) -> np.ndarray:
    """Indices of best actions; anything within tol of the max ties."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise GameError("score vector must be non-empty and one-dimensional")
    if not np.all(np.isfinite(u)):
        raise GameError("score vector must be finite")
    return np.flatnonzero(u >= u.max() - tol)


def best_response(u: np.ndarray, rule: TieRule = TieRule.LOWEST_INDEX) -> Simplex:
    """A maximizer of <pi, u> over the simplex, resolved by the tie rule."""
    u = np.asarray(u, dtype=np.float64)
    ties = best_response_set(u)
    m = u.size
    if rule is TieRule.LOWEST_INDEX:
        return Simplex.pure(m, int(ties[0]))
    probs = np.zeros(m)
    probs[ties] = 1.0 / ties.size
    return Simplex(probs)


def softmax(u: np.ndarray) -> np.ndarray:
    """Shift-stabilized softmax; subtracts the max before exponentiating."""
    u = np.asarray(u, dtype=np.float64)
    z = np.exp(u - u.max())
    return z / z.sum()


def _project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorted-threshold rule)."""
    y = np.asarray(y, dtype=np.float64)
    srt = np.sort(y)[::-1]
    css = np.cumsum(srt)
    idx = np.arange(1, y.size + 1)
    keep = srt - (css - 1.0) / idx > 0
    rho = int(idx[keep][-1])
    theta = (css[keep][-1] - 1.0) / rho
    return np.maximum(y - theta, 0.0)


def quantal_response(u: np.ndarray, reg: Regularizer) -> Simplex:
    """argmax over the simplex of <pi, u> - epsilon * h(pi).

    Entropy gives the softmax of u / epsilon; the squared-euclidean
    regularizer gives the euclidean projection of u / epsilon.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise GameError("score vector must be non-empty and one-dimensional")
    if not np.all(np.isfinite(u)):
        raise GameError("score vector must be finite")
    # subtracting the max before the epsilon scaling keeps the map exactly
    # shift invariant whenever the shifted scores are exactly representable
    w = (u - u.max()) / reg.epsilon
    if isinstance(reg, Entropy):
        z = np.exp(w)
        return Simplex._wrap(z / z.sum())
    if isinstance(reg, SquaredEuclidean):
        return Simplex._wrap(_project_simplex(w))
    raise GameError(f"unknown regularizer {reg!r}")


def euclidean_project(x: np.ndarray, action_set: Box | SimplexSet) -> np.ndarray:
    """Nearest point of the action set in the euclidean norm."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(action_set, Box):
        if x.shape != action_set.lower.shape:
            raise GameError(f"point has shape {x.shape}, expected {action_set.lower.shape}")
        return np.clip(x, action_set.lower, action_set.upper)
    if isinstance(action_set, SimplexSet):
        if x.shape != (action_set.dim,):
            raise GameError(f"point has shape {x.shape}, expected ({action_set.dim},)")
        return _project_simplex(x)
    raise GameError(f"unknown action set {action_set!r}")


def mirror_map(y: np.ndarray, action_set: Box | SimplexSet, reg: Regularizer) -> np.ndarray:
    """argmax over the action set of <y, a> - epsilon * h(a).

    Supported pairs: simplex with either regularizer; box with the
    squared-euclidean regularizer (componentwise clamp of y / epsilon).
    """
    y = np.asarray(y, dtype=np.float64)
    if isinstance(action_set, SimplexSet):
        return quantal_response(y, reg).probs.copy()
    if isinstance(action_set, Box):
        if isinstance(reg, SquaredEuclidean):
            return euclidean_project(y / reg.epsilon, action_set)
        raise GameError("entropy regularizer requires a simplex action set")
    raise GameError(f"unknown action set {action_set!r}")
