"""Distributed-learning network formation: two-layer learning.

Each node fits a parameter vector θ_i to its local quadratic loss while
choosing how strongly to stay linked to every other node.  The utility is

    u_i = −½‖X_i θ_i − y_i‖² − Σ_j e_i[j]·‖θ_i − θ_j‖² − β‖e_i‖²,

with link weights e_i ∈ [0,1]^{N−1}.  Learning alternates an inner loop —
parallel mirror ascent on every θ_i against the current link graph, run to
near-stationarity — with an outer projected-gradient step on each node's own
link weights.  Links whose weight falls below a pruning threshold drop out of
the communication graph entirely: they carry no coupling and expose no
neighbor parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..games import Box, ContinuousGame, DivergenceError, GameError
from ..learners import Constant, LearnerConfig, StepInput, initial_continuous_state, md_step
from ..responses import SquaredEuclidean

PRUNE_TOL = 1e-3
INNER_GRAD_TOL = 1e-6
DIVERGENCE_LIMIT = 1e8
DEFAULT_BETA = 0.1
DEFAULT_OUTER_RATE = 0.1


@dataclass(frozen=True)
class DmlInstance:
    """Per-node regression data plus the link-maintenance cost weight."""

    features: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    beta: float = DEFAULT_BETA

    def __post_init__(self) -> None:
        if len(self.features) != len(self.targets) or len(self.features) < 1:
            raise GameError("features and targets must pair up, one per node")
        dims = set()
        feats = []
        targs = []
        for X, y in zip(self.features, self.targets):
            X = np.ascontiguousarray(X, dtype=np.float64)
            y = np.ascontiguousarray(y, dtype=np.float64)
            if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
                raise GameError("each node needs a (samples, dim) matrix and matching targets")
            dims.add(X.shape[1])
            feats.append(X)
            targs.append(y)
        if len(dims) != 1:
            raise GameError("all nodes must share one parameter dimension")
        if self.beta < 0.0:
            raise GameError("link-maintenance weight must be nonnegative")
        object.__setattr__(self, "features", tuple(feats))
        object.__setattr__(self, "targets", tuple(targs))

    @property
    def n_nodes(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features[0].shape[1]


def make_dml_instance(
    n_nodes: int,
    dim: int,
    n_samples: int,
    seed: int = 0,
    noise: float = 0.1,
    spread: float = 0.5,
    beta: float = DEFAULT_BETA,
) -> DmlInstance:
    """Random regression tasks around a shared ground truth.

    Each node's true parameter is the shared vector plus a node-specific
    perturbation of size ``spread``; targets carry Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=dim)
    feats, targs = [], []
    for _ in range(n_nodes):
        X = rng.normal(size=(n_samples, dim))
        local = truth + spread * rng.normal(size=dim)
        y = X @ local + noise * rng.normal(size=n_samples)
        feats.append(X)
        targs.append(y)
    return DmlInstance(features=tuple(feats), targets=tuple(targs), beta=beta)


def _other_nodes(i: int, n: int) -> list[int]:
    return [j for j in range(n) if j != i]


def _effective_links(links: np.ndarray) -> np.ndarray:
    """Zero out pruned links: weights under the threshold leave the graph."""
    return np.where(links >= PRUNE_TOL, links, 0.0)


def node_utility(inst: DmlInstance, i: int, thetas: np.ndarray, links_i: np.ndarray) -> float:
    """u_i at a joint parameter profile under node i's own link weights."""
    res = inst.features[i] @ thetas[i] - inst.targets[i]
    value = -0.5 * float(res @ res)
    eff = _effective_links(links_i)
    for idx, j in enumerate(_other_nodes(i, inst.n_nodes)):
        if eff[idx] > 0.0:
            diff = thetas[i] - thetas[j]
            value -= eff[idx] * float(diff @ diff)
    value -= inst.beta * float(links_i @ links_i)
    return value


def total_utility(inst: DmlInstance, thetas: np.ndarray, links: np.ndarray) -> float:
    return sum(node_utility(inst, i, thetas, links[i]) for i in range(inst.n_nodes))


def _theta_gradient(inst: DmlInstance, i: int, thetas: np.ndarray, links_i: np.ndarray) -> np.ndarray:
    """∂u_i/∂θ_i: regression pull plus consensus pull from live neighbors."""
    grad = inst.features[i].T @ (inst.targets[i] - inst.features[i] @ thetas[i])
    eff = _effective_links(links_i)
    for idx, j in enumerate(_other_nodes(i, inst.n_nodes)):
        if eff[idx] > 0.0:
            grad -= 2.0 * eff[idx] * (thetas[i] - thetas[j])
    return grad


def _link_gradient(inst: DmlInstance, i: int, thetas: np.ndarray, links_i: np.ndarray) -> np.ndarray:
    """∂u_i/∂e_i: consensus mismatch per neighbor plus maintenance cost."""
    out = np.empty(inst.n_nodes - 1)
    for idx, j in enumerate(_other_nodes(i, inst.n_nodes)):
        diff = thetas[i] - thetas[j]
        out[idx] = -float(diff @ diff) - 2.0 * inst.beta * links_i[idx]
    return out


def _parameter_game(inst: DmlInstance, links: np.ndarray, bound: float) -> ContinuousGame:
    """The inner game over θ with the link weights held fixed."""
    n = inst.n_nodes

    def utilities(actions) -> np.ndarray:
        thetas = np.stack([np.asarray(a, dtype=np.float64) for a in actions])
        return np.array([node_utility(inst, i, thetas, links[i]) for i in range(n)])

    def gradient(actions) -> list[np.ndarray]:
        thetas = np.stack([np.asarray(a, dtype=np.float64) for a in actions])
        return [_theta_gradient(inst, i, thetas, links[i]) for i in range(n)]

    box = Box(np.full(inst.dim, -bound), np.full(inst.dim, bound))
    return ContinuousGame(
        action_sets=tuple(box for _ in range(n)), utilities=utilities, gradient=gradient
    )


@dataclass
class DmlTrajectory:
    """Per-outer-iteration record of the two-layer run."""

    thetas: list[np.ndarray] = field(default_factory=list)
    links: list[np.ndarray] = field(default_factory=list)
    total_utilities: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    utility_monotone: bool = True

    def live_edges(self) -> list[tuple[int, int]]:
        """Directed surviving links (i keeps a link to j) at the final state."""
        if not self.links:
            return []
        final = self.links[-1]
        n = final.shape[0]
        out = []
        for i in range(n):
            for idx, j in enumerate(_other_nodes(i, n)):
                if final[i, idx] >= PRUNE_TOL:
                    out.append((i, j))
        return out


def run_dml(
    inst: DmlInstance,
    inner_iters: int = 500,
    outer_iters: int = 20,
    seed: int = 0,
    initial_links: np.ndarray | None = None,
    outer_rate: float = DEFAULT_OUTER_RATE,
    inner_rate: float | None = None,
) -> tuple[np.ndarray, np.ndarray, DmlTrajectory]:
    """Alternate inner mirror ascent on θ with outer gradient play on links.

    Returns the final parameter profile (n_nodes, dim), the final link
    weights (n_nodes, n_nodes−1), and the per-outer-iteration trajectory.
    """
    if inner_iters < 1 or outer_iters < 1:
        raise GameError("iteration counts must be positive")
    if inner_rate is not None and not inner_rate > 0.0:
        raise GameError("inner_rate must be positive")
    n = inst.n_nodes
    if initial_links is None:
        links = np.ones((n, n - 1)) if n > 1 else np.zeros((n, 0))
    else:
        links = np.ascontiguousarray(initial_links, dtype=np.float64)
        if links.shape != (n, n - 1):
            raise GameError(f"link weights must have shape ({n}, {n - 1})")
        if links.min() < 0.0 or links.max() > 1.0:
            raise GameError("link weights must lie in [0,1]")

    # box bound generous enough that it never binds at the local optima
    bound = 10.0
    for X, y in zip(inst.features, inst.targets):
        sol, *_ = np.linalg.lstsq(X, y, rcond=None)
        bound = max(bound, 5.0 * float(np.abs(sol).max()))

    thetas = np.zeros((n, inst.dim))
    traj = DmlTrajectory()
    for _ in range(outer_iters):
        game = _parameter_game(inst, links, bound)
        if inner_rate is not None:
            rates = [inner_rate] * n
        else:
            # a safe ascent rate: below the inverse gradient Lipschitz constant
            rates = []
            for i in range(n):
                lip = float(np.linalg.eigvalsh(inst.features[i].T @ inst.features[i])[-1])
                lip += 4.0 * float(_effective_links(links[i]).sum())
                rates.append(min(1.0, 1.0 / max(lip, 1e-12)))
        cfgs = [
            LearnerConfig(kind="md", regularizer=SquaredEuclidean(1.0), mu=Constant(r))
            for r in rates
        ]
        states = [
            initial_continuous_state(game, i, cfgs[i], initial=thetas[i]) for i in range(n)
        ]
        inner_used = inner_iters
        initial_worst = INNER_GRAD_TOL
        for it in range(inner_iters):
            grads = game.gradient([s.action for s in states])
            worst = max(float(np.linalg.norm(g)) for g in grads)
            if not np.isfinite(worst) or worst > DIVERGENCE_LIMIT:
                raise DivergenceError("inner parameter loop diverged; reduce the step size")
            if it == 0:
                initial_worst = max(worst, INNER_GRAD_TOL)
            if worst <= INNER_GRAD_TOL:
                inner_used = it
                break
            states = [
                md_step(s, StepInput(round=s.round, gradient=g), c, game.action_sets[i])
                for i, (s, g, c) in enumerate(zip(states, grads, cfgs))
            ]
        else:
            # cap reached without meeting tolerance: gradients that grew along
            # the way mean the constant-rate loop is unstable, not merely slow
            if worst > 10.0 * initial_worst:
                raise DivergenceError("inner parameter loop diverged; reduce the step size")
        thetas = np.stack([s.action for s in states])

        new_links = links.copy()
        for i in range(n):
            step = _link_gradient(inst, i, thetas, links[i])
            new_links[i] = np.clip(links[i] + outer_rate * step, 0.0, 1.0)
        links = new_links

        traj.thetas.append(thetas.copy())
        traj.links.append(links.copy())
        traj.total_utilities.append(total_utility(inst, thetas, links))
        traj.inner_iterations.append(inner_used)
    diffs = np.diff(traj.total_utilities)
    traj.utility_monotone = bool(np.all(diffs >= -1e-9)) if len(diffs) else True
    return thetas, links, traj
