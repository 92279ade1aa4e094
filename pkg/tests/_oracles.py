"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written the slow, obvious way (full joint
enumeration, finite differences, dense sampling) so library fast paths are
checked against a second route, not against themselves.
"""

import itertools

import numpy as np


def brute_expected_utility(payoff_tensor, probs, i):
    """Expected payoff of player i by full enumeration of joint pure actions.

    payoff_tensor: player i's payoff array; probs: list of 1-d strategy arrays.
    """
    total = 0.0
    for joint in itertools.product(*(range(len(p)) for p in probs)):
        w = 1.0
        for j, a in enumerate(joint):
            w *= probs[j][a]
        total += w * payoff_tensor[joint]
    return total


def brute_utility_vector(payoff_tensor, probs, i):
    """Player i's per-action payoff vector by enumeration over opponents."""
    m = len(probs[i])
    out = np.zeros(m)
    for a in range(m):
        pures = list(probs)
        e = np.zeros(m)
        e[a] = 1.0
        pures[i] = e
        out[a] = brute_expected_utility(payoff_tensor, pures, i)
    return out


def central_difference_gradient(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[k] += step
        lo[k] -= step
        g[k] = (f(hi) - f(lo)) / (2.0 * step)
    return g


def markov_values_dense(stage_payoffs, transition, policy_probs, discount):
    """Policy evaluation by an explicitly assembled linear system.

    stage_payoffs: list per player of (S, m_1, ..., m_N) arrays;
    policy_probs: list per state of lists of 1-d strategy arrays.
    Values discount the stage-1 payoff by discount**1.
    """
    S = stage_payoffs[0].shape[0]
    n = len(stage_payoffs)
    counts = stage_payoffs[0].shape[1:]
    u_bar = np.zeros((S, n))
    P = np.zeros((S, S))
    for s in range(S):
        for joint in itertools.product(*(range(m) for m in counts)):
            w = 1.0
            for j, a in enumerate(joint):
                w *= policy_probs[s][j][a]
            for i in range(n):
                u_bar[s, i] += w * stage_payoffs[i][(s,) + joint]
            P[s] += w * transition[(s,) + joint]
    A = np.eye(S) - discount * P
    return np.linalg.solve(A, discount * u_bar)


def simplex_projection_grid(y, n=2000):
    """Nearest simplex point to y by dense grid search (2-d and 3-d only)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 2:
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = np.stack([ts, 1.0 - ts], axis=1)
    elif y.size == 3:
        ts = np.linspace(0.0, 1.0, n + 1)
        a, b = np.meshgrid(ts, ts)
        mask = a + b <= 1.0 + 1e-12
        pts = np.stack([a[mask], b[mask], 1.0 - a[mask] - b[mask]], axis=1)
    else:
        raise ValueError("grid oracle supports 2-d and 3-d only")
    d = np.sum((pts - y) ** 2, axis=1)
    return pts[np.argmin(d)]


def best_gap_sum(payoff_tensors, probs):
    """Sum over players of (best own-action payoff - expected payoff)."""
    total = 0.0
    for i, t in enumerate(payoff_tensors):
        vec = brute_utility_vector(t, probs, i)
        total += float(np.max(vec)) - float(np.dot(probs[i], vec))
    return total
