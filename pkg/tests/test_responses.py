import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nashflow.games import Box, GameError, SimplexSet
from nashflow.responses import (
    Entropy,
    SquaredEuclidean,
    TieRule,
    best_response,
    best_response_set,
    euclidean_project,
    mirror_map,
    quantal_response,
)

from _oracles import simplex_projection_grid

finite_vectors = hnp.arrays(
    np.float64,
    st.integers(2, 6),
    elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
)


def test_best_response_set_ties_within_tolerance():
    ties = best_response_set(np.array([1.0, 1.0, 0.0]))
    np.testing.assert_array_equal(ties, [0, 1])
    ties = best_response_set(np.array([1.0, 1.0 - 5e-13, 0.0]))
    np.testing.assert_array_equal(ties, [0, 1])
    ties = best_response_set(np.array([1.0, 1.0 - 1e-9, 0.0]))
    np.testing.assert_array_equal(ties, [0])


def test_best_response_tie_rules():
    u = np.array([1.0, 1.0, 0.0])
    low = best_response(u, TieRule.LOWEST_INDEX)
    np.testing.assert_array_equal(low.probs, [1.0, 0.0, 0.0])
    unif = best_response(u, TieRule.UNIFORM_OVER_ARGMAX)
    np.testing.assert_allclose(unif.probs, [0.5, 0.5, 0.0], atol=0)


def test_best_response_maximizes_linear_objective():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = rng.normal(size=rng.integers(2, 7))
        br = best_response(u)
        assert float(np.dot(br.probs, u)) == pytest.approx(float(u.max()), abs=1e-12)


def test_quantal_response_entropy_frozen_value():
    qr = quantal_response(np.array([1.0, 0.0]), Entropy(1.0))
    # logistic value 1 / (1 + e^-1)
    np.testing.assert_allclose(qr.probs, [0.7310585786300049, 0.2689414213699951], atol=1e-15)


def test_quantal_response_shift_invariance_exact():
    # dyadic entries and a dyadic shift keep every intermediate sum exact,
    # so the outputs must agree bit for bit
    u = np.array([0.25, -1.5, 4.0, 0.0])
    for reg in (Entropy(0.7), SquaredEuclidean(1.3)):
        a = quantal_response(u, reg).probs
        b = quantal_response(u + 128.0, reg).probs
        np.testing.assert_array_equal(a, b)


def test_quantal_response_shift_invariance_generic():
    rng = np.random.default_rng(8)
    for _ in range(20):
        u = rng.normal(size=4)
        c = rng.normal() * 100
        for reg in (Entropy(0.7), SquaredEuclidean(1.3)):
            a = quantal_response(u, reg).probs
            b = quantal_response(u + c, reg).probs
            np.testing.assert_allclose(a, b, atol=1e-12)


def test_quantal_response_epsilon_limits():
    u = np.array([1.0, 0.0, -2.0])
    hot = quantal_response(u, Entropy(1e9)).probs
    np.testing.assert_allclose(hot, np.full(3, 1 / 3), atol=1e-8)
    cold = quantal_response(u, Entropy(1e-3)).probs
    np.testing.assert_allclose(cold, [1.0, 0.0, 0.0], atol=1e-12)


def test_quantal_response_squared_euclidean_is_projection():
    qr = quantal_response(np.array([2.0, -1.0]), SquaredEuclidean(1.0))
    np.testing.assert_allclose(qr.probs, [1.0, 0.0], atol=1e-12)
    # epsilon rescales the projected point
    qr2 = quantal_response(np.array([2.0, -1.0]), SquaredEuclidean(10.0))
    want = simplex_projection_grid(np.array([0.2, -0.1]), n=200000)
    np.testing.assert_allclose(qr2.probs, want, atol=1e-5)


def test_quantal_response_rejects_bad_input():
    with pytest.raises(GameError):
        quantal_response(np.array([np.inf, 0.0]), Entropy(1.0))
    with pytest.raises(GameError):
        Entropy(0.0)


@settings(max_examples=80, deadline=None)
@given(finite_vectors)
def test_simplex_projection_properties(y):
    p = euclidean_project(y, SimplexSet(y.size))
    assert p.min() >= 0.0
    assert float(p.sum()) == pytest.approx(1.0, abs=1e-9)
    # idempotence
    np.testing.assert_allclose(euclidean_project(p, SimplexSet(y.size)), p, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(finite_vectors, st.integers(0, 2**32 - 1))
def test_simplex_projection_non_expansive(y, seed):
    z = y + np.random.default_rng(seed).normal(size=y.size)
    s = SimplexSet(y.size)
    py, pz = euclidean_project(y, s), euclidean_project(z, s)
    assert np.linalg.norm(py - pz) <= np.linalg.norm(y - z) + 1e-12


def test_simplex_projection_matches_grid_oracle():
    rng = np.random.default_rng(42)
    for _ in range(5):
        y = rng.normal(scale=2.0, size=2)
        got = euclidean_project(y, SimplexSet(2))
        want = simplex_projection_grid(y, n=200000)
        np.testing.assert_allclose(got, want, atol=1e-5)
    y3 = np.array([0.9, 0.4, -0.3])
    np.testing.assert_allclose(
        euclidean_project(y3, SimplexSet(3)), simplex_projection_grid(y3, n=2000), atol=1e-3
    )


def test_box_projection_is_clamp():
    box = Box([-1.0, 0.0], [1.0, 2.0])
    np.testing.assert_array_equal(
        euclidean_project(np.array([-3.0, 5.0]), box), [-1.0, 2.0]
    )
    inside = np.array([0.5, 1.0])
    np.testing.assert_array_equal(euclidean_project(inside, box), inside)


def test_mirror_map_pairs():
    s = SimplexSet(2)
    np.testing.assert_allclose(
        mirror_map(np.array([1.0, 0.0]), s, Entropy(1.0)),
        [0.7310585786300049, 0.2689414213699951],
        atol=1e-15,
    )
    box = Box([0.0], [1.0])
    # squared-euclidean on a box with epsilon 1 is the plain clamp
    assert mirror_map(np.array([3.0]), box, SquaredEuclidean(1.0))[0] == 1.0
    assert mirror_map(np.array([0.25]), box, SquaredEuclidean(1.0))[0] == 0.25
    with pytest.raises(GameError):
        mirror_map(np.array([0.5]), box, Entropy(1.0))
