"""Tests for the continuous-time dynamics: vector fields, the fixed-step
integrator, stationarity detection, and the pseudo-trajectory checker that
links discrete learning runs to their mean-field flows."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from nashflow.flows import (
    FlowError,
    apt_distance,
    apt_flagged,
    br_flow,
    br_rhs,
    da_flow,
    da_flow_rhs,
    detect_stationary,
    integrate,
    replicator_flow,
    replicator_rhs,
    sbr_flow,
    sbr_rhs,
    sbr_single_flow,
    sbr_single_rhs,
    stationary_residual,
)
from nashflow.games import FiniteGame, utility_vector
from nashflow.learners import (
    Constant,
    InversePow,
    LearnerConfig,
    Simplex,
    Trajectory,
    run_repeated_game,
)
from nashflow.responses import Entropy, SquaredEuclidean

MP = FiniteGame((np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([[-1.0, 1.0], [1.0, -1.0]])))
PD = FiniteGame((np.array([[3.0, 0.0], [4.0, 1.0]]), np.array([[3.0, 4.0], [0.0, 1.0]])))


def random_game(rng, sizes):
    return FiniteGame(tuple(rng.normal(size=tuple(sizes)) for _ in sizes))


# ---------------------------------------------------------------------------
# Replicator field.


def test_replicator_uniform_matching_pennies_is_stationary():
    out = replicator_rhs(MP, [np.array([0.5, 0.5]), np.array([0.5, 0.5])])
    for comp in out:
        assert_array_equal(comp, np.zeros(2))


def test_replicator_vertices_are_stationary():
    for a in range(2):
        for b in range(2):
            out = replicator_rhs(MP, [np.eye(2)[a], np.eye(2)[b]])
            for comp in out:
                assert_array_equal(comp, np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_replicator_tangent_and_faces_invariant(data):
    n = data.draw(st.integers(2, 3))
    sizes = [data.draw(st.integers(2, 4)) for _ in range(n)]
    seed = data.draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    game = random_game(rng, sizes)
    profile = []
    for m in sizes:
        w = rng.dirichlet(np.ones(m))
        if data.draw(st.booleans()) and m > 1:
            w[data.draw(st.integers(0, m - 1))] = 0.0  # place on a face
            w = w / w.sum()
        profile.append(w)
    out = replicator_rhs(game, profile)
    for p, comp in zip(profile, out):
        assert abs(comp.sum()) <= 1e-12  # tangent to the simplex
        for a in range(len(p)):
            if p[a] == 0.0:
                assert comp[a] == 0.0  # faces exactly invariant


def test_replicator_matches_score_flow_path_derivative():
    # finite-difference derivative of the entropy score flow's strategy
    # path at unit temperature equals the replicator field
    rng = np.random.default_rng(42)
    game = random_game(rng, [2, 2])
    p0 = [np.array([0.63, 0.37]), np.array([0.28, 0.72])]
    system = da_flow(game, regularizer=Entropy(1.0))
    y0 = system.state_from_strategies(p0)
    h = 1e-4
    pi_0 = np.concatenate(system.strategies_from_state(y0))
    pi_h = np.concatenate(integrate(system, y0, h, dt=h / 4).final_strategies())
    pi_2h = np.concatenate(integrate(system, y0, 2 * h, dt=h / 4).final_strategies())
    fd = (4.0 * pi_h - 3.0 * pi_0 - pi_2h) / (2.0 * h)
    expected = np.concatenate(replicator_rhs(game, p0))
    assert_allclose(fd, expected, rtol=0.0, atol=1e-6)


# ---------------------------------------------------------------------------
# Smoothed (score, strategy) field.


def test_smoothed_flow_fixed_point_has_zero_rhs():
    # on matching pennies u(uniform) = 0, so (scores=0, uniform) is a rest point
    scores = [np.zeros(2), np.zeros(2)]
    profile = [np.array([0.5, 0.5]), np.array([0.5, 0.5])]
    d_scores, d_probs = sbr_rhs(MP, scores, profile, regularizer=Entropy(0.1))
    for comp in d_scores + d_probs:
        assert_array_equal(comp, np.zeros(2))


def test_smoothed_flow_forced_scores_match_single_timescale():
    rng = np.random.default_rng(3)
    game = random_game(rng, [3, 2])
    profile = [rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2))]
    simplex_profile = tuple(Simplex(p) for p in profile)
    scores = [utility_vector(game, simplex_profile, i) for i in range(2)]
    _, d_probs = sbr_rhs(game, scores, profile, regularizer=Entropy(0.1))
    single = sbr_single_rhs(game, profile, regularizer=Entropy(0.1))
    for a, b in zip(d_probs, single):
        assert_array_equal(a, b)


def test_single_timescale_smoothed_flow_reaches_uniform_on_matching_pennies():
    system = sbr_single_flow(MP, regularizer=Entropy(0.1))
    y0 = system.initial_state(strategies=[np.array([0.9, 0.1]), np.array([0.2, 0.8])])
    traj = integrate(system, y0, 40.0, dt=1e-2, record_every=100)
    final = np.concatenate(traj.final_strategies())
    assert np.abs(final - 0.5).max() <= 0.05


def test_coupled_smoothed_flow_stays_at_its_fixed_point():
    system = sbr_flow(MP, regularizer=Entropy(0.1))
    y0 = system.initial_state()  # scores 0, uniform strategies: exact rest point
    traj = integrate(system, y0, 2.0, dt=1e-2)
    assert_array_equal(traj.states[-1], y0)


# ---------------------------------------------------------------------------
# Best-response selection field.


def test_best_response_flow_zero_at_strict_equilibrium_vertex():
    out = br_rhs(PD, [np.array([0.0, 1.0]), np.array([0.0, 1.0])])
    for comp in out:
        assert_array_equal(comp, np.zeros(2))


def test_best_response_flow_pd_converges_with_decreasing_residual():
    system = br_flow(PD)
    y0 = system.initial_state()  # uniform
    traj = integrate(system, y0, 30.0, dt=1e-2, record_every=50)
    path = traj.strategy_path()
    residuals = [
        stationary_residual(PD, [path[0][k], path[1][k]])
        for k in range(len(traj.times))
    ]
    final = traj.final_strategies()
    assert final[0][1] >= 1.0 - 1e-6 and final[1][1] >= 1.0 - 1e-6
    diffs = np.diff(residuals)
    assert np.all(diffs <= 1e-12)  # monotonically decreasing exploitability


def test_best_response_flow_matching_pennies_time_average_near_uniform():
    system = br_flow(MP)
    y0 = system.initial_state(strategies=[np.array([0.7, 0.3]), np.array([0.4, 0.6])])
    traj = integrate(system, y0, 200.0, dt=1e-2, record_every=1)
    avg = np.concatenate(traj.strategy_path(), axis=-1).mean(axis=0)
    assert np.abs(avg - 0.5).max() <= 0.02


# ---------------------------------------------------------------------------
# Score flow.


def test_score_flow_one_player_follows_logistic_solution():
    game = FiniteGame((np.array([1.0, 0.0]),))
    system = da_flow(game, regularizer=Entropy(1.0))
    y0 = system.initial_state(scores=[np.zeros(2)])
    traj = integrate(system, y0, 5.0, dt=1e-3, record_every=100)
    probs = traj.strategy_path()[0][:, 0]
    expected = 1.0 / (1.0 + np.exp(-traj.times))  # closed-form logistic
    assert np.abs(probs - expected).max() <= 1e-12
    assert probs[-1] > 0.99


def test_score_flow_symmetric_utilities_keep_uniform():
    game = FiniteGame((np.ones((2, 2)), np.ones((2, 2))))
    system = da_flow(game, regularizer=Entropy(0.1))
    traj = integrate(system, system.initial_state(), 5.0, dt=1e-2, record_every=100)
    path = np.concatenate(traj.strategy_path(), axis=-1)
    assert_array_equal(path, np.full_like(path, 0.5))


def test_score_flow_matching_pennies_cycles_without_converging():
    system = da_flow(MP, regularizer=Entropy(1.0))
    y0 = system.state_from_strategies([np.array([0.8, 0.2]), np.array([0.35, 0.65])])
    traj = integrate(system, y0, 100.0, dt=1e-3, record_every=100)
    path = np.concatenate(traj.strategy_path(), axis=-1)
    dist = np.abs(path - 0.5).max(axis=-1)
    # the orbit keeps its distance from the interior equilibrium
    second_half = dist[len(dist) // 2 :]
    assert second_half.min() >= 0.2
    # the orbit level (sum of log-strategy coordinates) is conserved
    level = -np.log(path).sum(axis=-1)
    assert np.abs(level - level[0]).max() <= 1e-9


def test_unit_temperature_score_flow_matches_replicator_path():
    rng = np.random.default_rng(7)
    for sizes in ([2, 2], [3, 3]):
        game = random_game(rng, sizes)
        p0 = [rng.dirichlet(np.ones(m)) for m in sizes]
        sys_da = da_flow(game, regularizer=Entropy(1.0))
        sys_rep = replicator_flow(game)
        tr_da = integrate(sys_da, sys_da.state_from_strategies(p0), 20.0, dt=1e-3, record_every=100)
        tr_rep = integrate(sys_rep, sys_rep.initial_state(strategies=p0), 20.0, dt=1e-3, record_every=100)
        gap = np.abs(
            np.concatenate(tr_da.strategy_path(), axis=-1)
            - np.concatenate(tr_rep.strategy_path(), axis=-1)
        ).max()
        assert gap <= 1e-6


@pytest.mark.parametrize("reg", [Entropy(0.3), SquaredEuclidean(0.5)])
def test_strategy_velocity_matches_path_derivative(reg):
    rng = np.random.default_rng(11)
    game = random_game(rng, [3, 2])
    system = da_flow(game, regularizer=reg)
    y = system.state_from_strategies([np.array([0.5, 0.3, 0.2]), np.array([0.6, 0.4])])
    h = 1e-6
    dy = system.rhs(y)
    vel = np.concatenate(system.strategy_velocity(y))
    plus = np.concatenate(system.strategies_from_state(y + h * dy))
    minus = np.concatenate(system.strategies_from_state(y - h * dy))
    fd = (plus - minus) / (2.0 * h)
    assert_allclose(vel, fd, rtol=0.0, atol=1e-8)


def test_strict_equilibrium_vertex_is_stationary_for_every_field():
    defect = [np.array([0.0, 1.0]), np.array([0.0, 1.0])]
    for comp in da_flow(PD).strategy_velocity_from_profile(defect):
        assert_array_equal(comp, np.zeros(2))
    for comp in br_rhs(PD, defect):
        assert_array_equal(comp, np.zeros(2))
    for comp in replicator_rhs(PD, defect):
        assert_array_equal(comp, np.zeros(2))


def test_strict_equilibrium_attracts_perturbed_flow():
    system = da_flow(PD, regularizer=Entropy(0.1))
    vertex = np.array([0.0, 1.0])
    start = [(1.0 - 1e-3) * vertex + 1e-3 * np.full(2, 0.5) for _ in range(2)]
    traj = integrate(system, system.state_from_strategies(start), 50.0, dt=1e-2, record_every=500)
    final = traj.final_strategies()
    assert all(np.abs(p - vertex).max() <= 1e-6 for p in final)
    assert stationary_residual(PD, final) <= 1e-6


def test_potential_game_random_starts_all_converge():
    rng = np.random.default_rng(5)
    for _ in range(2):
        phi = rng.normal(size=(2, 2))
        a = rng.normal(size=2)
        b = rng.normal(size=2)
        game = FiniteGame((phi + b[None, :], phi + a[:, None]))
        system = da_flow(game, regularizer=Entropy(0.1))
        starts = rng.dirichlet(np.ones(2), size=3)
        starts2 = rng.dirichlet(np.ones(2), size=3)
        y0 = np.stack(
            [system.state_from_strategies([p, q]) for p, q in zip(starts, starts2)]
        )
        traj = integrate(system, y0, 120.0, dt=1e-2, record_every=12000)
        for row in traj.states[-1]:
            probs = system.strategies_from_state(row)
            assert stationary_residual(game, probs) <= 1e-6


def test_detected_stationary_points_are_equilibria():
    system = da_flow(PD, regularizer=Entropy(0.1))
    traj = integrate(system, system.initial_state(), 60.0, dt=1e-2, record_every=100)
    points = detect_stationary(system, traj, threshold=1e-8)
    assert points
    times = [t for t, _ in points]
    assert times == sorted(times)
    for _, probs in points:
        assert stationary_residual(PD, probs) <= 1e-6


# ---------------------------------------------------------------------------
# Integrator mechanics.


def test_zero_field_gives_constant_trajectory():
    system = replicator_flow(MP)
    y0 = system.initial_state()  # uniform: exact rest point
    traj = integrate(system, y0, 1.0, dt=0.1)
    for row in traj.states:
        assert_array_equal(row, y0)


def test_times_strictly_increase_and_cover_partial_final_step():
    system = replicator_flow(MP)
    traj = integrate(system, system.initial_state(), 0.05, dt=0.02)
    assert_allclose(traj.times, [0.0, 0.02, 0.04, 0.05], rtol=0.0, atol=1e-12)
    assert np.all(np.diff(traj.times) > 0.0)


def test_record_every_subsamples_but_keeps_endpoint():
    system = replicator_flow(MP)
    traj = integrate(system, system.initial_state(), 1.0, dt=0.1, record_every=3)
    assert_allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0], rtol=0.0, atol=1e-12)


def _endpoint_error(system, y0, t_end, dt, ref):
    traj = integrate(system, y0, t_end, dt=dt)
    return np.abs(traj.states[-1] - ref).max()


def test_rk4_halving_step_cuts_error_sixteenfold():
    system = replicator_flow(PD)
    y0 = system.initial_state(strategies=[np.array([0.6, 0.4]), np.array([0.3, 0.7])])
    ref = integrate(system, y0, 5.0, dt=0.0025).states[-1]
    e1 = _endpoint_error(system, y0, 5.0, 0.04, ref)
    e2 = _endpoint_error(system, y0, 5.0, 0.02, ref)
    assert e2 > 0.0
    assert 8.0 <= e1 / e2 <= 40.0


def test_euler_halving_step_cuts_error_twofold():
    system = replicator_flow(PD)
    y0 = system.initial_state(strategies=[np.array([0.6, 0.4]), np.array([0.3, 0.7])])
    ref = integrate(system, y0, 5.0, dt=0.0025).states[-1]
    e1 = _endpoint_error_euler(system, y0, 5.0, 0.01, ref)
    e2 = _endpoint_error_euler(system, y0, 5.0, 0.005, ref)
    assert 1.5 <= e1 / e2 <= 3.0


def _endpoint_error_euler(system, y0, t_end, dt, ref):
    traj = integrate(system, y0, t_end, dt=dt, method="euler")
    return np.abs(traj.states[-1] - ref).max()


def test_non_finite_state_raises_with_timestamp():
    system = replicator_flow(MP)
    y0 = system.initial_state()
    y0[0] = np.nan
    with pytest.raises(FlowError, match="t="):
        integrate(system, y0, 1.0, dt=0.1)


def test_leaving_the_simplex_raises():
    system = replicator_flow(MP)
    y0 = np.array([-0.1, 1.1, 0.5, 0.5])
    with pytest.raises(FlowError):
        integrate(system, y0, 1.0, dt=0.1)


def test_integrate_validations():
    system = replicator_flow(MP)
    y0 = system.initial_state()
    with pytest.raises(FlowError):
        integrate(system, y0, 1.0, dt=0.0)
    with pytest.raises(FlowError):
        integrate(system, y0, -1.0, dt=0.1)
    with pytest.raises(FlowError):
        integrate(system, np.zeros(3), 1.0, dt=0.1)


def test_batched_states_integrate_together():
    system = replicator_flow(MP)
    rng = np.random.default_rng(0)
    y0 = np.stack(
        [
            system.initial_state(strategies=[rng.dirichlet(np.ones(2)) for _ in range(2)])
            for _ in range(5)
        ]
    )
    traj = integrate(system, y0, 1.0, dt=0.1)
    assert traj.states.shape == (len(traj.times), 5, 4)
    single = integrate(system, y0[2], 1.0, dt=0.1)
    assert_allclose(traj.states[-1, 2], single.states[-1], rtol=0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Named wrappers agree with the flow systems.


def test_named_fields_match_system_rhs():
    rng = np.random.default_rng(9)
    game = random_game(rng, [2, 3])
    profile = [rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(3))]
    scores = [rng.normal(size=2), rng.normal(size=3)]

    system = replicator_flow(game)
    dy = system.rhs(system.initial_state(strategies=profile))
    for sl, comp in zip(system.strategy_slices, replicator_rhs(game, profile)):
        assert_array_equal(dy[sl], comp)

    system = da_flow(game, regularizer=Entropy(0.2))
    dy = system.rhs(system.initial_state(scores=scores))
    for sl, comp in zip(system.score_slices, da_flow_rhs(game, scores, regularizer=Entropy(0.2))):
        assert_array_equal(dy[sl], comp)

    system = sbr_flow(game, regularizer=Entropy(0.2))
    dy = system.rhs(system.initial_state(strategies=profile, scores=scores))
    d_scores, d_probs = sbr_rhs(game, scores, profile, regularizer=Entropy(0.2))
    for sl, comp in zip(system.score_slices, d_scores):
        assert_array_equal(dy[sl], comp)
    for sl, comp in zip(system.strategy_slices, d_probs):
        assert_array_equal(dy[sl], comp)


# ---------------------------------------------------------------------------
# Pseudo-trajectory distance between discrete runs and flows.


def _exact_da_config():
    return LearnerConfig(
        kind="da", mu=InversePow(0.6), estimator="exact", regularizer=Entropy(0.1)
    )


def test_pseudo_trajectory_self_comparison_stays_at_integrator_error():
    system = replicator_flow(MP)
    c = 0.05
    init = [np.array([0.7, 0.3]), np.array([0.4, 0.6])]
    flow = integrate(system, system.initial_state(strategies=init), 60.0, dt=c, record_every=1)
    strat = flow.strategy_path()
    rounds = strat[0].shape[0]
    synthetic = Trajectory(
        game_kind="finite",
        dims=tuple(MP.action_counts),
        rounds=rounds,
        seed=0,
        algorithms=("DA-d", "DA-d"),
        initial=[s[0].copy() for s in strat],
        strategies=[s.copy() for s in strat],
        actions=np.full((rounds, 2), -1, dtype=np.int64),
        payoffs_raw=np.zeros((rounds, 2)),
        payoffs_noisy=np.zeros((rounds, 2)),
        residuals=np.zeros(rounds),
        final=[s[-1].copy() for s in strat],
        final_residual=0.0,
        wall_time=0.0,
    )
    dists = apt_distance(synthetic, Constant(c), system, window_T=5.0, anchors=[0.0, 20.0, 50.0])
    assert all(g <= 1e-3 for _, g in dists)
    assert not apt_flagged(dists)


def test_pseudo_trajectory_distance_decreases_for_matched_pair():
    run = run_repeated_game(PD, [_exact_da_config(), _exact_da_config()], rounds=30000, seed=11)
    system = da_flow(PD, regularizer=Entropy(0.1))
    dists = apt_distance(run, InversePow(0.6), system, window_T=10.0, anchors=[10.0, 60.0, 100.0])
    assert dists[-1][1] < dists[0][1]
    assert not apt_flagged(dists)


def test_pseudo_trajectory_flags_mismatched_pairing():
    init = [np.array([0.7, 0.3]), np.array([0.4, 0.6])]
    run = run_repeated_game(
        MP, [_exact_da_config(), _exact_da_config()], rounds=30000, seed=3, initial=init
    )
    matched = apt_distance(
        run, InversePow(0.6), da_flow(MP, regularizer=Entropy(0.1)),
        window_T=10.0, anchors=[10.0, 60.0, 100.0],
    )
    assert not apt_flagged(matched)
    mismatched = apt_distance(
        run, InversePow(0.6), br_flow(MP), window_T=10.0, anchors=[10.0, 60.0, 100.0]
    )
    assert apt_flagged(mismatched)
    assert mismatched[-1][1] > 0.1  # the distance plateaus instead of vanishing


def test_pseudo_trajectory_validations():
    run = run_repeated_game(PD, [_exact_da_config(), _exact_da_config()], rounds=100, seed=1)
    system = da_flow(PD, regularizer=Entropy(0.1))
    other = da_flow(random_game(np.random.default_rng(0), [3, 3]), regularizer=Entropy(0.1))
    with pytest.raises(FlowError):
        apt_distance(run, InversePow(0.6), other, window_T=1.0)  # dimension mismatch
    with pytest.raises(FlowError):
        apt_distance(run, InversePow(0.6), system, window_T=1e9)  # window beyond mesh
    with pytest.raises(FlowError):
        apt_distance(run, InversePow(0.6), system, window_T=0.0)


def test_mismatch_flag_rule():
    assert not apt_flagged([])
    assert not apt_flagged([(0.0, 1.0)])
    assert not apt_flagged([(0.0, 1.0), (10.0, 0.2)])  # decayed
    assert apt_flagged([(0.0, 1.0), (10.0, 0.9)])  # plateau
    assert not apt_flagged([(0.0, 1e-5), (10.0, 1e-5)])  # integrator-error scale
