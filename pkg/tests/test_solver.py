from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from flightba.association import ObservationTable, initialize_trajectory
from flightba.dynamics import trajectory_to_latent
from flightba.evaluation import trajectory_metrics
from flightba.losses import RobustLoss
from flightba.priors import Dynamics, GaussianSmooth, KalmanCA, NoPrior, SplineSmooth, compute_targets
from flightba.scene import Camera, Intrinsics, project
from flightba.simulator import NoiseConfig, PerturbConfig, SimConfig, simulate
from oracles import jacobian_errors, small_state
from flightba.solver import (
    Problem,
    ProblemState,
    SolverConfig,
    lm_step,
    optimize,
    solve_damped,
    total_energy,
)




PRIORS = [Dynamics(), GaussianSmooth(), SplineSmooth(knot_spacing=3), KalmanCA()]


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(PRIORS))
def test_jacobians_match_central_differences(seed, prior):
    problem, state = small_state(seed, prior)
    for family, err in jacobian_errors(problem, state).items():
        assert err < 1e-4, (family, err)


def test_no_point_point_or_latent_latent_coupling():
    problem, state = small_state(3, Dynamics())
    fams = problem.dense_jacobians(state, state.assignment)
    J = np.vstack([j for _, j in fams.values()])
    nc = 6 * (problem.M - 1)
    H = J.T @ J
    p = problem.block_dim
    for a in range(problem.T):
        for b in range(problem.T):
            if a != b:
                blk = H[nc + a * p : nc + (a + 1) * p, nc + b * p : nc + (b + 1) * p]
                assert not np.any(blk), (a, b)


def test_normal_equations_match_dense_gauss_newton():
    # squared anchors so that the dense product equals the solver's system
    cfg_prior = Dynamics()
    problem, state = small_state(5, cfg_prior)
    problem.cfg = replace(problem.cfg, angle_delta=1e9, thrust_delta=1e9, position_delta=None,
                          reprojection_loss=RobustLoss.squared())
    U, W, V, gc, gp = problem.normal_equations(state, state.assignment)
    fams = problem.dense_jacobians(state, state.assignment)
    lam = problem.lam
    pr = problem.prior
    wts = {"reprojection": 1.0, "consistency": lam}
    rows_a = fams["anchors"][0].size
    wa = lam * np.tile([pr.lam1, pr.lam2, pr.lam3], rows_a // 3)
    H = sum(wts[k] * fams[k][1].T @ fams[k][1] for k in wts)
    H = H + fams["anchors"][1].T @ (wa[:, None] * fams["anchors"][1])
    g = sum(wts[k] * fams[k][1].T @ fams[k][0] for k in wts) + fams["anchors"][1].T @ (wa * fams["anchors"][0])
    nc = 6 * (problem.M - 1)
    p = problem.block_dim
    for t in range(problem.T):
        np.testing.assert_allclose(V[t], H[nc + t * p : nc + (t + 1) * p, nc + t * p : nc + (t + 1) * p], rtol=1e-9, atol=1e-6)
        np.testing.assert_allclose(gp[t], g[nc + t * p : nc + (t + 1) * p], rtol=1e-9, atol=1e-6)
    for j in range(problem.M - 1):
        np.testing.assert_allclose(U[j], H[6 * j : 6 * j + 6, 6 * j : 6 * j + 6], rtol=1e-9, atol=1e-6)
        np.testing.assert_allclose(gc[j], g[6 * j : 6 * j + 6], rtol=1e-9, atol=1e-6)


def test_schur_solution_matches_dense_solve():
    problem, state = small_state(6, Dynamics())
    U, W, V, gc, gp = problem.normal_equations(state, state.assignment)
    Mc, T, p = U.shape[0], V.shape[0], V.shape[1]
    n = 6 * Mc + T * p
    H = np.zeros((n, n))
    for j in range(Mc):
        H[6 * j : 6 * j + 6, 6 * j : 6 * j + 6] = U[j]
        for t in range(T):
            H[6 * j : 6 * j + 6, 6 * Mc + t * p : 6 * Mc + (t + 1) * p] = W[j, t]
            H[6 * Mc + t * p : 6 * Mc + (t + 1) * p, 6 * j : 6 * j + 6] = W[j, t].T
    for t in range(T):
        H[6 * Mc + t * p : 6 * Mc + (t + 1) * p, 6 * Mc + t * p : 6 * Mc + (t + 1) * p] = V[t]
    d = 1e-3
    Hd = H + d * np.diag(np.maximum(np.diag(H), 1e-6))
    ref = np.linalg.solve(Hd, -np.concatenate([gc.ravel(), gp.ravel()]))
    dc, dp = solve_damped(U, W, V, gc, gp, d)
    np.testing.assert_allclose(np.concatenate([dc.ravel(), dp.ravel()]), ref, rtol=1e-6, atol=1e-9)


# -- energy -----------------------------------------------------------------------------------


def noiseless():
    return simulate(SimConfig(T=60, n_cameras=5, noise=NoiseConfig(outlier_max=0)))


def test_exact_model_fit_has_zero_energy():
    sc = noiseless()
    cfg = SolverConfig(prior=Dynamics(sigma_latent=0.0), params=sc.config.quad)
    X = sc.truth.X.positions
    targets = compute_targets(cfg.prior, X, cfg.params, cfg.lam)
    state = ProblemState(sc.truth.cameras, X, trajectory_to_latent(X, cfg.params)[0].as_array())
    e = total_energy(state, sc.obs, targets, cfg)
    assert e.total < 1e-18 and e.consistency < 1e-18


def test_zero_weight_is_data_term():
    sc = noiseless()
    X = sc.truth.X.positions + 0.01
    cfg = SolverConfig(lam=0.0, params=sc.config.quad)
    e = total_energy(ProblemState(sc.truth.cameras, X), sc.obs, None, cfg)
    assert e.total == e.data > 0


def test_single_pixel_residual_costs_one():
    cam = Camera.from_rotation(0, Intrinsics(1000.0, 1000.0, 500.0, 500.0), np.eye(3), np.zeros(3))
    X = np.array([[0.0, 0.0, 5.0]])
    obs = ObservationTable(1, 1, {(0, 0): [project(cam, X[0]) + [1.0, 0.0]]})
    cfg = SolverConfig(prior=NoPrior(), reprojection_loss=RobustLoss.squared())
    assert total_energy(ProblemState([cam], X), obs, None, cfg).data == pytest.approx(1.0, rel=1e-12)


def test_breakdown_total_identity():
    problem, state = small_state(2, Dynamics())
    e, _ = problem.energy(state)
    pr = problem.prior
    assert e.total == pytest.approx(
        e.data + problem.lam * (e.consistency + pr.lam1 * e.anchor_phi + pr.lam2 * e.anchor_theta + pr.lam3 * e.anchor_u)
    )
    assert min(e.data, e.consistency, e.anchor_phi, e.anchor_theta, e.anchor_u) >= 0


# -- LM ------------------------------------------------------------------------------------------


def test_zero_residual_state_is_stationary():
    sc = noiseless()
    cfg = SolverConfig(prior=NoPrior(), params=sc.config.quad)
    problem = Problem(sc.obs, None, cfg)
    state = ProblemState(sc.truth.cameras, sc.truth.X.positions.copy())
    dc, dp, _ = problem.solve(state, problem.energy(state)[1], 1e-4)
    assert max(np.abs(dc).max(), np.abs(dp).max()) < 1e-10
    new, e, accepted, _ = lm_step(problem, state, 1e-4)
    assert accepted and e.total < 1e-18


def test_point_only_toy_converges_to_least_squares_point():
    rng = np.random.default_rng(0)
    K = Intrinsics(1000.0, 1000.0, 500.0, 500.0)
    cams = [Camera.look_at(j, K, c, [0, 0, 0]) for j, c in enumerate([[5, 0, 1], [0, 5, 0], [-4, -3, 2]])]
    X = np.array([0.1, -0.2, 0.3])
    pix = [project(c, X) + rng.normal(0, 3, 2) for c in cams]
    obs = ObservationTable(3, 1, {(j, 0): [p] for j, p in enumerate(pix)})
    ref = least_squares(lambda x: np.concatenate([project(c, x) - p for c, p in zip(cams, pix)]),
                        X + 0.05, xtol=1e-15, ftol=1e-15, gtol=1e-15).x
    cfg = SolverConfig(prior=NoPrior(), reprojection_loss=RobustLoss.squared())
    problem = Problem(obs, None, cfg)
    state = ProblemState(cams, (X + 0.05)[None])
    for _ in range(5):
        U, W, V, gc, gp = problem.normal_equations(state, problem.energy(state)[1])
        _, dp = solve_damped(U[:0], W[:0], V, gc[:0], gp, 1e-12)
        state = ProblemState(cams, state.X + dp)
    np.testing.assert_allclose(state.X[0], ref, atol=1e-9)


def test_rejected_step_keeps_state_and_raises_damping():
    problem, state = small_state(1, Dynamics())

    def bad_solve(st, assignment, damping):
        return np.zeros((problem.M - 1, 6)), np.full((problem.T, problem.block_dim), 5.0), None

    problem.solve = bad_solve
    e0, _ = problem.energy(state)
    new, e, accepted, damping = lm_step(problem, state, 1e-3, energy=e0)
    assert not accepted and new is state and damping == pytest.approx(1e-2)
    assert e.total == e0.total


# -- optimize --------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def moderate():
    sim = SimConfig(T=120, n_cameras=6, noise=NoiseConfig(sigma_px=1.0, outlier_max=3),
                    perturb=PerturbConfig(0.1, 1.0), seed=4)
    sc = simulate(sim)
    X0, a0 = initialize_trajectory(sc.obs, sc.cameras_init, dt=sim.quad.dt)
    return sc, X0, a0


@pytest.mark.parametrize("prior", [NoPrior(), GaussianSmooth(), Dynamics()])
def test_trace_monotone_and_gauge_fixed(moderate, prior):
    sc, X0, _ = moderate
    res = optimize(sc.obs, sc.cameras_init, X0, SolverConfig(prior=prior, outer_iterations=8))
    for tr in res.trace:
        if tr.accepted:
            assert tr.after.total <= tr.before.total
    c0 = sc.cameras_init[0]
    assert np.array_equal(res.cameras[0].quat, c0.quat)
    assert np.array_equal(res.cameras[0].translation, c0.translation)
    assert res.cameras[0] is c0


def test_exact_inputs_are_a_no_op():
    sc = noiseless()
    cfg = SolverConfig(prior=Dynamics(sigma_latent=0.0), params=sc.config.quad)
    res = optimize(sc.obs, sc.truth.cameras, sc.truth.X, cfg)
    assert res.trace[0].before.total <= 1e-18
    np.testing.assert_array_equal(res.X.positions, sc.truth.X.positions)
    for a, b in zip(res.cameras, sc.truth.cameras):
        assert a == b


def test_noiseless_detections_beat_triangulation():
    sim = SimConfig(T=120, n_cameras=6, noise=NoiseConfig(outlier_max=0), perturb=PerturbConfig(0.1, 1.0), seed=2)
    sc = simulate(sim)
    X0, _ = initialize_trajectory(sc.obs, sc.cameras_init, dt=sim.quad.dt)
    res = optimize(sc.obs, sc.cameras_init, X0, SolverConfig())
    assert trajectory_metrics(res.X, sc.truth.X).rmse < trajectory_metrics(X0, sc.truth.X).rmse


def test_zero_weight_matches_plain_ba_bitwise(moderate):
    sc, X0, _ = moderate
    a = optimize(sc.obs, sc.cameras_init, X0, SolverConfig(prior=NoPrior(), outer_iterations=5))
    b = optimize(sc.obs, sc.cameras_init, X0, SolverConfig(lam=0.0, prior=Dynamics(), outer_iterations=5))
    np.testing.assert_array_equal(a.X.positions, b.X.positions)
    for ca, cb in zip(a.cameras, b.cameras):
        assert ca == cb
    assert b.latent_optimized is None


def test_outputs_are_consistent(moderate):
    sc, X0, _ = moderate
    res = optimize(sc.obs, sc.cameras_init, X0, SolverConfig(outer_iterations=3))
    lat = trajectory_to_latent(res.X, sc.config.quad)[0]
    np.testing.assert_array_equal(res.latent.as_array(), lat.as_array())
    assert res.latent_optimized is not None and len(res.latent_optimized) == sc.config.T
    assert res.assignment.shape == (sc.config.T, sc.config.n_cameras)
    assert len(res.controls.u_phi) == sc.config.T


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(outer_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(lam=-1)
    with pytest.raises(ValueError):
        SolverConfig(position_delta=0.0)
