import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flightba.dynamics import (
    InitialState,
    LatentSequence,
    QuadParams,
    Trajectory,
    gaussian_kernel,
    latent_to_trajectory,
    smooth_latent,
    smooth_thrust,
    trajectory_to_latent,
)
from flightba.errors import FreeFall, InsufficientSamples
from flightba.evaluation import hf_energy
from flightba.priors import (
    Dynamics,
    GaussianSmooth,
    KalmanCA,
    NoPrior,
    SplineSmooth,
    compute_targets,
    dynamics_targets,
    gaussian_targets,
    kalman_predictions,
    kalman_targets,
    prior_from_name,
    spline_targets,
)

P = QuadParams()
DT = P.dt


def line(T=60):
    t = np.arange(T)[:, None]
    return np.hstack([0.1 * t, -0.05 * t, 0 * t + 2.0])


def smooth_latent_sequence(T):
    s = np.arange(T) / T
    return LatentSequence(0.1 * np.sin(2 * np.pi * s), 0.15 * np.cos(2 * np.pi * s), P.hover_thrust * (1 + 0.05 * s))


# -- Gaussian ---------------------------------------------------------------------------


def test_gaussian_constant_and_identity():
    X = np.tile([1.0, 2.0, 3.0], (20, 1))
    np.testing.assert_allclose(gaussian_targets(X, 1.1).target_positions, X, rtol=1e-15)
    Y = line()
    np.testing.assert_array_equal(gaussian_targets(Y, 0.0).target_positions, Y)


def test_gaussian_outlier_attenuated_by_center_weight():
    X = line()
    X[30, 2] += 1.0
    out = gaussian_targets(X, 2.0).target_positions
    w = gaussian_kernel(2.0)
    # a straight line is reproduced away from the ends; the spike leaves w[centre]
    assert out[30, 2] - 2.0 == pytest.approx(w[len(w) // 2], rel=1e-12)
    clean = line()
    direct = np.convolve(X[:, 2] - clean[:, 2], w, mode="same")
    np.testing.assert_allclose(out[10:50, 2] - clean[10:50, 2], direct[10:50], atol=1e-12)


# -- spline ---------------------------------------------------------------------------------


def test_spline_reproduces_cubics():
    s = np.arange(80, dtype=float)
    X = np.stack([1e-4 * s**3 - 0.01 * s**2 + s, 2.0 - 0.5 * s, 3e-5 * s**3], axis=1)
    np.testing.assert_allclose(spline_targets(X, 10).target_positions, X, atol=1e-9)


def test_spline_constant_and_identity_setting():
    X = np.tile([1.0, -2.0, 0.5], (30, 1))
    np.testing.assert_allclose(spline_targets(X, 10).target_positions, X, atol=1e-12)
    Y = np.random.default_rng(0).normal(size=(30, 3))
    np.testing.assert_array_equal(spline_targets(Y, 1).target_positions, Y)


def test_spline_needs_four_samples():
    with pytest.raises(InsufficientSamples):
        spline_targets(np.zeros((3, 3)), 10)


def test_spline_denoises_sine():
    s = np.arange(200)
    clean = np.stack([np.sin(s / 20), np.cos(s / 25), 0.01 * s], axis=1)
    for seed in range(10):
        noisy = clean + np.random.default_rng(seed).normal(0, 0.1, clean.shape)
        fit = spline_targets(noisy, 10).target_positions
        assert np.sum((fit - clean) ** 2) < np.sum((noisy - clean) ** 2)


def test_short_sequence_spline_still_fits():
    X = np.random.default_rng(1).normal(size=(6, 3))
    assert spline_targets(X, 10).target_positions.shape == (6, 3)


# -- Kalman ----------------------------------------------------------------------------------


def test_kalman_constant_acceleration_converges():
    t = np.arange(300) * DT
    X = np.stack([0.5 * 1.5 * t**2 + 2 * t, -0.5 * 0.3 * t**2, 0 * t + 1.0], axis=1)
    pred = kalman_predictions(X, q=1e-6, r=1e-10, dt=DT)
    assert np.abs(pred[-1] - X[-1]).max() < 1e-6
    assert pred[0].tolist() == X[0].tolist()


def test_kalman_stationary_fixed_point():
    X = np.tile([3.0, -1.0, 2.0], (100, 1))
    pred = kalman_targets(Trajectory(DT, X), 1.0, 0.05).target_positions
    np.testing.assert_allclose(pred, X, atol=1e-12)


def test_kalman_prediction_variance_below_measurement():
    r = 0.05
    errs, meas = [], []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        clean = line(400) * DT * 10
        noisy = clean + rng.normal(0, np.sqrt(r), clean.shape)
        pred = kalman_predictions(noisy, q=1e-3, r=r, dt=DT)
        errs.append(np.var((pred - clean)[50:]))
        meas.append(np.var((noisy - clean)[50:]))
    assert np.mean(errs) < np.mean(meas)


def test_kalman_needs_two_samples():
    with pytest.raises(InsufficientSamples):
        kalman_targets(np.zeros((1, 3)), 1.0, 0.05, dt=DT)


# -- dynamics -------------------------------------------------------------------------------


@pytest.mark.parametrize("smoothing", ["thrust", "latent"])
def test_dynamics_fixed_point_of_smooth_input(smoothing):
    # constant acceleration: smooth at every scale, including the ends
    lat = LatentSequence(np.full(510, 0.05), np.full(510, 0.1), np.full(510, 10.5))
    s0 = InitialState(np.array([0.0, 0.0, 5.0]), np.array([1.0, 0.0, 0.0]))
    X = latent_to_trajectory(lat, s0, P)
    tg = dynamics_targets(X, P, 1.1, smoothing=smoothing)
    ref = trajectory_to_latent(X, P)[0]
    np.testing.assert_allclose(tg.target_latent.as_array()[:-2], ref.as_array()[:-2], atol=1e-6)
    np.testing.assert_allclose(tg.target_positions, X.positions, atol=1e-6)
    np.testing.assert_array_equal(tg.reference_positions, X.positions)


@pytest.mark.parametrize("smoothing", ["thrust", "latent"])
def test_dynamics_hover_targets_are_constant(smoothing):
    X = np.tile([0.0, 0.0, 3.0], (50, 1))
    tg = dynamics_targets(X, P, 1.1, smoothing=smoothing)
    np.testing.assert_allclose(tg.target_latent.phi, 0.0, atol=1e-15)
    np.testing.assert_allclose(tg.target_latent.theta, 0.0, atol=1e-15)
    np.testing.assert_allclose(tg.target_latent.u, P.m * P.g, rtol=1e-14)


@pytest.mark.parametrize("smoothing", ["thrust", "latent"])
def test_dynamics_targets_reduce_throttle_jitter(smoothing):
    rng = np.random.default_rng(0)
    lat = smooth_latent_sequence(300)
    X = latent_to_trajectory(lat, InitialState(np.zeros(3), np.zeros(3)), P).positions
    X = X + rng.normal(0, 2e-4, X.shape)
    raw = trajectory_to_latent(X, P)[0]
    tg = dynamics_targets(X, P, 1.1, smoothing=smoothing)
    assert hf_energy(tg.target_latent.u) < hf_energy(raw.u)


def test_thrust_smoothing_is_unbiased_on_noisy_positions():
    # averaging |f| of noisy thrust vectors inflates throttle; averaging f does not
    rng = np.random.default_rng(1)
    X = np.tile([0.0, 0.0, 3.0], (600, 1)) + rng.normal(0, 0.003, (600, 3))
    raw = trajectory_to_latent(X, P)[0]
    vec = smooth_thrust(raw, 1.1).u[10:-10].mean()
    chan = smooth_latent(raw, 1.1).u[10:-10].mean()
    assert abs(vec - P.hover_thrust) < 0.5 * abs(chan - P.hover_thrust)


def test_dynamics_free_fall_propagates():
    t = np.arange(10) * DT
    X = np.stack([0 * t, 0 * t, 100 - 0.5 * P.g * t**2], axis=1)
    with pytest.raises(FreeFall):
        dynamics_targets(X, P, 1.1)


# -- dispatch and invariants -------------------------------------------------------------------


def test_identity_settings_return_input():
    X = np.random.default_rng(2).normal(size=(40, 3))
    np.testing.assert_array_equal(compute_targets(GaussianSmooth(0.0), X, P).target_positions, X)
    np.testing.assert_array_equal(compute_targets(SplineSmooth(1), X, P).target_positions, X)
    assert compute_targets(NoPrior(), X, P) is None


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 80), st.sampled_from([GaussianSmooth(), SplineSmooth(), KalmanCA(), Dynamics()]))
def test_target_lengths_equal_T(T, prior):
    lat = smooth_latent_sequence(T)
    X = latent_to_trajectory(lat, InitialState(np.zeros(3), np.zeros(3)), P)
    tg = compute_targets(prior, X, P, 0.02)
    assert len(tg.target_positions) == T and tg.weight == 0.02
    if tg.target_latent is not None:
        assert len(tg.target_latent) == T


def test_prior_validation_and_names():
    for bad in (lambda: GaussianSmooth(-1), lambda: SplineSmooth(0), lambda: KalmanCA(0, 1),
                lambda: Dynamics(lam1=-1), lambda: Dynamics(smoothing="median")):
        with pytest.raises(ValueError):
            bad()
    assert prior_from_name("dm", sigma_latent=0.8) == Dynamics(sigma_latent=0.8)
    with pytest.raises(ValueError):
        prior_from_name("ekf")
