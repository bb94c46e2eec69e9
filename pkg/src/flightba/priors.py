"""Trajectory regularizers.

Each prior turns the previous trajectory estimate into soft targets for the
next solver iteration. Smoothing-type priors (Gaussian, spline, Kalman)
produce target positions; the dynamics prior produces smoothed latent
targets and the positions they integrate to.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.interpolate import make_lsq_spline

from .dynamics import (
    LatentSequence,
    gaussian_smooth,
    latent_to_trajectory,
    smooth_latent,
    smooth_thrust,
    trajectory_to_latent,
)
from .errors import InsufficientSamples


@dataclass(frozen=True)
class NoPrior:
    name = "none"


@dataclass(frozen=True)
class GaussianSmooth:
    sigma: float = 1.1
    name = "gs"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class SplineSmooth:
    knot_spacing: int = 10
    name = "ss"

    def __post_init__(self):
        if self.knot_spacing < 1:
            raise ValueError("knot_spacing must be >= 1")


@dataclass(frozen=True)
class KalmanCA:
    q: float = 1.0
    r: float = 0.05
    name = "kf"

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0):
            raise ValueError("q and r must be positive")


@dataclass(frozen=True)
class Dynamics:
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 0.1
    sigma_latent: float = 1.1
    # "thrust" smooths the thrust vector, "latent" each of (phi, theta, u)
    smoothing: str = "thrust"
    name = "dm"

    def __post_init__(self):
        if min(self.lam1, self.lam2, self.lam3) < 0:
            raise ValueError("anchor weights must be >= 0")
        if self.sigma_latent < 0:
            raise ValueError("sigma_latent must be >= 0")
        if self.smoothing not in ("thrust", "latent"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


PriorKind = Union[NoPrior, GaussianSmooth, SplineSmooth, KalmanCA, Dynamics]


@dataclass(eq=False)
class PriorTargets:
    target_positions: Optional[np.ndarray] = None
    target_latent: Optional[LatentSequence] = None
    weight: float = 0.0
    # previous estimate the targets were derived from (dynamics prior)
    reference_positions: Optional[np.ndarray] = None


def _positions(X):
    return np.asarray(getattr(X, "positions", X), dtype=float)


def gaussian_targets(X_prev, sigma, weight=0.0):
    return PriorTargets(gaussian_smooth(_positions(X_prev), sigma), None, weight)


def spline_targets(X_prev, knot_spacing, weight=0.0):
    """Least-squares uniform cubic B-spline per coordinate, resampled."""
    pos = _positions(X_prev)
    T = len(pos)
    if T < 4:
        raise InsufficientSamples(f"spline fit needs at least 4 samples, got {T}")
    if knot_spacing <= 1:
        # a knot at every sample interpolates the data
        return PriorTargets(pos.copy(), None, weight)
    s = np.arange(T, dtype=float)
    interior = np.arange(knot_spacing, T - 1, knot_spacing, dtype=float)
    while len(interior) + 4 > T:
        interior = interior[::2]
    knots = np.concatenate([np.zeros(4), interior, np.full(4, T - 1.0)])
    spl = make_lsq_spline(s, pos, knots, k=3, axis=0)
    return PriorTargets(spl(s), None, weight)


def kalman_predictions(X_prev, q, r, dt):
    """One-step-ahead predictions of a constant-acceleration Kalman filter.

    State per axis is (position, velocity, acceleration) driven by white
    jerk of spectral density ``q``; measurements are positions with
    variance ``r``. ``pred[t]`` is the prediction for sample ``t`` made
    before assimilating it; ``pred[0]`` is the first measurement.
    """
    z = _positions(X_prev)
    T = len(z)
    F = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    Q = q * np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )
    # covariance is shared by the three axes (same model and noise)
    P = np.diag([r, 1e4, 1e4])
    state = np.zeros((3, 3))  # rows: p, v, a ; columns: axes
    state[0] = z[0]
    pred = np.empty_like(z)
    pred[0] = z[0]
    for t in range(1, T):
        state = F @ state
        P = F @ P @ F.T + Q
        pred[t] = state[0]
        S = P[0, 0] + r
        K = P[:, 0] / S
        state = state + np.outer(K, z[t] - state[0])
        P = P - np.outer(K, P[0])
        P = 0.5 * (P + P.T)
    return pred


def kalman_targets(X_prev, q, r, dt=None, weight=0.0):
    pos = _positions(X_prev)
    if len(pos) < 2:
        raise InsufficientSamples("Kalman prior needs at least 2 samples")
    dt = dt if dt is not None else X_prev.dt
    return PriorTargets(kalman_predictions(pos, q, r, dt), None, weight)


def dynamics_targets(X_prev, params, sigma_latent, weight=0.0, smoothing="thrust"):
    """Smoothed latent targets and the trajectory they integrate to."""
    latent, s0 = trajectory_to_latent(X_prev, params)
    smooth = smooth_thrust if smoothing == "thrust" else smooth_latent
    smoothed = smooth(latent, sigma_latent)
    positions = latent_to_trajectory(smoothed, s0, params).positions
    return PriorTargets(positions, smoothed, weight, _positions(X_prev).copy())


def compute_targets(prior, X_prev, params, weight=0.0):
    """Targets for ``prior`` from the previous estimate (``None`` for no prior)."""
    if isinstance(prior, NoPrior) or prior is None:
        return None
    if isinstance(prior, GaussianSmooth):
        return gaussian_targets(X_prev, prior.sigma, weight)
    if isinstance(prior, SplineSmooth):
        return spline_targets(X_prev, prior.knot_spacing, weight)
    if isinstance(prior, KalmanCA):
        return kalman_targets(X_prev, prior.q, prior.r, params.dt, weight)
    if isinstance(prior, Dynamics):
        return dynamics_targets(X_prev, params, prior.sigma_latent, weight, prior.smoothing)
    raise TypeError(f"unknown prior {prior!r}")


def prior_from_name(name, **kw):
    table = {
        "none": NoPrior,
        "gs": GaussianSmooth,
        "ss": SplineSmooth,
        "kf": KalmanCA,
        "dm": Dynamics,
    }
    try:
        cls = table[name]
    except KeyError:
        raise ValueError(f"unknown prior {name!r}; expected one of {sorted(table)}") from None
    return cls(**kw)
