"""Quadrotor point-mass flight dynamics with zero yaw.

The latent state per time step is ``(phi, theta, u)``: roll, pitch and
collective thrust. Acceleration follows from the latent state, and position
from explicit Euler integration::

    x[t+1] = x[t] + v[t] * dt
    v[t+1] = v[t] + a(phi[t], theta[t], u[t]) * dt

``latent_to_trajectory`` integrates, ``trajectory_to_latent`` is its exact
left inverse (forward differences), ``smooth_latent`` is a Gaussian smoother.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FreeFall, NonPositiveThrust

_FREEFALL_TOL = 1e-9
SIN_PHI_CLAMP = 1e-3


@dataclass(frozen=True)
class QuadParams:
    m: float = 1.0
    Ix: float = 0.0081
    Iy: float = 0.0081
    Iz: float = 0.0142
    g: float = 9.81
    dt: float = 1.0 / 30.0
    Jtp: float = 0.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if not (self.Ix > 0 and self.Iy > 0 and self.Iz > 0):
            raise ValueError("moments of inertia must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.Jtp != 0:
            raise ValueError("propeller inertia is not modelled (Jtp must be 0)")

    @property
    def hover_thrust(self):
        return self.m * self.g


@dataclass(eq=False)
class Trajectory:
    dt: float
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must have shape (T, 3)")
        if len(self.positions) < 3:
            raise ValueError("trajectory needs at least 3 samples")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("trajectory contains non-finite coordinates")

    def __len__(self):
        return len(self.positions)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.positions, dtype=dtype)


@dataclass(eq=False)
class LatentSequence:
    phi: np.ndarray
    theta: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (self.phi.shape == self.theta.shape == self.u.shape) or self.phi.ndim != 1:
            raise ValueError("phi, theta, u must be 1-D arrays of equal length")

    def __len__(self):
        return len(self.phi)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy())

    def as_array(self):
        return np.stack([self.phi, self.theta, self.u], axis=1)


@dataclass(frozen=True)
class InitialState:
    x0: np.ndarray
    v0: np.ndarray


@dataclass(eq=False)
class ControlSequence:
    u_phi: np.ndarray
    u_theta: np.ndarray

    def __len__(self):
        return len(self.u_phi)


# ---------------------------------------------------------------------------
# per-step conversions


def accel_from_latent(phi, theta, u, params):
    """Acceleration for roll/pitch/thrust; broadcasts over arrays.

    Returns shape ``(..., 3)``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)):
        raise NonPositiveThrust("thrust must be positive")
    k = u / params.m
    cphi = np.cos(phi)
    return np.stack(
        [np.sin(theta) * cphi * k, -np.sin(phi) * k, np.cos(theta) * cphi * k - params.g],
        axis=-1,
    )


def accel_jacobian(phi, theta, u, params):
    """d(accel)/d(phi, theta, u), shape ``(..., 3, 3)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    k = u / params.m
    sp, cp = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    J = np.empty(phi.shape + (3, 3))
    J[..., 0, 0] = -st * sp * k
    J[..., 0, 1] = ct * cp * k
    J[..., 0, 2] = st * cp / params.m
    J[..., 1, 0] = -cp * k
    J[..., 1, 1] = 0.0
    J[..., 1, 2] = -sp / params.m
    J[..., 2, 0] = -ct * sp * k
    J[..., 2, 1] = -st * cp * k
    J[..., 2, 2] = ct * cp / params.m
    return J


def latent_from_accel(a, params, pitch_form="inverse"):
    """Invert :func:`accel_from_latent`; returns ``(phi, theta, u)``.

    ``pitch_form="printed"`` evaluates pitch as ``arcsin((a_x m / u) cos(phi))``,
    which does not invert the acceleration model and is kept only for
    comparison. The default solves ``sin(theta) cos(phi) = a_x m / u`` exactly.
    """
    a = np.asarray(a, dtype=float)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2] + params.g
    norm = np.sqrt(ax * ax + ay * ay + az * az)
    bad = ~(norm > _FREEFALL_TOL)
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise FreeFall("thrust magnitude vanishes (free fall)", index=idx)
    u = params.m * norm
    # Same angles as the arcsin forms, evaluated without loss of precision
    # near |sin| = 1.
    phi = np.arctan2(-ay, np.hypot(ax, az))
    if pitch_form == "inverse":
        theta = np.arctan2(ax, az)
        theta = np.clip(theta, -np.pi / 2, np.nextafter(np.pi / 2, 0))
    elif pitch_form == "printed":
        theta = np.arcsin(np.clip(ax * params.m / u * np.cos(phi), -1.0, 1.0))
    else:
        raise ValueError(f"unknown pitch_form {pitch_form!r}")
    phi = np.where(phi >= np.pi / 2, np.nextafter(np.pi / 2, 0), phi)
    return phi, theta, u


# ---------------------------------------------------------------------------
# whole-sequence transforms


def _positions(X):
    return np.asarray(getattr(X, "positions", X), dtype=float)


def finite_differences(positions, dt):
    """Forward-difference velocities (T-1) and accelerations (T-2)."""
    v = np.diff(positions, axis=0) / dt
    a = np.diff(v, axis=0) / dt
    return v, a


def trajectory_to_latent(X, params, pitch_form="inverse"):
    """Recover ``(LatentSequence, InitialState)`` from a trajectory.

    The last two entries repeat the last computable one so the latent
    sequence has one entry per trajectory sample.
    """
    pos = _positions(X)
    T = len(pos)
    if T < 3:
        raise ValueError("need at least 3 samples")
    v, a = finite_differences(pos, params.dt)
    try:
        phi, theta, u = latent_from_accel(a, params, pitch_form)
    except FreeFall as exc:
        raise FreeFall(f"free fall at step {exc.index}", index=exc.index) from None
    pad = lambda s: np.concatenate([s, np.repeat(s[-1:], 2)])
    return (
        LatentSequence(pad(phi), pad(theta), pad(u)),
        InitialState(pos[0].copy(), v[0].copy()),
    )


def latent_to_trajectory(latent, s0, params):
    """Euler-integrate a latent sequence from ``s0``; output length ``len(latent)``."""
    a = accel_from_latent(latent.phi, latent.theta, latent.u, params)
    T = len(latent)
    dt = params.dt
    # v[t] = v0 + dt * sum_{k<t} a[k];  x[t] = x0 + dt * sum_{k<t} v[k]
    v = np.empty((T, 3))
    v[0] = s0.v0
    np.cumsum(a[: T - 1] * dt, axis=0, out=v[1:])
    v[1:] += s0.v0
    x = np.empty((T, 3))
    x[0] = s0.x0
    np.cumsum(v[: T - 1] * dt, axis=0, out=x[1:])
    x[1:] += s0.x0
    return Trajectory(dt, x)


def gaussian_kernel(sigma):
    """Sampled Gaussian truncated at ``floor(3 sigma)``, normalized to sum 1."""
    if sigma <= 0:
        return np.ones(1)
    r = int(np.floor(3.0 * sigma))
    k = np.arange(-r, r + 1)
    w = np.exp(-0.5 * (k / sigma) ** 2) / (sigma * np.sqrt(2.0 * np.pi))
    return w / w.sum()


def gaussian_smooth(values, sigma):
    """Smooth along axis 0 with mirrored (edge-repeating) boundaries."""
    values = np.asarray(values, dtype=float)
    if sigma <= 0:
        return values.copy()
    w = gaussian_kernel(sigma)
    r = len(w) // 2
    squeeze = values.ndim == 1
    v = values[:, None] if squeeze else values
    padded = np.pad(v, ((r, r), (0, 0)), mode="symmetric")
    n = len(v)
    out = np.zeros_like(v)
    for i, wi in enumerate(w):
        out += wi * padded[i : i + n]
    return out[:, 0] if squeeze else out


def smooth_latent(latent, sigma):
    """Channel-wise Gaussian smoothing of ``(phi, theta, u)``."""
    if sigma == 0:
        return LatentSequence(latent.phi.copy(), latent.theta.copy(), latent.u.copy())
    return LatentSequence.from_array(gaussian_smooth(latent.as_array(), sigma))


def thrust_vectors(latent):
    """Thrust force ``u * (sin th cos ph, -sin ph, cos th cos ph)``, shape ``(T, 3)``."""
    cphi = np.cos(latent.phi)
    return latent.u[:, None] * np.stack(
        [np.sin(latent.theta) * cphi, -np.sin(latent.phi), np.cos(latent.theta) * cphi], axis=1
    )


def latent_from_thrust(f):
    """Inverse of :func:`thrust_vectors` (same angle conventions as ``latent_from_accel``)."""
    f = np.asarray(f, dtype=float)
    u = np.linalg.norm(f, axis=-1)
    if np.any(~(u > _FREEFALL_TOL)):
        idx = int(np.flatnonzero(~(u > _FREEFALL_TOL))[0])
        raise FreeFall("thrust magnitude vanishes", index=idx)
    phi = np.arctan2(-f[:, 1], np.hypot(f[:, 0], f[:, 2]))
    phi = np.where(phi >= np.pi / 2, np.nextafter(np.pi / 2, 0), phi)
    theta = np.clip(np.arctan2(f[:, 0], f[:, 2]), -np.pi / 2, np.nextafter(np.pi / 2, 0))
    return LatentSequence(phi, theta, u)


def smooth_thrust(latent, sigma):
    """Gaussian smoothing of the thrust vector, mapped back to ``(phi, theta, u)``.

    Agrees with :func:`smooth_latent` to first order on slowly varying
    sequences. Unlike channel-wise smoothing it is unbiased when the latent
    sequence comes from noisy positions: averaging noisy thrust magnitudes
    inflates ``u``, averaging the vectors does not.
    """
    if sigma == 0:
        return LatentSequence(latent.phi.copy(), latent.theta.copy(), latent.u.copy())
    return latent_from_thrust(gaussian_smooth(thrust_vectors(latent), sigma))


# ---------------------------------------------------------------------------
# body rates and control inputs


def _clamped_sin(phi):
    s = np.sin(phi)
    sign = np.where(s < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(s), SIN_PHI_CLAMP)


def body_rates(latent, params):
    """Angular velocity ``(p, q, r)`` per step, shape ``(T, 3)``.

    ``q`` and ``r`` follow the model's rate equations, which are singular at
    zero roll; ``|sin(phi)|`` is clamped to 1e-3 keeping its sign.
    """
    phi, theta = latent.phi, latent.theta
    if len(phi) < 2:
        raise ValueError("need at least 2 latent samples")
    dt = params.dt
    s = _clamped_sin(phi[1:])
    b = np.empty((len(phi), 3))
    b[1:, 0] = np.diff(phi) / dt
    b[1:, 1] = np.diff(theta) / dt * (np.cos(phi[1:]) / s**2)
    b[1:, 2] = -theta[1:] / s
    b[0] = b[1]
    return b


def control_inputs_from_rates(rates, params):
    rates = np.asarray(rates, dtype=float)
    if len(rates) < 3:
        raise ValueError("need at least 3 samples")
    p, q, r = rates[:, 0], rates[:, 1], rates[:, 2]
    dt = params.dt
    u_phi = np.empty(len(rates))
    u_theta = np.empty(len(rates))
    u_phi[1:] = params.Ix * np.diff(p) / dt - (params.Iy - params.Iz) * q[1:] * r[1:]
    u_theta[1:] = params.Iy * np.diff(q) / dt - (params.Iz - params.Ix) * p[1:] * r[1:]
    # rates[0] is itself a copy of rates[1], so index 2 is the first real value
    u_phi[:2] = u_phi[2]
    u_theta[:2] = u_theta[2]
    return ControlSequence(u_phi, u_theta)


def control_inputs(latent, params):
    return control_inputs_from_rates(body_rates(latent, params), params)
