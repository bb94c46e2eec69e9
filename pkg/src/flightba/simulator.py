"""Synthetic multi-camera scenes: flights, camera rigs and noisy detections.

Flights come from the same dynamics model the solver uses, steered through
random waypoints by a saturated PD position controller. All randomness is
derived from ``SimConfig.seed``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .association import DEFAULT_CAP, ObservationTable
from .dynamics import (
    InitialState,
    LatentSequence,
    QuadParams,
    Trajectory,
    accel_from_latent,
    control_inputs,
    latent_from_accel,
    latent_to_trajectory,
)
from .scene import Camera, Intrinsics, project_many

# PD controller constants
POSITION_GAIN = 1.2  # 1/s^2
VELOCITY_GAIN = 1.8  # 1/s
TILT_LIMIT = 0.35  # rad
THRUST_RANGE = (0.3, 2.0)  # multiples of m g
WAYPOINT_RADIUS = 0.5  # m

DEFAULT_INTRINSICS = Intrinsics(fx=1600.0, fy=1600.0, cx=1352.0, cy=768.0, width=2704, height=1536)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_px: float = 0.0
    miss_rate: float = 0.0
    outlier_max: int = 8
    outlier_model: str = "uniform"  # or "near-target"
    sigma_clutter: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must lie in [0, 1]")
        if self.outlier_model not in ("uniform", "near-target"):
            raise ValueError(f"unknown outlier model {self.outlier_model!r}")
        if self.sigma_px < 0 or self.outlier_max < 0:
            raise ValueError("noise parameters must be non-negative")


@dataclass(frozen=True)
class PerturbConfig:
    sigma_p: float = 0.0  # m
    sigma_o: float = 0.0  # degrees


@dataclass(frozen=True)
class SimConfig:
    T: int = 510
    fps: float = 30.0
    n_cameras: int = 10
    volume: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = (
        (-10.0, -10.0, 2.0),
        (10.0, 10.0, 12.0),
    )
    waypoints: int = 8
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    seed: int = 0
    quad: QuadParams = field(default_factory=QuadParams)
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.T < 3:
            raise ValueError("T must be >= 3")
        if self.n_cameras < 2:
            raise ValueError("need at least 2 cameras")
        if self.noise.outlier_max + 1 > self.cap:
            raise ValueError("outlier_max exceeds the candidate cap")
        if abs(self.quad.dt - 1.0 / self.fps) > 1e-12:
            object.__setattr__(self, "quad", replace(self.quad, dt=1.0 / self.fps))

    @property
    def center(self):
        lo, hi = np.asarray(self.volume, dtype=float)
        return 0.5 * (lo + hi)

    @property
    def half_diagonal(self):
        lo, hi = np.asarray(self.volume, dtype=float)
        return 0.5 * float(np.linalg.norm(hi - lo))


@dataclass(eq=False)
class GroundTruth:
    X: Trajectory
    latent: LatentSequence
    initial: InitialState
    controls: object
    cameras: list
    assignment: np.ndarray


@dataclass(eq=False)
class Scenario:
    config: SimConfig
    truth: GroundTruth
    obs: ObservationTable
    cameras_init: list


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


# ---------------------------------------------------------------------------
# flights


def _controller_latent(x, v, waypoint, params):
    a_des = POSITION_GAIN * (waypoint - x) - VELOCITY_GAIN * v
    # keep the commanded thrust pointing upwards
    a_des[2] = max(a_des[2], -params.g + 1e-3)
    phi, theta, u = latent_from_accel(a_des, params)
    mg = params.hover_thrust
    return (
        float(np.clip(phi, -TILT_LIMIT, TILT_LIMIT)),
        float(np.clip(theta, -TILT_LIMIT, TILT_LIMIT)),
        float(np.clip(u, THRUST_RANGE[0] * mg, THRUST_RANGE[1] * mg)),
    )


def fly_waypoints(start, waypoints, T, params):
    """Fly from ``start`` (at rest) through ``waypoints`` for ``T`` samples.

    The controller moves on to the next waypoint once within 0.5 m of the
    current one and holds the last. Returns ``(Trajectory, LatentSequence,
    InitialState)`` with the trajectory equal to the integrated latent
    sequence.
    """
    wps = np.atleast_2d(np.asarray(waypoints, dtype=float))
    x = np.asarray(start, dtype=float).copy()
    v = np.zeros(3)
    s0 = InitialState(x.copy(), v.copy())
    lat = np.empty((T, 3))
    k = 0
    for t in range(T - 2):
        while k < len(wps) - 1 and np.linalg.norm(wps[k] - x) < WAYPOINT_RADIUS:
            k += 1
        lat[t] = _controller_latent(x, v, wps[k], params)
        a = accel_from_latent(*lat[t], params)
        x = x + v * params.dt
        v = v + a * params.dt
    # the last two steps do not influence the positions; repeat the last one
    lat[T - 2 :] = lat[T - 3]
    latent = LatentSequence.from_array(lat)
    return latent_to_trajectory(latent, s0, params), latent, s0


def generate_flight(cfg, rng=None):
    """Random-waypoint flight starting at rest at the first waypoint."""
    rng = rng if rng is not None else _streams(cfg.seed)[0]
    lo, hi = np.asarray(cfg.volume, dtype=float)
    wps = rng.uniform(lo, hi, size=(cfg.waypoints, 3))
    return fly_waypoints(wps[0], wps, cfg.T, cfg.quad)


# ---------------------------------------------------------------------------
# cameras


def place_cameras(cfg, rng=None):
    """Cameras on a ring around the volume, all looking at its center.

    Azimuths are stratified with jitter, elevations drawn within +-0.25 rad.
    The ring radius is 1.5x the volume half-diagonal. Draws are repeated
    until every pair of centers is at least 0.1 radius apart.
    """
    rng = rng if rng is not None else _streams(cfg.seed)[1]
    n = cfg.n_cameras
    c = cfg.center
    radius = 1.5 * cfg.half_diagonal
    while True:
        az = 2 * np.pi * (np.arange(n) + rng.uniform(-0.3, 0.3, n)) / n + rng.uniform(0, 2 * np.pi)
        el = rng.uniform(-0.25, 0.25, n)
        centers = c + radius * np.stack(
            [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=1
        )
        d = np.linalg.norm(centers[:, None] - centers[None], axis=2)
        d[np.diag_indices(n)] = np.inf
        if d.min() > 0.1 * radius:
            break
    return [Camera.look_at(j, cfg.intrinsics, centers[j], c) for j in range(n)]


def perturb_cameras(cameras, sigma_p, sigma_o, rng, exempt_first=False):
    """Jitter camera centers (``sigma_p`` m) and orientations (``sigma_o`` deg).

    Orientation noise is a rotation about a uniformly random axis by
    ``|N(0, sigma_o)|``. Centers move by isotropic Gaussian noise.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = []
    for i, cam in enumerate(cameras):
        dc = rng.normal(0.0, 1.0, 3) * sigma_p
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = abs(rng.normal()) * np.deg2rad(sigma_o)
        if exempt_first and i == 0:
            out.append(cam)
            continue
        if sigma_p == 0 and sigma_o == 0:
            out.append(cam)
            continue
        R = cam.rotation @ Rotation.from_rotvec(angle * axis).as_matrix().T
        center = cam.center + dc
        out.append(Camera.from_rotation(cam.id, cam.intrinsics, R, -R @ center))
    return out


# ---------------------------------------------------------------------------
# detections


def render_detections(X, cameras, noise, rng, cap=DEFAULT_CAP):
    """Candidate detections per (camera, frame) and the true assignment.

    A visible target (positive depth, inside the image) that is not missed
    yields its projection plus Gaussian pixel noise; then 0..outlier_max
    clutter detections are added and the order is shuffled.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    pos = np.asarray(getattr(X, "positions", X), dtype=float)
    T, M = len(pos), len(cameras)
    sets = {}
    assignment = np.full((T, M), -1, dtype=np.int64)
    for j, cam in enumerate(cameras):
        k = cam.intrinsics
        size = np.array([k.width, k.height], dtype=float)
        uv, z = project_many(cam, pos)
        visible = (z > 0) & k.in_bounds(np.nan_to_num(uv, nan=-1.0))
        noisy = uv + rng.normal(0.0, noise.sigma_px, (T, 2)) if noise.sigma_px > 0 else uv.copy()
        missed = rng.random(T) < noise.miss_rate
        n_out = rng.integers(0, noise.outlier_max + 1, T)
        for t in range(T):
            cands = []
            has_true = visible[t] and not missed[t] and k.in_bounds(noisy[t])
            if has_true:
                cands.append(noisy[t])
            m = min(int(n_out[t]), cap - len(cands))
            if m > 0:
                if noise.outlier_model == "near-target" and visible[t]:
                    clutter = np.clip(uv[t] + rng.normal(0.0, noise.sigma_clutter, (m, 2)), 0.0, size)
                else:
                    clutter = rng.uniform(0.0, 1.0, (m, 2)) * size
                cands.extend(clutter)
            if not cands:
                continue
            order = rng.permutation(len(cands))
            sets[(j, t)] = np.asarray(cands)[order]
            if has_true:
                assignment[t, j] = int(np.flatnonzero(order == 0)[0])
    return ObservationTable(M, T, sets, cap), assignment


# ---------------------------------------------------------------------------


def simulate(cfg):
    """Full synthetic scenario: truth, detections and perturbed initial cameras."""
    r_flight, r_cams, r_det, r_pert = _streams(cfg.seed)
    X, latent, s0 = generate_flight(cfg, r_flight)
    cameras = place_cameras(cfg, r_cams)
    obs, assignment = render_detections(X, cameras, cfg.noise, r_det, cfg.cap)
    cams_init = perturb_cameras(cameras, cfg.perturb.sigma_p, cfg.perturb.sigma_o, r_pert)
    truth = GroundTruth(X, latent, s0, control_inputs(latent, cfg.quad), cameras, assignment)
    return Scenario(cfg, truth, obs, cams_init)
