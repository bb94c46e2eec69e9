"""Sparse Levenberg-Marquardt bundle adjustment with trajectory priors.

Unknowns are the poses of cameras ``1..M-1`` (camera 0 fixes the gauge),
one 3D point per frame and, with the dynamics prior, one latent triple
``(phi, theta, u)`` per frame. Residual families:

* reprojection: ``project(c_j, x_t) - p_{jtk*}`` with the candidate ``k*``
  chosen by the min-over-candidates rule and frozen within a step;
* dynamics consistency (``t >= 2``): ``x_t - xhat_t(gamma_{t-2})`` where
  ``xhat_t = 2 x'_{t-1} - x'_{t-2} + a(gamma_{t-2}) dt^2`` and ``x'`` is the
  previous outer iterate (a constant);
* latent anchors ``gamma_t - gammahat_t`` towards smoothed targets;
* or, for smoothing priors, position targets ``x_t - xhat_t``.

No residual couples two points or two latents, so every point is paired with
one latent (``x_t`` with ``gamma_{(t-2) mod T}``) into a 6x6 block and the
normal equations are reduced to the camera blocks by a Schur complement.

Prior residuals are divided by a unit before the weights apply (5 mm for
positions, 1 mrad and 1 mN for the latent by default); see
``SolverConfig.position_unit`` and friends.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.spatial.transform import Rotation

from . import kernels
from .dynamics import (
    LatentSequence,
    QuadParams,
    Trajectory,
    accel_jacobian,
    control_inputs,
    trajectory_to_latent,
)
from .errors import LinearSolveFailure
from .losses import RobustLoss
from .priors import Dynamics, NoPrior, compute_targets
from .scene import camera_arrays

log = logging.getLogger(__name__)

_MIN_DIAG = 1e-6
_STATIONARY_STEP = 1e-12


@dataclass(frozen=True)
class LMSettings:
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 1.0 / 3.0
    max_retries: int = 10
    rel_tol: float = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.02
    prior: object = field(default_factory=Dynamics)
    outer_iterations: int = 25
    lm: LMSettings = field(default_factory=LMSettings)
    reprojection_loss: RobustLoss = field(default_factory=lambda: RobustLoss.huber(2.0))
    angle_delta: float = 0.05
    thrust_delta: float = 0.5
    # Huber scale (m) for consistency / position-target residuals; None = squared
    position_delta: Optional[float] = 0.1
    position_unit: float = 5e-3
    angle_unit: float = 1e-3
    thrust_unit: float = 1e-3
    params: QuadParams = field(default_factory=QuadParams)

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.position_delta is not None and not self.position_delta > 0:
            raise ValueError("position_delta must be positive or None")

    @property
    def active_prior(self):
        """The prior actually applied; ``lam == 0`` switches it off."""
        if self.lam == 0 or self.prior is None:
            return NoPrior()
        return self.prior


@dataclass(eq=False)
class ProblemState:
    cameras: list
    X: np.ndarray
    latent: Optional[np.ndarray] = None
    assignment: Optional[np.ndarray] = None

    def copy(self):
        return ProblemState(
            list(self.cameras),
            self.X.copy(),
            None if self.latent is None else self.latent.copy(),
            None if self.assignment is None else self.assignment.copy(),
        )


@dataclass(frozen=True)
class EnergyBreakdown:
    data: float
    consistency: float = 0.0
    anchor_phi: float = 0.0
    anchor_theta: float = 0.0
    anchor_u: float = 0.0
    total: float = 0.0


def _huber_scalar(r2, delta):
    return np.where(r2 <= delta * delta, r2, 2.0 * delta * np.sqrt(r2) - delta * delta)


def _huber_weight(r2, delta):
    return np.where(r2 <= delta * delta, 1.0, delta / np.sqrt(np.maximum(r2, delta * delta)))


def _accel(latent, params):
    phi, theta, u = latent[:, 0], latent[:, 1], latent[:, 2]
    k = u / params.m
    cphi = np.cos(phi)
    return np.stack(
        [np.sin(theta) * cphi * k, -np.sin(phi) * k, np.cos(theta) * cphi * k - params.g], axis=1
    )


class Problem:
    """Residuals, energy and normal equations for fixed targets.

    Built once per outer iteration (targets depend on the previous
    trajectory) and evaluated at any state.
    """

    def __init__(self, obs, targets, cfg):
        self.obs = obs
        self.cfg = cfg
        self.targets = targets
        self.M = obs.n_cameras
        self.T = obs.n_frames
        idx = np.flatnonzero(obs.counts.ravel())
        self.obs_t = idx // self.M
        self.obs_j = idx % self.M
        self.obs_off = np.concatenate([obs.offsets[idx], obs.offsets[-1:]]).astype(np.int64)
        self.lam = cfg.lam
        prior = cfg.active_prior
        if targets is None or isinstance(prior, NoPrior):
            self.mode = "none"
        elif isinstance(prior, Dynamics):
            self.mode = "dynamics"
            self.prior = prior
            ref = np.asarray(targets.reference_positions, dtype=float)
            # constant part of the predictor: x'_{t-1} + v'_{t-2} dt
            self.base = 2.0 * ref[1:-1] - ref[:-2]
            self.latent_hat = targets.target_latent.as_array()
        else:
            self.mode = "positions"
            self.xhat = np.asarray(targets.target_positions, dtype=float)
        self.block_dim = 6 if self.mode == "dynamics" else 3

    # -- evaluation -----------------------------------------------------

    def _project(self, state, jac=False):
        R, t, intr = camera_arrays(state.cameras)
        pts = state.X[self.obs_t]
        if jac:
            return kernels.project_jac(R, t, intr, self.obs_j, pts)
        uv, z, _, _ = kernels.project_jac(R, t, intr, self.obs_j, pts)
        return uv, z

    def data_terms(self, state):
        uv, z = self._project(state)
        loss = self.cfg.reprojection_loss
        values, arg = kernels.min_candidates(
            uv, z > 0, self.obs.candidates, self.obs_off, loss.code, loss.delta, loss.saturation
        )
        return values, arg

    def assignment_from(self, arg):
        a = np.full((self.T, self.M), -1, dtype=np.int64)
        a[self.obs_t, self.obs_j] = arg
        return a

    def consistency_residuals(self, state):
        """Scaled consistency residuals ``(T-2, 3)`` for frames ``2..T-1``."""
        p = self.cfg.params
        a = _accel(state.latent[:-2], p)
        return (state.X[2:] - self.base - a * p.dt**2) / self.cfg.position_unit

    def anchor_residuals(self, state):
        units = np.array([self.cfg.angle_unit, self.cfg.angle_unit, self.cfg.thrust_unit])
        return (state.latent - self.latent_hat) / units

    def position_residuals(self, state):
        return (state.X - self.xhat) / self.cfg.position_unit

    def _position_loss(self, res):
        """Per-frame loss and IRLS weight of scaled position-type residuals."""
        r2 = np.einsum("ij,ij->i", res, res)
        if self.cfg.position_delta is None:
            return r2, np.ones_like(r2)
        d = self.cfg.position_delta / self.cfg.position_unit
        return _huber_scalar(r2, d), _huber_weight(r2, d)

    def _anchor_deltas(self):
        c = self.cfg
        return np.array([c.angle_delta / c.angle_unit, c.angle_delta / c.angle_unit, c.thrust_delta / c.thrust_unit])

    def energy(self, state):
        """Return ``(EnergyBreakdown, assignment)`` at ``state``."""
        values, arg = self.data_terms(state)
        data = float(values.sum())
        cons = aphi = ath = au = 0.0
        if self.mode == "dynamics":
            if np.any(~(state.latent[:, 2] > 0)):
                return EnergyBreakdown(data, np.inf, total=np.inf), self.assignment_from(arg)
            cons = float(np.sum(self._position_loss(self.consistency_residuals(state))[0]))
            an = self.anchor_residuals(state)
            deltas = self._anchor_deltas()
            aphi, ath, au = (float(np.sum(_huber_scalar(an[:, i] ** 2, deltas[i]))) for i in range(3))
            pr = self.prior
            total = data + self.lam * (cons + pr.lam1 * aphi + pr.lam2 * ath + pr.lam3 * au)
        elif self.mode == "positions":
            cons = float(np.sum(self._position_loss(self.position_residuals(state))[0]))
            total = data + self.lam * cons
        else:
            total = data
        return EnergyBreakdown(data, cons, aphi, ath, au, float(total)), self.assignment_from(arg)

    # -- linearization --------------------------------------------------

    def reprojection_residuals(self, state, assignment, jac=True):
        """Residuals for observations with a chosen candidate.

        Returns ``(sel, r, Jc, Jp)`` where ``sel`` indexes observations.
        """
        uv, z, Jc, Jp = self._project(state, jac=True)
        k = assignment[self.obs_t, self.obs_j]
        sel = np.flatnonzero((k >= 0) & (z > 0))
        p = self.obs.candidates[self.obs_off[sel] + k[sel]]
        r = uv[sel] - p
        return sel, r, Jc[sel], Jp[sel]

    def normal_equations(self, state, assignment):
        """Gauss-Newton normal equations (IRLS weights) in block form.

        Returns ``U (Mc,6,6)``, ``W (Mc,T,6,p)``, ``V (T,p,p)``,
        ``gc (Mc,6)``, ``gp (T,p)`` for cameras ``1..M-1``.
        """
        T, M, p = self.T, self.M, self.block_dim
        Mc = M - 1
        U = np.zeros((Mc, 6, 6))
        W = np.zeros((Mc, T, 6, p))
        V = np.zeros((T, p, p))
        gc = np.zeros((Mc, 6))
        gp = np.zeros((T, p))

        sel, r, Jc, Jp = self.reprojection_residuals(state, assignment)
        w = self.cfg.reprojection_loss.weight(np.einsum("ij,ij->i", r, r))
        tt = self.obs_t[sel]
        jj = self.obs_j[sel]
        wJp = Jp * w[:, None, None]
        Vpp = np.einsum("nki,nkj->nij", wJp, Jp)
        np.add.at(V[:, :3, :3], tt, Vpp)
        np.add.at(gp[:, :3], tt, np.einsum("nki,nk->ni", wJp, r))
        on = jj > 0
        if Mc and np.any(on):
            ci = jj[on] - 1
            wJc = Jc[on] * w[on, None, None]
            np.add.at(U, ci, np.einsum("nki,nkj->nij", wJc, Jc[on]))
            np.add.at(gc, ci, np.einsum("nki,nk->ni", wJc, r[on]))
            W[ci, tt[on], :, :3] = np.einsum("nki,nkj->nij", wJc, Jp[on])

        lam = self.lam
        if self.mode == "positions":
            s = 1.0 / self.cfg.position_unit
            res = self.position_residuals(state)
            wr = self._position_loss(res)[1]
            idx = np.arange(3)
            V[:, idx, idx] += (lam * s * s * wr)[:, None]
            gp[:, :3] += lam * s * wr[:, None] * res
        elif self.mode == "dynamics":
            par = self.cfg.params
            s = 1.0 / self.cfg.position_unit
            D = self.consistency_residuals(state)
            wd = self._position_loss(D)[1]
            # d D / d gamma = -dt^2 * d a / d gamma (scaled)
            Jg = -par.dt**2 * s * accel_jacobian(
                state.latent[:-2, 0], state.latent[:-2, 1], state.latent[:-2, 2], par
            )
            # point t pairs with latent (t-2) mod T: for t >= 2 the latent is the one in D_t
            blk = slice(2, T)
            idx = np.arange(3)
            lw = lam * wd
            V[blk, idx, idx] += (lw * s * s)[:, None]
            V[blk, :3, 3:] += lw[:, None, None] * s * Jg
            V[blk, 3:, :3] += lw[:, None, None] * s * np.transpose(Jg, (0, 2, 1))
            V[blk, 3:, 3:] += lw[:, None, None] * np.einsum("tki,tkj->tij", Jg, Jg)
            gp[blk, :3] += (lw * s)[:, None] * D
            gp[blk, 3:] += lw[:, None] * np.einsum("tki,tk->ti", Jg, D)

            # anchors on latent (t-2) mod T live in block t
            an = self.anchor_residuals(state)
            deltas = self._anchor_deltas()
            units = np.array([self.cfg.angle_unit, self.cfg.angle_unit, self.cfg.thrust_unit])
            lams = np.array([self.prior.lam1, self.prior.lam2, self.prior.lam3])
            wa = np.stack([_huber_weight(an[:, i] ** 2, deltas[i]) for i in range(3)], axis=1)
            coef = lam * lams * wa / units  # per latent, per channel
            owner = (np.arange(T) + 2) % T  # block holding latent l
            V[owner[:, None], 3 + idx[None, :], 3 + idx[None, :]] += coef / units
            gp[owner, 3:] += coef * an
        return U, W, V, gc, gp

    def dense_jacobians(self, state, assignment):
        """Raw (unweighted) residuals and dense Jacobians per family.

        Columns follow the solver's parameter order: cameras ``1..M-1`` (six
        each: rotation increment, translation) then one block per frame
        (point, and the paired latent under the dynamics prior).
        """
        T, M, p = self.T, self.M, self.block_dim
        nc = 6 * (M - 1)
        n = nc + T * p
        out = {}
        sel, r, Jc, Jp = self.reprojection_residuals(state, assignment)
        J = np.zeros((2 * len(sel), n))
        for i, o in enumerate(sel):
            j, t = self.obs_j[o], self.obs_t[o]
            if j > 0:
                J[2 * i : 2 * i + 2, 6 * (j - 1) : 6 * j] = Jc[i]
            J[2 * i : 2 * i + 2, nc + t * p : nc + t * p + 3] = Jp[i]
        out["reprojection"] = (r.ravel(), J)
        if self.mode == "positions":
            s = 1.0 / self.cfg.position_unit
            J = np.zeros((3 * T, n))
            for t in range(T):
                J[3 * t : 3 * t + 3, nc + t * p : nc + t * p + 3] = s * np.eye(3)
            out["positions"] = (self.position_residuals(state).ravel(), J)
        elif self.mode == "dynamics":
            par = self.cfg.params
            s = 1.0 / self.cfg.position_unit
            Jg = -par.dt**2 * s * accel_jacobian(
                state.latent[:-2, 0], state.latent[:-2, 1], state.latent[:-2, 2], par
            )
            J = np.zeros((3 * (T - 2), n))
            for t in range(2, T):
                rows = slice(3 * (t - 2), 3 * (t - 1))
                J[rows, nc + t * p : nc + t * p + 3] = s * np.eye(3)
                J[rows, nc + t * p + 3 : nc + t * p + 6] = Jg[t - 2]
            out["consistency"] = (self.consistency_residuals(state).ravel(), J)
            units = np.array([self.cfg.angle_unit, self.cfg.angle_unit, self.cfg.thrust_unit])
            J = np.zeros((3 * T, n))
            for l in range(T):
                b = (l + 2) % T
                J[3 * l : 3 * l + 3, nc + b * p + 3 : nc + b * p + 6] = np.diag(1.0 / units)
            out["anchors"] = (self.anchor_residuals(state).ravel(), J)
        return out

    def retract_vector(self, state, delta):
        nc = 6 * (self.M - 1)
        return self.retract(
            state, delta[:nc].reshape(-1, 6), delta[nc:].reshape(self.T, self.block_dim)
        )

    def solve(self, state, assignment, damping):
        U, W, V, gc, gp = self.normal_equations(state, assignment)
        dc, dp = solve_damped(U, W, V, gc, gp, damping)
        return dc, dp, (U, W, V, gc, gp)

    def retract(self, state, dc, dp):
        """Apply an increment; camera 0 is never touched."""
        cams = list(state.cameras)
        if len(dc):
            q = np.stack([c.quat for c in cams[1:]])
            rot = Rotation.from_rotvec(dc[:, :3]) * Rotation.from_quat(q[:, [1, 2, 3, 0]])
            xyzw = rot.as_quat()
            for i, c in enumerate(cams[1:], start=1):
                wxyz = xyzw[i - 1, [3, 0, 1, 2]]
                if wxyz[0] < 0:
                    wxyz = -wxyz
                cams[i] = c.with_pose(wxyz, c.translation + dc[i - 1, 3:])
        X = state.X + dp[:, :3]
        latent = state.latent
        if self.mode == "dynamics":
            latent = latent + np.roll(dp[:, 3:], -2, axis=0)
        return ProblemState(cams, X, latent, None)


def solve_damped(U, W, V, gc, gp, damping):
    """Solve the damped block system by eliminating the point blocks."""
    Mc = W.shape[0]
    p = V.shape[1]
    ip = np.arange(p)
    Vd = V.copy()
    Vd[:, ip, ip] += damping * np.maximum(V[:, ip, ip], _MIN_DIAG)
    try:
        Vinv = np.linalg.inv(Vd)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveFailure(f"point block inversion failed: {exc}") from None
    if not np.all(np.isfinite(Vinv)):
        raise LinearSolveFailure("point block inversion produced non-finite values")
    if Mc == 0:
        return np.zeros((0, 6)), -np.einsum("tpq,tq->tp", Vinv, gp)
    i6 = np.arange(6)
    Ud = U.copy()
    Ud[:, i6, i6] += damping * np.maximum(U[:, i6, i6], _MIN_DIAG)
    Y = np.einsum("jtap,tpq->jtaq", W, Vinv)
    S = -np.einsum("itaq,jtbq->iajb", Y, W)
    S[np.arange(Mc), :, np.arange(Mc), :] += Ud
    S = S.reshape(6 * Mc, 6 * Mc)
    rhs = (-gc + np.einsum("jtaq,tq->ja", Y, gp)).ravel()
    try:
        dc = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        try:
            dc = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailure(f"reduced camera system is singular: {exc}") from None
    if not np.all(np.isfinite(dc)):
        raise LinearSolveFailure("reduced camera system produced non-finite values")
    dc = dc.reshape(Mc, 6)
    dp = np.einsum("tpq,tq->tp", Vinv, -gp - np.einsum("jtap,ja->tp", W, dc))
    return dc, dp


def build_residuals(state, obs, targets, cfg):
    return Problem(obs, targets, cfg)


def total_energy(state, obs, targets, cfg):
    energy, _ = Problem(obs, targets, cfg).energy(state)
    return energy


def lm_step(problem, state, damping, lm=None, energy=None):
    """One damped Gauss-Newton step with frozen candidate choice.

    Returns ``(state, energy, accepted, damping)``. A rejected step leaves the
    state untouched and raises the damping.
    """
    lm = lm or problem.cfg.lm
    if energy is None or state.assignment is None:
        energy, assignment = problem.energy(state)
        state = replace(state, assignment=assignment)
    dc, dp, _ = problem.solve(state, state.assignment, damping)
    if max(np.abs(dc).max(initial=0.0), np.abs(dp).max(initial=0.0)) < _STATIONARY_STEP:
        # at a stationary point: keep the state rather than accept round-off
        return state, energy, True, damping * lm.damping_down
    new = problem.retract(state, dc, dp)
    new_energy, new_assignment = problem.energy(new)
    new.assignment = new_assignment
    if new_energy.total <= energy.total:
        return new, new_energy, True, damping * lm.damping_down
    return state, energy, False, damping * lm.damping_up


@dataclass(eq=False)
class TraceEntry:
    iteration: int
    before: EnergyBreakdown
    after: EnergyBreakdown
    accepted: bool
    damping: float
    retries: int


@dataclass(eq=False)
class OptimizeResult:
    X: Trajectory
    cameras: list
    latent: LatentSequence  # recomputed from X (consistent with the trajectory)
    latent_optimized: Optional[LatentSequence]  # raw latent unknowns, dynamics prior only
    controls: object
    assignment: np.ndarray
    trace: list


def optimize(obs, cameras0, X0, cfg=None, assignment0=None):
    """Outer loop: targets from the previous estimate, then one accepted LM step."""
    cfg = cfg or SolverConfig()
    params = cfg.params
    X0 = np.asarray(getattr(X0, "positions", X0), dtype=float)
    if len(X0) != obs.n_frames:
        raise ValueError("initial trajectory length must match the observation table")
    if len(cameras0) != obs.n_cameras:
        raise ValueError("need one camera per observation column")
    prior = cfg.active_prior
    state = ProblemState(list(cameras0), X0.copy(), None, assignment0)
    damping = cfg.lm.initial_damping
    trace = []
    for s in range(1, cfg.outer_iterations + 1):
        targets = compute_targets(prior, state.X, params, cfg.lam)
        if isinstance(prior, Dynamics):
            # restart from the current iterate's own latent, not from the
            # targets: starting at the targets lets a local disturbance grow
            state.latent = trajectory_to_latent(state.X, params)[0].as_array()
        problem = Problem(obs, targets, cfg)
        before, assignment = problem.energy(state)
        state.assignment = assignment
        if before.total == 0.0:
            trace.append(TraceEntry(s, before, before, True, damping, 0))
            continue
        accepted = False
        after = before
        retries = 0
        for retries in range(cfg.lm.max_retries + 1):
            try:
                state, after, accepted, damping = lm_step(problem, state, damping, cfg.lm, before)
            except LinearSolveFailure as exc:
                log.debug("iteration %d: %s; raising damping", s, exc)
                damping *= cfg.lm.damping_up
                continue
            if accepted:
                break
        trace.append(TraceEntry(s, before, after, accepted, damping, retries))
        log.debug("iteration %d: %.6g -> %.6g (accepted=%s)", s, before.total, after.total, accepted)
        if (
            accepted
            and isinstance(prior, NoPrior)
            and before.total - after.total <= cfg.lm.rel_tol * before.total
        ):
            break

    Xs = Trajectory(params.dt, state.X)
    latent = trajectory_to_latent(Xs, params)[0]
    raw = LatentSequence.from_array(state.latent) if state.latent is not None else None
    final_problem = Problem(obs, None, cfg)
    _, assignment = final_problem.energy(state)
    return OptimizeResult(
        Xs, state.cameras, latent, raw, control_inputs(latent, params), assignment, trace
    )
