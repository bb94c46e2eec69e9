"""Brute-force references shared by the association and acceptance tests."""
import itertools
from dataclasses import replace

import numpy as np

from flightba.dynamics import trajectory_to_latent
from flightba.errors import DegenerateGeometry, NonPositiveDepth
from flightba.losses import RobustLoss
from flightba.priors import Dynamics, compute_targets
from flightba.scene import Camera, Intrinsics, project, triangulate_two_view
from flightba.simulator import NoiseConfig, SimConfig, simulate
from flightba.solver import Problem, ProblemState, SolverConfig

K = Intrinsics(1000.0, 1000.0, 640.0, 360.0, width=1280, height=720)
HUBER = RobustLoss.huber(2.0)


def ring(n=4, radius=8.0):
    cams = []
    for j in range(n):
        a = 2 * np.pi * j / n + 0.3
        c = [radius * np.cos(a), radius * np.sin(a), 1.0 + 0.5 * j]
        cams.append(Camera.look_at(j, K, c, [0.0, 0.0, 0.0]))
    return cams


def cluttered_sets(rng, cams, X, max_outliers=3, missing=0.0):
    """True projection plus uniform outliers, shuffled; returns sets and true indices."""
    sets, true_k = [], []
    for c in cams:
        if rng.random() < missing:
            sets.append(np.zeros((0, 2)))
            true_k.append(-1)
            continue
        out = rng.uniform([0, 0], [K.width, K.height], (rng.integers(0, max_outliers + 1), 2))
        pts = np.vstack([project(c, X)[None], out])
        perm = rng.permutation(len(pts))
        sets.append(pts[perm])
        true_k.append(int(np.flatnonzero(perm == 0)[0]))
    return sets, true_k


def oracle_score(cams, sets, x):
    """Independent scorer: loop over cameras, min over candidates via scene.project."""
    total = 0.0
    for c, s in zip(cams, sets):
        if len(s) == 0:
            continue
        try:
            uv = project(c, x)
        except NonPositiveDepth:
            total += HUBER.saturation
            continue
        total += min(float(HUBER(np.sum((p - uv) ** 2))) for p in s)
    return total


def exhaustive_oracle(cams, sets):
    """Every camera pair x candidate pair, triangulated and scored; the best score."""
    best = np.inf
    for a, b in itertools.combinations(range(len(cams)), 2):
        for pa in sets[a]:
            for pb in sets[b]:
                try:
                    x = triangulate_two_view(pa, cams[a], pb, cams[b])
                except DegenerateGeometry:
                    continue
                best = min(best, oracle_score(cams, sets, x))
    return best


# -- solver states and finite differences ---------------------------------------------------

SMALL = SimConfig(T=12, n_cameras=4, noise=NoiseConfig(sigma_px=1.0, outlier_max=2))


def small_state(seed, prior):
    """Perturbed cameras, jittered trajectory and latent on a short scene."""
    sc = simulate(replace(SMALL, seed=seed))
    rng = np.random.default_rng(seed)
    cfg = SolverConfig(prior=prior, params=sc.config.quad)
    X_prev = sc.truth.X.positions + rng.normal(0, 0.02, (SMALL.T, 3))
    targets = compute_targets(cfg.active_prior, X_prev, cfg.params, cfg.lam)
    X = sc.truth.X.positions + rng.normal(0, 0.05, (SMALL.T, 3))
    cams = [c.with_pose(c.quat, c.translation + rng.normal(0, 0.05, 3)) for c in sc.truth.cameras]
    latent = None
    if isinstance(prior, Dynamics):
        latent = trajectory_to_latent(X_prev, cfg.params)[0].as_array()
        latent = latent + rng.normal(0, [0.05, 0.05, 0.3], latent.shape)
    problem = Problem(sc.obs, targets, cfg)
    state = ProblemState(cams, X, latent)
    _, assignment = problem.energy(state)
    state.assignment = assignment
    return problem, state


def residual_fn(problem, family, assignment):
    def f(state):
        if family == "reprojection":
            return problem.reprojection_residuals(state, assignment)[1].ravel()
        if family == "consistency":
            return problem.consistency_residuals(state).ravel()
        if family == "anchors":
            return problem.anchor_residuals(state).ravel()
        return problem.position_residuals(state).ravel()

    return f


def jacobian_errors(problem, state, h=1e-6):
    """Max normwise relative error of each analytic Jacobian against central differences."""
    fams = problem.dense_jacobians(state, state.assignment)
    n = fams["reprojection"][1].shape[1]
    out = {}
    for family, (r0, J) in fams.items():
        f = residual_fn(problem, family, state.assignment)
        assert np.array_equal(f(state), r0)
        num = np.empty_like(J)
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            num[:, k] = (f(problem.retract_vector(state, e)) - f(problem.retract_vector(state, -e))) / (2 * h)
        out[family] = np.abs(J - num).max() / max(np.abs(num).max(), 1e-12)
    return out
