"""Metrics and experiment drivers comparing the reconstruction methods."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .association import initialize_trajectory
from .dynamics import Trajectory
from .priors import Dynamics, GaussianSmooth, KalmanCA, NoPrior, SplineSmooth
from .scene import align_similarity
from .simulator import PerturbConfig, simulate
from .solver import SolverConfig, optimize

METHODS = ("No-Opt", "BA", "BA-pGS", "BA-pSS", "BA-pKF", "BA-pDM", "BA-pDM-single")
THRESHOLDS = np.round(np.arange(0, 101) * 0.05, 10)

_METHOD_PRIORS = {
    "BA": NoPrior,
    "BA-pGS": GaussianSmooth,
    "BA-pSS": SplineSmooth,
    "BA-pKF": KalmanCA,
    "BA-pDM": Dynamics,
    "BA-pDM-single": Dynamics,
}


def _positions(X):
    return np.asarray(getattr(X, "positions", X), dtype=float)


@dataclass(eq=False)
class TrajectoryMetrics:
    rmse: float
    per_point_errors: np.ndarray
    threshold_curve: np.ndarray  # (n, 2): threshold, fraction within it


@dataclass(frozen=True)
class ControlMetrics:
    rmse_u: float
    rmse_phi: float
    rmse_theta: float
    correlation_u: float
    hf_energy_u: float


def trajectory_metrics(est, gt):
    """RMSE and threshold curve after similarity-aligning ``est`` onto ``gt``."""
    est, gt = _positions(est), _positions(gt)
    if est.shape != gt.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {gt.shape}")
    tf = align_similarity(est, gt)
    err = np.linalg.norm(tf.apply(est) - gt, axis=1)
    rmse = float(np.sqrt(np.mean(err**2)))
    frac = np.array([np.mean(err <= th) for th in THRESHOLDS])
    return TrajectoryMetrics(rmse, err, np.stack([THRESHOLDS, frac], axis=1))


def hf_energy(signal):
    """Spectral energy of the mean-removed signal above a quarter of Nyquist."""
    x = np.asarray(signal, dtype=float)
    x = x - x.mean()
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x))  # cycles per sample, Nyquist = 0.5
    return float(np.sum(np.abs(spec[freqs > 0.125]) ** 2) / len(x))


def pearson(a, b):
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0:
        return 0.0
    return float(np.clip(np.sum(a * b) / den, -1.0, 1.0))


def control_metrics(est, gt):
    """Compare estimated latent sequences; arguments are ``(latent, controls)`` pairs
    (a bare ``LatentSequence`` is accepted too)."""
    le = est[0] if isinstance(est, tuple) else est
    lg = gt[0] if isinstance(gt, tuple) else gt
    if len(le) != len(lg):
        raise ValueError(f"length mismatch: {len(le)} vs {len(lg)}")
    rm = lambda a, b: float(np.sqrt(np.mean((a - b) ** 2)))
    return ControlMetrics(
        rm(le.u, lg.u),
        rm(le.phi, lg.phi),
        rm(le.theta, lg.theta),
        pearson(le.u, lg.u),
        hf_energy(le.u),
    )


# ---------------------------------------------------------------------------
# method runs


def solver_config_for(method, base=None):
    base = base or SolverConfig()
    cls = _METHOD_PRIORS[method]
    if isinstance(base.prior, cls):
        return base
    return replace(base, prior=cls())


@dataclass(eq=False)
class MethodRun:
    method: str
    X: Trajectory
    runtime: float
    result: object = None  # OptimizeResult, None for No-Opt


def run_method(method, obs, cameras, X0, assignment0, solver=None):
    """Run one method from a common initialization."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    t0 = time.perf_counter()
    if method == "No-Opt":
        return MethodRun(method, X0, time.perf_counter() - t0)
    cfg = solver_config_for(method, solver)
    if method == "BA-pDM-single":
        obs = obs.select(assignment0)
    res = optimize(obs, cameras, X0, cfg)
    return MethodRun(method, res.X, time.perf_counter() - t0, res)


def initialize(scenario, tri=None, init_noise=0.0):
    """Triangulated initialization, optionally with i.i.d. Gaussian noise added."""
    dt = scenario.config.quad.dt
    X0, a0 = initialize_trajectory(scenario.obs, scenario.cameras_init, tri, dt)
    if init_noise > 0:
        rng = np.random.default_rng([scenario.config.seed, 7919])
        X0 = Trajectory(dt, X0.positions + rng.normal(0.0, init_noise, X0.positions.shape))
    return X0, a0


@dataclass(eq=False)
class SweepResult:
    rows: list = field(default_factory=list)
    keys: tuple = ("sigma_px", "sigma_p", "sigma_o")

    def cell(self, row):
        return tuple(row[k] for k in self.keys)

    def aggregate(self):
        """``{(method, cell): (mean, std, n)}`` of RMSE."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r["method"], self.cell(r)), []).append(r["rmse"])
        return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}

    def mean(self, method, cell=None):
        vals = [r["rmse"] for r in self.rows if r["method"] == method and (cell is None or self.cell(r) == cell)]
        return float(np.mean(vals))

    def check_complete(self, n_seeds):
        bad = [k for k, (_, _, n) in self.aggregate().items() if n != n_seeds]
        if bad:
            raise ValueError(f"cells with missing seeds: {bad}")


def run_method_suite(sim, methods=METHODS, seeds=range(10), solver=None, tri=None, init_noise=0.0):
    """Run ``methods`` on ``simulate(sim with seed)`` for every seed."""
    out = SweepResult()
    for seed in seeds:
        sc = simulate(replace(sim, seed=int(seed)))
        X0, a0 = initialize(sc, tri, init_noise)
        for m in methods:
            run = run_method(m, sc.obs, sc.cameras_init, X0, a0, solver)
            out.rows.append(
                {
                    "method": m,
                    "sigma_px": sim.noise.sigma_px,
                    "sigma_p": sim.perturb.sigma_p,
                    "sigma_o": sim.perturb.sigma_o,
                    "seed": int(seed),
                    "rmse": trajectory_metrics(run.X, sc.truth.X).rmse,
                    "runtime": run.runtime,
                }
            )
    return out


def noise_sweep(sim, grid, seeds=range(10), methods=METHODS, solver=None, tri=None):
    """Run the suite for each grid cell.

    ``grid`` is a list of dicts with any of ``sigma_px``, ``sigma_p``,
    ``sigma_o``, or a pair ``(sigma_p values, sigma_o values)`` whose product
    is swept.
    """
    if isinstance(grid, tuple) and len(grid) == 2:
        grid = [{"sigma_p": p, "sigma_o": o} for p, o in itertools.product(*grid)]
    if not grid:
        raise ValueError("empty grid")
    out = SweepResult()
    for cell in grid:
        noise = replace(sim.noise, sigma_px=cell.get("sigma_px", sim.noise.sigma_px))
        pert = PerturbConfig(cell.get("sigma_p", sim.perturb.sigma_p), cell.get("sigma_o", sim.perturb.sigma_o))
        res = run_method_suite(replace(sim, noise=noise, perturb=pert), methods, seeds, solver, tri)
        out.rows.extend(res.rows)
    return out


@dataclass(frozen=True)
class SensitivityRow:
    lam: float
    sigma: float
    seed: int
    metrics: ControlMetrics


def recovered_latent(result, params):
    """Latent sequence reported for a solver result.

    The optimized latent unknowns when the dynamics prior ran; recomputing
    the latent from the trajectory twice-differentiates pixel noise.
    """
    if result.latent_optimized is not None:
        return result.latent_optimized
    return result.latent


def prior_sensitivity_sweep(sim, cells, seeds=(0,), solver=None, tri=None):
    """BA-pDM control metrics for each ``(lam, sigma)`` cell on a fixed scene.

    ``cells`` is a list of pairs or ``(lam values, sigma values)`` whose
    product is used.
    """
    if isinstance(cells, tuple) and len(cells) == 2 and np.ndim(cells[0]) == 1:
        cells = list(itertools.product(*cells))
    if not cells:
        raise ValueError("empty grid")
    base = solver or SolverConfig()
    rows = []
    for seed in seeds:
        sc = simulate(replace(sim, seed=int(seed)))
        X0, _ = initialize(sc, tri)
        for lam, sigma in cells:
            prior = replace(base.prior, sigma_latent=sigma) if isinstance(base.prior, Dynamics) else Dynamics(sigma_latent=sigma)
            cfg = replace(base, lam=lam, prior=prior)
            res = optimize(sc.obs, sc.cameras_init, X0, cfg)
            m = control_metrics(recovered_latent(res, cfg.params), sc.truth.latent)
            rows.append(SensitivityRow(float(lam), float(sigma), int(seed), m))
    return rows
