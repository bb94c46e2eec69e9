"""Command-line interface: ``flightba {simulate,triangulate,optimize,evaluate,sweep,plot}``.

Every command writes a ``manifest.json`` next to its outputs. Set
``FLIGHTBA_LOG_LEVEL`` (e.g. ``DEBUG``) for progress logging.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .association import TriangulationConfig, initialize_trajectory
from .errors import FlightBAError
from .evaluation import METHODS, control_metrics, noise_sweep, trajectory_metrics
from .priors import Dynamics, GaussianSmooth, prior_from_name
from .simulator import SimConfig, simulate
from .solver import Problem, ProblemState, SolverConfig, optimize
from .svgplot import heatmap, line_chart

log = logging.getLogger("flightba")


def _outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    cfg = SimConfig()
    if args.config:
        cfg = io.dataclass_from_dict(SimConfig, io.load_json(args.config), args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = _outdir(args.out)
    truth_dir = _outdir(out / "truth")
    log.info("simulating T=%d, %d cameras, seed %d", cfg.T, cfg.n_cameras, cfg.seed)
    sc = simulate(cfg)
    gt = sc.truth
    files = {
        "config": out / "config.json",
        "scene": out / "scene.json",
        "detections": out / "detections.csv",
        "truth_scene": truth_dir / "scene.json",
        "truth_trajectory": truth_dir / "trajectory.csv",
        "truth_latent": truth_dir / "latent.csv",
        "truth_controls": truth_dir / "controls.csv",
        "truth_assignment": truth_dir / "assignment.csv",
    }
    io.dump_json(io.dataclass_to_dict(cfg), files["config"])
    io.write_scene(files["scene"], sc.cameras_init, cfg.quad, cfg.volume)
    io.write_detections(files["detections"], sc.obs)
    io.write_scene(files["truth_scene"], gt.cameras, cfg.quad, cfg.volume)
    io.write_trajectory(files["truth_trajectory"], gt.X)
    io.write_latent(files["truth_latent"], gt.latent)
    io.write_controls(files["truth_controls"], gt.controls)
    io.write_assignment(files["truth_assignment"], gt.assignment)
    io.write_manifest(out / "manifest.json", "simulate", io.dataclass_to_dict(cfg), cfg.seed, files.values())
    return 0


def _load_inputs(args):
    cams, params, volume = io.read_scene(args.scene)
    obs = io.read_detections(args.detections, len(cams))
    obs.validate_bounds(cams)
    return cams, params, volume, obs


def cmd_triangulate(args):
    cams, params, _, obs = _load_inputs(args)
    if args.frames is not None:
        obs = _resize(obs, args.frames)
    tri = TriangulationConfig(n_iter=args.iterations, seed=args.seed)
    X, assignment = initialize_trajectory(obs, cams, tri, params.dt)
    out = _outdir(args.out)
    files = [out / "trajectory.csv", out / "assignment.csv"]
    io.write_trajectory(files[0], X)
    io.write_assignment(files[1], assignment)
    cfg = {"n_iter": tri.n_iter, "seed": tri.seed, "frames": obs.n_frames}
    io.write_manifest(out / "manifest.json", "triangulate", cfg, tri.seed, files, [args.scene, args.detections])
    return 0


def _resize(obs, n_frames):
    from .association import ObservationTable

    if n_frames < obs.n_frames:
        raise ValueError(f"detections reference frame {obs.n_frames} beyond --frames {n_frames}")
    return ObservationTable(obs.n_cameras, n_frames, obs.as_dict(), obs.cap)


def _solver_config(args, params):
    cfg = SolverConfig(params=params)
    if args.config:
        d = io.load_json(args.config)
        d.pop("params", None)
        cfg = replace(io.dataclass_from_dict(SolverConfig, d, args.config), params=params)
    prior = prior_from_name(args.prior) if args.prior else cfg.prior
    if args.prior and isinstance(cfg.prior, type(prior)):
        prior = cfg.prior
    if args.sigma is not None:
        if isinstance(prior, Dynamics):
            prior = replace(prior, sigma_latent=args.sigma)
        elif isinstance(prior, GaussianSmooth):
            prior = replace(prior, sigma=args.sigma)
        else:
            raise ValueError(f"--sigma does not apply to prior {prior.name!r}")
    cfg = replace(cfg, prior=prior)
    if args.lam is not None:
        cfg = replace(cfg, lam=args.lam)
    if args.iterations is not None:
        cfg = replace(cfg, outer_iterations=args.iterations)
    return cfg


def cmd_optimize(args):
    cams, params, volume, obs = _load_inputs(args)
    X0 = io.read_trajectory(args.init, params.dt)
    if len(X0) < obs.n_frames:
        raise ValueError(f"initial trajectory has {len(X0)} frames, detections reference {obs.n_frames}")
    obs = _resize(obs, len(X0))
    cfg = _solver_config(args, params)
    if args.single_detection:
        if args.assignment:
            a0 = io.read_assignment(args.assignment, obs.n_frames, obs.n_cameras)
        else:
            problem = Problem(obs, None, cfg)
            _, a0 = problem.energy(ProblemState(cams, X0.positions))
        obs = obs.select(a0)
    log.info("optimizing with prior %s, lambda %g, %d iterations", cfg.active_prior.name, cfg.lam, cfg.outer_iterations)
    res = optimize(obs, cams, X0, cfg)
    out = _outdir(args.out)
    files = [
        out / "trajectory.csv",
        out / "latent.csv",
        out / "controls.csv",
        out / "cameras.json",
        out / "trace.csv",
        out / "assignment.csv",
    ]
    io.write_trajectory(files[0], res.X)
    io.write_latent(files[1], res.latent)
    io.write_controls(files[2], res.controls)
    io.write_scene(files[3], res.cameras, params, volume)
    io.write_trace(files[4], res.trace)
    io.write_assignment(files[5], res.assignment)
    if res.latent_optimized is not None:
        files.append(out / "latent_optimized.csv")
        io.write_latent(files[-1], res.latent_optimized)
    conf = io.dataclass_to_dict(cfg)
    conf["single_detection"] = bool(args.single_detection)
    inputs = [args.scene, args.detections, args.init] + ([args.assignment] if args.assignment else [])
    io.write_manifest(out / "manifest.json", "optimize", conf, None, files, inputs)
    return 0


def cmd_evaluate(args):
    est = io.read_trajectory(args.estimate, 1.0)
    gt = io.read_trajectory(args.truth, 1.0)
    m = trajectory_metrics(est, gt)
    doc = {
        "rmse": m.rmse,
        "max_error": float(m.per_point_errors.max()),
        "median_error": float(np.median(m.per_point_errors)),
        "threshold_curve": m.threshold_curve.tolist(),
    }
    inputs = [args.estimate, args.truth]
    if args.latent or args.truth_latent:
        if not (args.latent and args.truth_latent):
            raise ValueError("--latent and --truth-latent must be given together")
        c = control_metrics(io.read_latent(args.latent), io.read_latent(args.truth_latent))
        doc["controls"] = {k: getattr(c, k) for k in c.__dataclass_fields__}
        inputs += [args.latent, args.truth_latent]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.dump_json(doc, out)
    io.write_manifest(out.with_name(out.stem + ".manifest.json"), "evaluate", {}, None, [out], inputs)
    print(f"rmse {m.rmse:.6g} m")
    return 0


_SWEEP_KEYS = ("sim", "solver", "grid", "seeds", "methods")


def cmd_sweep(args):
    d = io.load_json(args.config)
    io._check_keys(d, _SWEEP_KEYS, "sweep", args.config, required=("grid",))
    sim = io.dataclass_from_dict(SimConfig, d.get("sim", {}), args.config, "sweep.sim")
    solver = SolverConfig(params=sim.quad)
    if "solver" in d:
        s = dict(d["solver"])
        s.pop("params", None)
        solver = replace(io.dataclass_from_dict(SolverConfig, s, args.config, "sweep.solver"), params=sim.quad)
    seeds = d.get("seeds", 10)
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    methods = d.get("methods", list(METHODS))
    unknown = sorted(set(methods) - set(METHODS))
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}")
    res = noise_sweep(sim, d["grid"], seeds, methods, solver)
    res.check_complete(len(seeds))
    out = _outdir(args.out)
    files = [out / "results.csv", out / "summary.json"]
    io.write_results(files[0], res.rows, runtime=args.timings)
    summary = [
        {"method": m, "cell": dict(zip(res.keys, cell)), "mean": mu, "std": sd, "n": n}
        for (m, cell), (mu, sd, n) in sorted(res.aggregate().items())
    ]
    io.dump_json({"cells": summary}, files[1])
    io.write_manifest(out / "manifest.json", "sweep", d, seeds, files, [args.config])
    for row in summary:
        print(f"{row['method']:>14s} {row['cell']} rmse {row['mean']:.4g} +- {row['std']:.2g}")
    return 0


def cmd_plot(args):
    out = Path(args.out)
    if args.kind == "signal":
        if not args.latent:
            raise ValueError("--kind signal needs one or more --latent files")
        series = {}
        for path in args.latent:
            lat = io.read_latent(path)
            series[Path(path).parent.name or Path(path).stem] = (np.arange(1, len(lat) + 1), lat.u)
        fig = line_chart(series, "Throttle", "frame", "u (N)")
    else:
        if not args.results:
            raise ValueError(f"--kind {args.kind} needs --results")
        rows = io.read_results(args.results)
        if args.kind == "lines":
            cells = sorted({(r["sigma_px"], r["sigma_p"], r["sigma_o"]) for r in rows})
            series, errors = {}, {}
            for m in dict.fromkeys(r["method"] for r in rows):
                mu, sd = [], []
                for c in cells:
                    v = [r["rmse"] for r in rows if r["method"] == m and (r["sigma_px"], r["sigma_p"], r["sigma_o"]) == c]
                    mu.append(np.mean(v))
                    sd.append(np.std(v))
                series[m] = (np.arange(len(cells)), np.array(mu))
                errors[m] = np.array(sd)
            fig = line_chart(series, "Mean RMSE per noise cell", "cell", "RMSE (m)", errors)
        else:
            method = args.method or "BA-pDM"
            sel = [r for r in rows if r["method"] == method]
            if not sel:
                raise ValueError(f"no rows for method {method!r}")
            ps = sorted({r["sigma_p"] for r in sel})
            os_ = sorted({r["sigma_o"] for r in sel})
            grid = np.full((len(ps), len(os_)), np.nan)
            for i, p in enumerate(ps):
                for j, o in enumerate(os_):
                    v = [r["rmse"] for r in sel if r["sigma_p"] == p and r["sigma_o"] == o]
                    if v:
                        grid[i, j] = np.mean(v)
            fig = heatmap(grid, [f"{p:g}" for p in ps], [f"{o:g}" for o in os_], f"{method} mean RMSE (m)", "sigma_o (deg)", "sigma_p (m)")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.save(out)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="flightba", description="Multi-camera drone trajectory reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic scene")
    s.add_argument("--config", help="JSON simulation config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("triangulate", help="RANSAC initialization")
    s.add_argument("--scene", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--iterations", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, help="number of frames (default: last frame with detections)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("optimize", help="bundle adjustment with a trajectory prior")
    s.add_argument("--scene", required=True)
    s.add_argument("--detections", required=True)
    s.add_argument("--init", required=True, help="initial trajectory CSV")
    s.add_argument("--assignment", help="initial assignment CSV (for --single-detection)")
    s.add_argument("--prior", choices=["none", "gs", "ss", "kf", "dm"])
    s.add_argument("--single-detection", action="store_true", help="keep only the initially assigned candidate")
    s.add_argument("--config", help="JSON solver config")
    s.add_argument("--lam", type=float)
    s.add_argument("--sigma", type=float, help="smoothing width for gs/dm priors")
    s.add_argument("--iterations", type=int, help="outer iterations")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("evaluate", help="compare an estimate to ground truth")
    s.add_argument("--estimate", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--latent")
    s.add_argument("--truth-latent")
    s.add_argument("--out", required=True, help="metrics JSON path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a method comparison sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--timings", action="store_true", help="record wall-clock runtimes (not reproducible)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plot", help="write an SVG figure")
    s.add_argument("--kind", choices=["lines", "heatmap", "signal"], default="lines")
    s.add_argument("--results")
    s.add_argument("--method")
    s.add_argument("--latent", action="append")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    level = os.environ.get("FLIGHTBA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FlightBAError, ValueError, OSError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"flightba: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
