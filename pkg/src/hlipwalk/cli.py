"""Command-line entry point: run, estimate-w, rpi, plot, sweep.

Exit codes: 0 success, 2 bad input (config, missing files), 3 simulation or
solver failure (partial outputs are still written), 4 unstable closed loop.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .hlip import HlipParams, LqrWeights, NumericalFailureError, dlqr_gain, s2s_matrices
from .plotting import Panel, write_svg
from .results import (CONFIG_JSON, E_JSON, STEPS_CSV, SUMMARY_JSON, TRAJECTORY_CSV, W_JSON,
                      column, read_csv, write_run, write_w_samples)
from .sim import load_w, run_scenario, save_w
from .zonotope import (InvalidInputError, direction_grid, estimate_w, invariance_margins,
                       mrpi_outer, polygon_vertices, project)

log = logging.getLogger("hlipwalk")

EXIT_OK, EXIT_INPUT, EXIT_FAILURE, EXIT_UNSTABLE = 0, 2, 3, 4
PLOT_STRIDE = 10  # trajectory rows per plotted point


def _setup_logging() -> None:
    level = os.environ.get("HLIPWALK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load(path: str, seed: int | None) -> ScenarioConfig:
    cfg = load_config(path)
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    return cfg


def _out_dir(cfg: ScenarioConfig, out: str | None) -> FsPath:
    if out:
        return FsPath(out)
    return FsPath(cfg.output_dir or FsPath("runs") / cfg.name)


def _input_error(exc: Exception) -> int:
    print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


def run_config(config: str, out: str | None = None, seed: int | None = None,
               plots: bool = True) -> int:
    try:
        cfg = _load(config, seed)
    except (ConfigError, OSError) as exc:
        return _input_error(exc)
    out_dir = _out_dir(cfg, out)
    try:
        result = run_scenario(cfg)
    except InvalidInputError as exc:
        print(f"error: closed loop is not stable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except OSError as exc:
        return _input_error(exc)
    write_run(result, cfg, out_dir)
    if plots:
        plot_run(out_dir)
    if not result.ok:
        print(f"error: {result.message}; partial outputs in {out_dir}", file=sys.stderr)
        return EXIT_FAILURE
    if result.summary["mpc_fallbacks"]:
        print(f"error: footstep QP failed on {result.summary['mpc_fallbacks']} steps; "
              f"outputs in {out_dir}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"{cfg.name}: {result.summary['steps']} steps, path RMS error "
          f"{result.summary['path_error_rms']:.4f} m -> {out_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    return run_config(args.config, args.out, args.seed, plots=not args.no_plots)


def cmd_estimate_w(args) -> int:
    try:
        cfg = _load(args.config, args.seed)
    except (ConfigError, OSError) as exc:
        return _input_error(exc)
    margin = cfg.disturbance.margin if args.margin is None else args.margin
    if margin < 0:
        return _input_error(ValueError("--margin must be non-negative"))
    result = run_scenario(cfg.model_copy(update={"disturbance": cfg.disturbance.model_copy(
        update={"w_file": None, "margin": margin})}))
    out = _out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not result.steps:
        print(f"error: no steps completed: {result.message}", file=sys.stderr)
        return EXIT_FAILURE
    W = {p: estimate_w(result.w_samples(p), margin) for p in ("x", "y")}
    save_w(W, out / W_JSON)
    write_w_samples(result, out / "w_samples.csv")
    if not result.ok:
        print(f"error: {result.message}; W from {len(result.steps)} partial steps", file=sys.stderr)
        return EXIT_FAILURE
    print(f"W from {len(result.steps)} steps (margin {margin}) -> {out / W_JSON}")
    return EXIT_OK


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def cmd_rpi(args) -> int:
    try:
        W = load_w(args.w)
        params = load_config(args.config).hlip_params() if args.config else HlipParams()
        M = s2s_matrices(params)
        if args.gain is not None:
            K = _floats(args.gain).reshape(1, 3)
        else:
            Q = np.diag(_floats(args.q)) if args.q else np.eye(3)
            K = dlqr_gain(M.A, M.B, LqrWeights(Q, args.r))
    except (OSError, KeyError, ValueError, ConfigError) as exc:
        return _input_error(exc)
    except NumericalFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    Acl = M.A + M.B @ K
    rho = float(max(abs(np.linalg.eigvals(Acl))))
    if rho >= 1.0:
        print(f"error: closed loop spectral radius {rho:.6f} >= 1", file=sys.stderr)
        return EXIT_UNSTABLE
    out = FsPath(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    E = {p: mrpi_outer(Acl, W[p], eps=args.eps) for p in ("x", "y")}
    save_w(E, out / E_JSON)
    D = direction_grid(3)
    cert = {"spectral_radius": rho, "gain": K.ravel().tolist(), "directions": D.tolist()}
    for p in ("x", "y"):
        m = invariance_margins(Acl, E[p], W[p], D)
        cert[p] = {"margins": m.tolist(), "min_margin": float(m.min()),
                   "certified": bool(m.min() >= -1e-3)}
    (out / "certificate.json").write_text(json.dumps(cert, indent=2) + "\n")
    ok = cert["x"]["certified"] and cert["y"]["certified"]
    print(f"E written to {out / E_JSON}; certificate {'passed' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_FAILURE


def plot_run(run_dir) -> int:
    run = FsPath(run_dir)
    needed = [run / TRAJECTORY_CSV, run / STEPS_CSV, run / SUMMARY_JSON, run / CONFIG_JSON]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        print(f"error: missing run files: {', '.join(missing)}", file=sys.stderr)
        return EXIT_INPUT
    traj = read_csv(run / TRAJECTORY_CSV)
    steps = read_csv(run / STEPS_CSV)
    summary = json.loads((run / SUMMARY_JSON).read_text())
    cfg = load_config(run / CONFIG_JSON)
    path = cfg.build_path()

    t = column(traj, "t")[::PLOT_STRIDE]
    ts = np.linspace(0.0, t[-1] if t.size else path.T_end, 600)
    refs = [path.sample(ti) for ti in ts]
    rx = np.array([r.r[0] for r in refs])
    ry = np.array([r.r[1] for r in refs])
    by_plane = {p: [i for i, v in enumerate(steps.get("plane", [])) if v == p] for p in "xy"}

    def plane_col(name, p):
        vals = steps[name]
        return np.array([float(vals[i]) for i in by_plane[p]])

    overhead = Panel("Overhead path", "x [m]", "y [m]", equal=True)
    overhead.line(rx, ry, "desired", css="desired")
    overhead.line(plane_col("c_ref", "x"), plane_col("c_ref", "y"), "H-LIP", css="hlip")
    overhead.line(column(traj, "com_x")[::PLOT_STRIDE], column(traj, "com_y")[::PLOT_STRIDE],
                  "robot", css="robot")
    for ob in cfg.obstacles:
        ang = np.linspace(0, 2 * np.pi, 60)
        overhead.polygon(ob.position[0] + ob.d * np.cos(ang), ob.position[1] + ob.d * np.sin(ang),
                         "obstacle", color="#555", css="obstacle")
    write_svg(run / "path.svg", [overhead])

    panels = []
    for axis, name in ((0, "x"), (1, "y")):
        pp = Panel(f"COM {name}", "t [s]", f"{name} [m]")
        pp.line(ts, [r.r[axis] for r in refs], "desired")
        pp.line(t, column(traj, f"com_{name}")[::PLOT_STRIDE], "robot")
        vp = Panel(f"COM velocity {name}", "t [s]", f"v{name} [m/s]")
        vp.line(ts, [r.rdot[axis] for r in refs], "desired")
        vp.line(t, column(traj, f"vel_{name}")[::PLOT_STRIDE], "robot")
        panels += [pp, vp]
    write_svg(run / "timeseries.svg", panels, cols=2)

    if not by_plane["x"]:
        warnings.warn("steps.csv has no rows; step-size plot omitted", stacklevel=2)
    else:
        sp = []
        for p in "xy":
            panel = Panel(f"Step size {p}", "step k", f"u{p} [m]")
            k = plane_col("k", p)
            panel.line(k, plane_col("u_cmd", p), "commanded")
            panel.scatter(k, plane_col("u_realized", p), "realized")
            sp.append(panel)
        write_svg(run / "steps.svg", sp, cols=2)

    E = load_w(run / E_JSON) if (run / E_JSON).exists() else None
    ep = []
    for p in "xy":
        panel = Panel(f"Pre-impact error, plane {p}", "e_p [m]", "e_v [m/s]")
        if E is not None:
            verts = polygon_vertices(project(E[p], (1, 2)))
            panel.polygon(np.append(verts[:, 0], verts[0, 0]), np.append(verts[:, 1], verts[0, 1]),
                          "E shadow", color="#999", css="set")
        if by_plane[p]:
            ex = plane_col("p", p) - plane_col("p_ref", p)
            ev = plane_col("v", p) - plane_col("v_ref", p)
            flags = [steps["e_in_E"][i] for i in by_plane[p]]
            outside = np.array([f == "0" for f in flags])
            panel.scatter(ex[~outside], ev[~outside], "inside E", css="inside")
            panel.scatter(ex[outside], ev[outside], f"outside E ({outside.sum()})",
                          color="#d62728", css="outside")
            if outside.sum() != summary.get(f"outside_E_{p}", outside.sum()):
                log.warning("outside-E count for plane %s differs from summary.json", p)
        ep.append(panel)
    write_svg(run / "errors.svg", ep, cols=2)
    return EXIT_OK


def cmd_plot(args) -> int:
    return plot_run(args.run_dir)


def _sweep_job(job):
    config, out, seed = job
    return config, run_config(config, out, seed)


def cmd_sweep(args) -> int:
    root = FsPath(args.out or "runs")
    jobs = []
    for c in args.config:
        jobs.append((c, str(root / FsPath(c).stem), args.seed))
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    root.mkdir(parents=True, exist_ok=True)
    table = {c: code for c, code in results}
    (root / "sweep.json").write_text(json.dumps(table, indent=2) + "\n")
    return max(table.values(), default=EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hlipwalk", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario and write logs and plots")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("estimate-w", help="estimate the disturbance set W from a calibration run")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.set_defaults(func=cmd_estimate_w)

    p = sub.add_parser("rpi", help="compute the error invariant set E for a W file")
    p.add_argument("--w", required=True, help="W JSON from estimate-w")
    p.add_argument("--config", help="scenario config supplying the H-LIP parameters")
    p.add_argument("--q", help="diagonal of Q, comma separated")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--gain", help="explicit feedback gain K, comma separated (overrides --q/--r)")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rpi)

    p = sub.add_parser("plot", help="render SVG plots for a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("sweep", help="run several scenario files")
    p.add_argument("--config", nargs="+", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
