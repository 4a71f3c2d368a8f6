"""Run directory layout: CSV/JSON writers and readers."""
from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath

import numpy as np

from .sim import ScenarioResult, save_w

TRAJECTORY_COLUMNS = ("t", "com_x", "com_y", "com_z", "vel_x", "vel_y", "vel_z",
                      "stance_foot_x", "stance_foot_y", "heading", "phase")
STEP_COLUMNS = ("k", "t", "plane", "c", "p", "v", "c_ref", "p_ref", "v_ref", "u_cmd",
                "u_realized", "w0", "w1", "w2", "e_in_E")
W_SAMPLE_COLUMNS = ("k", "plane", "w0", "w1", "w2")

TRAJECTORY_CSV = "trajectory.csv"
STEPS_CSV = "steps.csv"
SUMMARY_JSON = "summary.json"
CONFIG_JSON = "config.json"
W_JSON = "w.json"
E_JSON = "e_sets.json"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def step_rows(result: ScenarioResult):
    for i, s in enumerate(result.steps):
        pre = s.pre
        for j, plane in enumerate(("x", "y")):
            robot = pre.x_robot if plane == "x" else pre.y_robot
            ref = pre.x_hlip if plane == "x" else pre.y_hlip
            w = s.w_x if plane == "x" else s.w_y
            flags = result.in_E[plane]
            inside = "" if i >= len(flags) else int(flags[i])
            yield (pre.k, pre.t, plane, *robot, *ref, pre.u_cmd[j], pre.u_real[j], *w, inside)


def write_run(result: ScenarioResult, cfg, out_dir) -> FsPath:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / TRAJECTORY_CSV, TRAJECTORY_COLUMNS, result.trajectory)
    _write_csv(out / STEPS_CSV, STEP_COLUMNS, step_rows(result))
    w_file = cfg.w_path()
    if w_file is not None:
        cfg = cfg.model_copy(update={"disturbance": cfg.disturbance.model_copy(
            update={"w_file": str(w_file.resolve())})})
    (out / CONFIG_JSON).write_text(cfg.to_json() + "\n")
    summary = dict(result.summary)
    for plane in ("x", "y"):
        summary[f"errors_{plane}"] = result.errors(plane).tolist()
    (out / SUMMARY_JSON).write_text(json.dumps(summary, indent=2) + "\n")
    if result.W is not None:
        save_w(result.W, out / W_JSON)
    if result.E is not None:
        save_w(result.E, out / E_JSON)
    return out


def write_w_samples(result: ScenarioResult, path) -> None:
    rows = []
    for s in result.steps:
        rows.append((s.pre.k, "x", *s.w_x))
        rows.append((s.pre.k, "y", *s.w_y))
    _write_csv(path, W_SAMPLE_COLUMNS, rows)


def read_csv(path) -> dict[str, list[str]]:
    """Columns by header name."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[str]] = {name: [] for name in (reader.fieldnames or [])}
        for row in reader:
            for k, v in row.items():
                cols[k].append(v)
    return cols


def column(cols: dict[str, list[str]], name: str) -> np.ndarray:
    return np.array([float(v) for v in cols[name]])

