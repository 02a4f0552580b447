"""Command-line front end: ``hflow-lab <task> [flags]``.

Each task writes ``report.json`` plus CSV/field-file artifacts into the output
directory. Exit status: 0 all assertions pass, 1 an assertion failed,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, catalog, validation
from .errors import (
    ConfigurationError,
    ContinuationError,
    FieldFileError,
    IdentityViolation,
    SingularFrameError,
)
from .flows import cross_validate, deturck_pde_integrate, gauge_ode_integrate, hf_pde_integrate
from .frame_calculus import (
    algebroid_curvature,
    canonical_metric,
    gamma,
    homogeneous_operator,
    tilde_curvature,
    torsion,
)
from .grid_core import Chart, FrameField, export_csv, load, norm, save, to_csv
from .groupoid import develop, monodromy
from .validation import Check, check

OUT_ENV = "HFLOW_LAB_OUT"
DEFAULT_OUT = "hflow-out"

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# Defaults per task; every key is echoed into the report.
DEFAULTS = {
    "inspect": {"frame": "heisenberg", "res": None, "dim": 2},
    "flow": {"frame": "perturbation:seed=0,amp=0.1", "res": None, "dim": 2, "t_end": 0.05, "dt": 1e-3,
             "reference": "none", "snapshot_every": 0},
    "gauge-ode": {"frame": "perturbation:seed=0,amp=0.1", "res": None, "dim": 2, "t_end": 0.05, "dt": 1e-3,
                  "node": None},
    "develop": {"frame": "heisenberg", "res": None, "dim": 2, "from": None, "to": None, "target": None,
                "via": [], "steps": 1000, "loop": False, "tolerance": 1e-8},
    "validate": {"suite": "all", "tolerances": {}, "threads": 1},
    "cross-validate": {"frame": "perturbation:seed=0,amp=0.1", "res": None, "dim": 2, "t_end": 0.05,
                       "dt": 1e-3, "tolerance": 1e-5, "threads": 1},
}


class NumericalFailure(Exception):
    pass


# -- argument parsing ------------------------------------------------------------


def _vector(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _vertices(text):
    return [_vector(v) for v in text.split(";") if v.strip()]


def _common(p, frame=True):
    p.add_argument("--config", help="JSON file with task parameters; flags override it")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    if frame:
        p.add_argument("--frame", help="builtin name, name:key=val,..., perturbation:seed=..,amp=.., or file:PATH")
        p.add_argument("--res", type=int, help="grid resolution per axis (default 64 in 2D, 32 in 3D)")
        p.add_argument("--dim", type=int, help="dimension of the periodic chart for perturbation frames")


def build_parser():
    parser = argparse.ArgumentParser(prog="hflow-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hflow-lab {__version__}")
    sub = parser.add_subparsers(dest="task", required=True)

    p = sub.add_parser("inspect", help="differential invariants of a frame")
    _common(p)

    p = sub.add_parser("flow", help="integrate the homogeneous flow PDE")
    _common(p)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--reference", choices=["none", "zero", "initial"],
                   help="DeTurck reference connection (none = plain flow)")
    p.add_argument("--snapshot-every", dest="snapshot_every", type=int)

    p = sub.add_parser("gauge-ode", help="pointwise gauge ODE at one node")
    _common(p)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--node", type=lambda s: [int(v) for v in s.split(",")], help="grid index, e.g. 5,7")

    p = sub.add_parser("develop", help="continue a solution of the frame PDE along a path")
    _common(p)
    p.add_argument("--from", dest="from", type=_vector, help="start point p")
    p.add_argument("--to", type=_vector, help="end point of the path")
    p.add_argument("--target", type=_vector, help="value f(p) (default p)")
    p.add_argument("--via", type=_vertices, help="intermediate vertices 'x,y;x,y'")
    p.add_argument("--steps", type=int)
    p.add_argument("--loop", action="store_const", const=True, help="close the path back to p (monodromy)")
    p.add_argument("--tolerance", type=float)

    p = sub.add_parser("validate", help="run the property suite")
    _common(p, frame=False)
    p.add_argument("--suite", help=f"one of {sorted(validation.SUITES)} or all")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("cross-validate", help="flow PDE vs pointwise gauge ODE")
    _common(p)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--threads", type=int)
    return parser


def resolve_config(args):
    cfg = dict(DEFAULTS[args.task])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        task = loaded.pop("task", args.task)
        if task != args.task:
            raise ConfigurationError(f"config is for task {task!r}, not {args.task!r}")
        unknown = set(loaded) - set(cfg) - {"out"}
        if unknown:
            raise ConfigurationError(f"unknown config keys for {args.task}: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    out = args.out or cfg.pop("out", None) or os.environ.get(OUT_ENV) or DEFAULT_OUT
    cfg.pop("out", None)
    return cfg, Path(out)


# -- frame construction ----------------------------------------------------------


def build_frame(cfg):
    spec = cfg["frame"]
    if spec.startswith("file:"):
        chart, fields = load(spec[5:])
        frames = [f for f in fields.values() if isinstance(f, FrameField)]
        if not frames:
            raise ConfigurationError(f"{spec[5:]} holds no frame field")
        frame = fields.get("frame", frames[0])
        if not np.all(np.isfinite(frame.values)):
            raise NumericalFailure("frame file contains non-finite values")
        return FrameField.sampled(chart, frame.values), None
    name = spec.partition(":")[0]
    if name == "perturbation":
        dim = int(cfg.get("dim", 2))
        res = cfg["res"] or (64 if dim == 2 else 32)
        chart = Chart.periodic(res, 2 * np.pi, n=dim)
        recipe = catalog.parse_frame_spec(spec, chart)
    else:
        recipe = catalog.parse_frame_spec(spec)
        res = cfg["res"] or (64 if recipe.n == 2 else 32)
        chart = recipe.default_chart(res)
    return FrameField.from_recipe(recipe, chart), recipe


# -- tasks -----------------------------------------------------------------------


def _write(out, name, text, artifacts):
    path = out / name
    path.write_text(text, encoding="utf-8")
    artifacts.append(name)


def task_inspect(cfg, out, artifacts):
    frame, recipe = build_frame(cfg)
    conn = gamma(frame)
    T = torsion(conn)
    curv = algebroid_curvature(conn)
    h = homogeneous_operator(frame)
    metric = canonical_metric(frame)
    results = {
        "sup_gamma": norm(conn),
        "sup_torsion": norm(T),
        "sup_curvature": norm(curv),
        "sup_tilde_curvature": norm(tilde_curvature(conn)),
        "sup_h": norm(h),
        "min_det": float(np.abs(np.linalg.det(frame.values)).min()),
        "min_metric_eigenvalue": metric.min_eigenvalue,
        "torsion_at_center": _nonzero_components(T.values[tuple(s // 2 for s in frame.chart.shape)]),
    }
    analytic = recipe is not None
    tol = 1e-10 if analytic else 1e-6
    checks = [check("tilde-curvature", results["sup_tilde_curvature"], tol)]
    expected = recipe.expected if analytic else {}
    if expected.get("r_zero"):
        checks.append(check("algebroid-curvature", results["sup_curvature"], tol))
    for idx, val in expected.get("torsion", {}).items():
        comp = T.values[(Ellipsis,) + tuple(idx)]
        checks.append(check(f"torsion{list(idx)}", np.abs(comp - val).max(), tol, expected=val))
    save(out / "fields.json", {"frame": frame, "torsion": T, "h": h})
    artifacts.append("fields.json")
    export_csv(out / "invariants.csv", {"frame": frame, "torsion": T})
    artifacts.append("invariants.csv")
    return results, checks


def _nonzero_components(T, floor=1e-12):
    return {f"T[{i},{j},{k}]": float(T[i, j, k]) for i, j, k in np.ndindex(*T.shape) if abs(T[i, j, k]) > floor}


def task_flow(cfg, out, artifacts):
    frame, _ = build_frame(cfg)
    ref = cfg["reference"]
    if ref == "none":
        trace = hf_pde_integrate(frame, cfg["t_end"], cfg["dt"], cfg["snapshot_every"])
    else:
        reference = None if ref == "zero" else gamma(frame)
        trace = deturck_pde_integrate(frame, reference, cfg["t_end"], cfg["dt"], cfg["snapshot_every"])
    _write(out, "trace.csv", trace.to_csv(), artifacts)
    if trace.last_state is not None:
        save(out / "final.json", {"frame": trace.last_state.frame})
        artifacts.append("final.json")
    if trace.snapshots:
        snaps = {f"t={t!r}": FrameField(frame.chart, v) for t, v in sorted(trace.snapshots.items())}
        save(out / "snapshots.json", snaps)
        artifacts.append("snapshots.json")
    results = {"termination": trace.termination, "t_star": trace.t_star,
               "t_reached": trace.times[-1] if trace.times else 0.0,
               "final_sup_curvature": trace.sup_curvature[-1], "final_sup_h": trace.sup_h[-1]}
    if trace.termination == "step-failure":
        raise NumericalFailure(f"flow step failed after t = {results['t_reached']}")
    steps = np.diff(trace.times)
    return results, [check("times-increasing", int(np.sum(steps <= 0)), 0)]


def task_gauge_ode(cfg, out, artifacts):
    frame, _ = build_frame(cfg)
    node = tuple(cfg["node"]) if cfg["node"] is not None else tuple(s // 2 for s in frame.chart.shape)
    if len(node) != frame.chart.n:
        raise ConfigurationError(f"node {node} does not match dimension {frame.chart.n}")
    conn = gamma(frame)
    curv = algebroid_curvature(conn).values[node]
    ginv = canonical_metric(frame).inv.values[node]
    E = frame.values[node]
    traj = gauge_ode_integrate(curv, ginv, E, cfg["t_end"], dt=cfg["dt"], node=node)
    _write(out, "gauge.csv", traj.to_csv(), artifacts)
    step = 1e-6
    plus = gauge_ode_integrate(curv, ginv, E, step, rtol=1e-12, atol=1e-15).matrices[-1]
    minus = gauge_ode_integrate(curv, ginv, E, -step, rtol=1e-12, atol=1e-15).matrices[-1]
    slope = (plus - minus) / (2 * step)
    h_moved = homogeneous_operator(frame).values[node] @ frame.inverse_values[node]
    results = {"node": list(node), "status": traj.status, "t_star": traj.t_star,
               "t_star_bracket": traj.t_star_bracket, "final": traj.matrices[-1].tolist()}
    checks = [
        check("identity-at-start", np.abs(traj.matrices[0] - np.eye(frame.chart.n)).max(), 0.0),
        check("initial-slope", np.abs(slope - h_moved).max(), 1e-6),
    ]
    return results, checks


def task_develop(cfg, out, artifacts):
    frame, recipe = build_frame(cfg)
    n = frame.chart.n
    p = np.zeros(n) if cfg["from"] is None else np.asarray(cfg["from"], dtype=float)
    end = p if cfg["to"] is None else np.asarray(cfg["to"], dtype=float)
    q = p if cfg["target"] is None else np.asarray(cfg["target"], dtype=float)
    for name, v in (("from", p), ("to", end), ("target", q)):
        if v.shape != (n,):
            raise ConfigurationError(f"--{name} needs {n} coordinates")
    path = [p] + [np.asarray(v, dtype=float) for v in cfg["via"]] + [end]
    results = {}
    if cfg["loop"]:
        mono = monodromy(frame, p, path, steps=cfg["steps"], target=q)
        dev = mono.development
        results.update(displacement=mono.displacement.tolist(), jet_deviation=mono.jet_deviation.tolist(),
                       monodromy=mono.deviation)
    else:
        dev = develop(frame, p, q, path=path, steps=cfg["steps"])
    _write(out, "development.csv", dev.to_csv(), artifacts)
    results.update(residual=dev.residual, end_value=dev.jet_value.tolist(), end_jet=dev.jet.tolist())
    checks = []
    if recipe is not None and recipe.expected.get("r_zero"):
        checks.append(check("development-residual", dev.residual, cfg["tolerance"]))
    return results, checks


def task_validate(cfg, out, artifacts):
    try:
        checks = validation.run_suite(cfg["suite"], cfg["tolerances"], threads=cfg["threads"])
    except KeyError as exc:
        raise ConfigurationError(str(exc)) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "measured", "tolerance", "passed"])
    for c in checks:
        w.writerow([c.name, repr(c.measured), repr(c.tolerance), int(c.passed)])
    _write(out, "checks.csv", buf.getvalue(), artifacts)
    return {"checks": len(checks), "failed": sum(not c.passed for c in checks)}, checks


def task_cross_validate(cfg, out, artifacts):
    frame, _ = build_frame(cfg)
    rep = cross_validate(frame, cfg["t_end"], cfg["dt"], threads=cfg["threads"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "relative_deviation"])
    for t, d in zip(rep.times, rep.deviations):
        w.writerow([repr(float(t)), repr(float(d))])
    _write(out, "deviations.csv", buf.getvalue(), artifacts)
    _write(out, "trace.csv", rep.pde_trace.to_csv(), artifacts)
    results = rep.as_dict()
    results.pop("per_time")
    return results, [check("max-relative-deviation", rep.max_deviation, cfg["tolerance"])]


TASKS = {
    "inspect": task_inspect,
    "flow": task_flow,
    "gauge-ode": task_gauge_ode,
    "develop": task_develop,
    "validate": task_validate,
    "cross-validate": task_cross_validate,
}


# -- reporting -------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def versions():
    return {"hflow_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(task, cfg, out):
    """Execute ``task``; returns (exit status, report dict). Artifacts land in ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    report = {"task": task, "config": cfg, "versions": versions(), "results": {}, "assertions": [],
              "artifacts": artifacts}
    start = time.perf_counter()
    try:
        results, checks = TASKS[task](cfg, out, artifacts)
        report["results"] = results
        report["assertions"] = [c.as_dict() for c in checks]
        code = EXIT_OK if all(c.passed for c in checks) else EXIT_ASSERT
        report["status"] = "pass" if code == EXIT_OK else "fail"
    except (ConfigurationError, FieldFileError, OSError) as exc:
        code, report["status"], report["error"] = EXIT_CONFIG, "config-error", str(exc)
    except (NumericalFailure, SingularFrameError, ContinuationError, IdentityViolation,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        code, report["status"], report["error"] = EXIT_NUMERIC, "numerical-failure", str(exc)
    report["timings"] = {"total_seconds": time.perf_counter() - start}
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_jsonable) + "\n", encoding="utf-8")
    return code, report


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, out = resolve_config(args)
    except ConfigurationError as exc:
        print(f"hflow-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, report = run(args.task, cfg, out)
    for a in report["assertions"]:
        print(Check(a["name"], a["measured"], a["tolerance"], a["passed"]).line())
    if "error" in report:
        print(f"hflow-lab: {report['status']}: {report['error']}", file=sys.stderr)
    print(f"{report['status']}; report in {out / 'report.json'}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
