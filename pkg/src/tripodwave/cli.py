"""Command-line scenario runner.

    tripodwave run CONFIG [--out DIR] [--snapshots N] [--threads K] [--quiet] [--no-figures]
    tripodwave oracle CONFIG [--out FILE]
    tripodwave compare RUN_DIR ORACLE_FILE [--out FILE]
    tripodwave sweep PARAM VALUE [VALUE ...] --base CONFIG [--out FILE]

Exit codes: 0 success (or within tolerance), 1 runtime failure or out of
tolerance, 2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import subprocess
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, config, model, oracle, paths, propagator
from .grid import GridError, SnapshotError, load_snapshot, save_snapshot, write_density_csv

log = logging.getLogger("tripodwave")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    """Bad command-line input; maps to exit code 2."""


# -- helpers ------------------------------------------------------------------

def code_version() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    info = {"package": "tripodwave", "version": version}
    try:
        here = Path(__file__).resolve().parent
        rev = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            info["git"] = rev.stdout.strip()
            dirty = subprocess.run(["git", "status", "--porcelain"], cwd=here, capture_output=True, text=True,
                                   timeout=5)
            info["git_dirty"] = bool(dirty.stdout.strip())
    except (OSError, subprocess.SubprocessError):
        pass
    return info


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return o


def write_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True))
    return path


def lattice_prediction(cfg: dict, path: paths.BeamPath, upto: float | None = None):
    """Branch-set prediction for a polygonal path and a dark-basis packet, else None."""
    if cfg["packet"].get("internal") is not None:
        return None
    s0 = config.dark_spinor(cfg)
    if s0 is None:
        s0 = np.array([1.0, 0.0], dtype=complex)
    if not path.is_polygonal or any(seg.speed <= 0 for seg in path.segments):
        return None
    p = config.params(cfg)
    try:
        return oracle.predict_lattice(path, s0, p.kappa, p.hbar, p.mass,
                                      origin=tuple(cfg["packet"].get("center", (0.0, 0.0))), upto=upto)
    except oracle.OracleError:
        return None


def record_times(cfg: dict, path: paths.BeamPath, t_end: float) -> list[tuple[str, float]]:
    """(label, time) pairs: every corner reached by t_end, then "final".

    Corners are lettered from the start A in travel order, so a
    counter-clockwise square visits D, C, B and returns to A.
    """
    out = []
    if cfg["output"].get("records", "corners") == "corners":
        spec = cfg["path"]
        ccw_square = spec.get("type") == "square" and not spec.get("clockwise", True)
        letters = "DCB" if ccw_square else "BCDEFGHIJKLMNOPQRSTUVWXYZ"
        closed = np.linalg.norm(paths.displacement_at(path, path.duration) - paths.displacement_at(path, 0.0)) < 1e-9
        corners = path.corner_times
        for i, t in enumerate(corners):
            if t > t_end + 1e-9:
                break
            if closed and i == len(corners) - 1:
                label = "t_A"
            else:
                label = f"t_{letters[i]}" if i < len(letters) else f"t_{i + 1}"
            out.append((label, t))
    out.append(("final", t_end))
    return out


def scale_length(path: paths.BeamPath) -> float:
    """Largest single-segment beam displacement."""
    return max(float(getattr(s, "length", 0.0)) for s in path.segments) or 1.0


def arc_segment(path):
    for i, s in enumerate(path.segments):
        if isinstance(s, paths.Arc):
            return i, s
    return None, None


# -- run ----------------------------------------------------------------------

def run_scenario(cfg: dict, out: Path | None = None, snapshots: int | None = None, threads: int | None = None,
                 figures: bool = True, quiet: bool = True) -> dict:
    """Execute a validated scenario config; returns the summary document.

    With ``out`` set, writes manifest, summary, time series, density CSVs,
    record snapshots, optional periodic snapshots and figures.
    """
    t_wall = time.perf_counter()
    p = config.params(cfg)
    g = config.grid(cfg)
    path = config.build_path(cfg["path"])
    dt = float(cfg["time"]["dt"])
    t_end = config.t_end(cfg, path)
    if t_end > path.duration + 1e-9:
        raise propagator.PreconditionError(f"t_end={t_end} exceeds the path duration {path.duration}")
    propagator.check_preconditions(g, p, dt, config.max_dx(cfg))
    field0 = config.initial_field(cfg, p, g)
    n_total = int(math.floor(t_end / dt + 1e-9))
    if n_total < 1:
        raise propagator.PreconditionError(f"t_end={t_end} is shorter than one step dt={dt}")
    t_end = n_total * dt

    recs_t = record_times(cfg, path, t_end)
    recs = [(label, min(n_total, int(round(t / dt)))) for label, t in recs_t]
    n_snap = cfg["output"].get("snapshots", 0) if snapshots is None else snapshots
    snap_steps = sorted({int(round(n_total * (k + 1) / n_snap)) for k in range(n_snap)}) if n_snap else []
    every = int(cfg["output"].get("series_every", 200))
    events = sorted({0, n_total, *[s for _, s in recs], *snap_steps, *range(0, n_total + 1, every)})

    ana = cfg["analysis"]
    sigma = float(cfg["packet"]["sigma"])
    ev = propagator.Evolution(field0, path, p, dt, workers=threads, max_dx=config.max_dx(cfg))
    series, records, done_snaps = [], [], []
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    last_report = time.perf_counter()

    for target in events:
        if target > ev.step_index:
            remaining = target - ev.step_index
            while remaining > 0:
                m = min(remaining, 1000)
                ev.step(m)
                ev.check_finite()
                remaining -= m
        f = ev.field
        rho = f.density()
        total = rho.sum()
        com = (float(rho.sum(axis=1) @ g.x / total), float(rho.sum(axis=0) @ g.z / total))
        series.append({"t": f.time, "norm": float(total) * g.cell_area, "com": com,
                       "displacement": list(map(float, f.displacement))})
        if not quiet and time.perf_counter() - last_report > 10:
            log.info("t = %.4g / %.4g (step %d)", f.time, t_end, ev.step_index)
            last_report = time.perf_counter()
        if target in snap_steps and out is not None:
            k = len(done_snaps)
            done_snaps.append(str(ev.save_checkpoint(out / "snapshots" / f"snap_{k:04d}.bin").relative_to(out)))
        for label, step in recs:
            if step != target:
                continue
            t_rec = dict(recs_t)[label]
            upto = None if abs(t_rec - path.duration) < 1e-9 else t_rec
            pred = lattice_prediction(cfg, path, upto)
            if pred is not None and abs(pred.time - f.time) > 0.5 * dt:
                pred = None
            rec = analysis.summarize(cfg["name"], f, p, pred, sigma, ana["threshold_frac"], ana["method"],
                                     ana["smooth"], density=ana["density"])
            rec["label"] = label
            rec["step"] = ev.step_index
            if pred is not None:
                rec["predicted"] = [{"x": float(b.position[0] + pred.origin[0]),
                                     "z": float(b.position[1] + pred.origin[1]),
                                     "weight": b.weight, "phase": b.phase} for b in pred.branches]
            records.append(rec)
            if out is not None:
                write_density_csv(f, out / f"density_{label}.csv", cfg["output"].get("csv_stride", 4))
                save_snapshot(f, out / "records" / f"{label}.bin", extra={"label": label, "scenario": cfg["name"]})
                if figures:
                    from . import plotting

                    pr = [(r["x"], r["z"]) for r in rec.get("predicted", [])]
                    plotting.density_map(f, out / "figures" / f"density_{label}.png", rec["clusters"], pr,
                                         title=f"{cfg['name']}  {label}  t = {f.time:.4g}")

    summary = {"scenario": cfg["name"], "time": t_end, "steps": n_total, "records": records}
    summary.update(trajectory_analysis(cfg, path, series, p))
    if out is not None:
        write_json(out / "summary.json", summary)
        with open(out / "series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "norm", "com_x", "com_z", "d_x", "d_z"])
            for r in series:
                w.writerow([repr(r["t"]), repr(r["norm"]), repr(r["com"][0]), repr(r["com"][1]),
                            repr(r["displacement"][0]), repr(r["displacement"][1])])
        if figures:
            from . import plotting

            plotting.trajectory(series, out / "figures" / "trajectory.png", summary.get("fit"),
                                beam=[paths.displacement_at(path, r["t"]) + np.asarray(cfg["packet"]["center"])
                                      for r in series], title=cfg["name"])
        manifest = {
            "config": cfg,
            "code": code_version(),
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
            "threads": threads,
            "wall_time_s": time.perf_counter() - t_wall,
            "steps": n_total,
            "snapshots": done_snaps,
        }
        write_json(out / "manifest.json", manifest)
    summary["_series"] = series
    return summary


def trajectory_analysis(cfg: dict, path: paths.BeamPath, series, p: model.PhysicalParams) -> dict:
    ana = cfg["analysis"]
    out = {}
    i_arc, arc = arc_segment(path)
    if ana.get("fit_circle") and arc is not None:
        t0 = path.starts[i_arc]
        pts = [r["com"] for r in series if t0 - 1e-9 <= r["t"] <= t0 + arc.duration + 1e-9]
        try:
            fit = analysis.fit_circle(pts)
            expected = oracle.dance_radius(arc.radius, arc.speed, p.kappa, p.hbar, p.mass)
            out["fit"] = dict(fit.as_dict(), expected_radius=expected,
                              relative_error=abs(fit.radius - expected) / expected)
        except analysis.FitError as exc:
            out["fit"] = {"error": str(exc)}
    if ana.get("tangent_heading") and arc is not None and i_arc + 1 < len(path.segments):
        tail = path.segments[i_arc + 1]
        t1 = path.starts[i_arc + 1]
        # Skip the first half of the straight leg so the turn transient has passed.
        rows = [r for r in series if r["t"] >= t1 + 0.5 * tail.duration - 1e-9]
        alpha = math.atan2(tail.direction[1], tail.direction[0])
        try:
            h = analysis.heading_of([r["t"] for r in rows], [r["com"] for r in rows])
            out["tangent"] = {"alpha": alpha, "heading": h, "error_deg": math.degrees(analysis.angle_difference(h, alpha))}
        except analysis.FitError as exc:
            out["tangent"] = {"error": str(exc)}
    return out


# -- oracle -------------------------------------------------------------------

def oracle_document(cfg: dict) -> dict:
    p = config.params(cfg)
    path = config.build_path(cfg["path"])
    i_arc, arc = arc_segment(path)
    if arc is not None:
        s0 = config.dark_spinor(cfg)
        h0 = arc.heading(0.0)
        if s0 is None:
            s0 = oracle.g_plus(h0)
        c = oracle.circle_evolve_ode(s0, arc.radius, arc.speed, arc.omega * arc.duration, heading0=h0, kappa=p.kappa)
        rep = oracle.adiabatic_loop(arc.radius, arc.speed, arc.omega * arc.duration, h0, p.kappa)
        return {"scenario": cfg["name"], "mode": "circle", "r_L": arc.radius, "v_d": arc.speed,
                "sweep": arc.omega * arc.duration,
                "final_spinor": [[complex(v).real, complex(v).imag] for v in c],
                "beta": rep.adiabatic_beta, "geometric_phase": rep.geometric_phase,
                "final_overlap": rep.final_overlap, "min_overlap": rep.min_overlap,
                "dance_radius": oracle.dance_radius(arc.radius, arc.speed, p.kappa, p.hbar, p.mass)}
    if not path.is_polygonal:
        raise InputError(f"path {path.name!r} is not polygonal; lattice oracle needs straight segments")
    s0 = config.dark_spinor(cfg)
    if s0 is None:
        s0 = np.array([1.0, 0.0], dtype=complex)
    t_end = config.t_end(cfg, path)
    upto = None if abs(t_end - path.duration) < 1e-9 else t_end
    try:
        bs = oracle.predict_lattice(path, s0, p.kappa, p.hbar, p.mass,
                                    origin=tuple(cfg["packet"].get("center", (0.0, 0.0))), upto=upto)
    except oracle.OracleError as exc:
        raise InputError(str(exc)) from None
    doc = json.loads(bs.to_json())
    doc.update({"scenario": cfg["name"], "mode": "lattice", "sigma": cfg["packet"]["sigma"]})
    return doc


# -- compare ------------------------------------------------------------------

def compare_run(run_dir: Path, oracle_doc: dict) -> tuple[dict, bool]:
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
        summary = json.loads((run_dir / "summary.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{run_dir} is not a readable run directory: {exc}") from None
    cfg = config.validate(manifest["config"])
    if oracle_doc.get("scenario") != summary.get("scenario"):
        raise InputError(f"scenario mismatch: run is {summary.get('scenario')!r}, "
                         f"oracle is {oracle_doc.get('scenario')!r}")
    tol = cfg["analysis"].get("tolerances", {})
    p = config.params(cfg)
    if oracle_doc.get("mode") == "circle":
        fit = summary.get("fit") or {}
        if "radius" not in fit:
            raise InputError("run has no circle fit; enable analysis.fit_circle")
        rel = abs(fit["radius"] - oracle_doc["dance_radius"]) / oracle_doc["dance_radius"]
        res = {"mode": "circle", "fit_radius": fit["radius"], "dance_radius": oracle_doc["dance_radius"],
               "relative_error": rel}
        ok = rel <= tol.get("radius_rel", 0.05)
        res["within_tolerance"] = ok
        return res, ok
    bs = oracle.BranchSet.from_json(json.dumps(oracle_doc))
    bs = oracle.BranchSet(bs.branches, bs.time, p.kappa, p.hbar, p.mass, bs.origin)
    dt = float(cfg["time"]["dt"])
    rec = [r for r in summary["records"] if abs(r["time"] - bs.time) <= 0.5 * dt]
    if not rec:
        raise InputError(f"run has no record at the oracle time t={bs.time}")
    rec = rec[-1]
    try:
        field = load_snapshot(run_dir / "records" / f"{rec['label']}.bin")
    except (OSError, SnapshotError) as exc:
        raise InputError(f"cannot load record snapshot: {exc}") from None
    ana = cfg["analysis"]
    cmp = analysis.compare_to_oracle(field, bs, float(oracle_doc.get("sigma", cfg["packet"]["sigma"])),
                                     field.displacement, p, ana["threshold_frac"], ana["method"], ana["smooth"],
                                     density=ana["density"])
    scale = scale_length(config.build_path(cfg["path"]))
    checks = {"cluster_count": cmp["cluster_count_match"]}
    if "position_abs" in tol:
        checks["position"] = cmp["position_max"] <= tol["position_abs"]
    elif "position_frac" in tol:
        checks["position"] = cmp["position_max"] <= tol["position_frac"] * scale
    if "weight_abs" in tol:
        checks["weight"] = cmp["weight_max"] <= tol["weight_abs"]
    if "phase_abs" in tol:
        checks["phase"] = bool(np.isfinite(cmp["phase_max"])) and cmp["phase_max"] <= tol["phase_abs"]
    if "fidelity_min" in tol:
        checks["fidelity"] = cmp["internal_fidelity"] >= tol["fidelity_min"]
    ok = all(checks.values())
    cmp.update({"mode": "lattice", "record": rec["label"], "time": rec["time"], "checks": checks,
                "position_scale": scale, "within_tolerance": ok})
    return cmp, ok


# -- sweep --------------------------------------------------------------------

SWEEP_ALIASES = {"r_L": "path.radius", "dt": "time.dt", "omega0": "physics.omega0", "v_d": "path.speed"}


def sweep(param: str, values, base: dict, threads: int | None = None) -> list[dict]:
    if not values:
        raise InputError("sweep needs at least one value")
    key = SWEEP_ALIASES.get(param, param)
    rows = []
    if key == "path.radius" and base["path"]["type"] == "circle":
        spec = base["path"]
        for v in values:
            rep = oracle.adiabatic_loop(float(v), float(spec["speed"]), float(spec.get("sweep", -2 * math.pi)),
                                        float(spec.get("heading", math.pi / 2)), config.params(base).kappa)
            rows.append({"r_L": float(v), "adiabatic_fidelity": rep.min_overlap, "final_overlap": rep.final_overlap,
                         "geometric_phase": rep.geometric_phase, "beta": rep.adiabatic_beta})
        return rows
    if key == "time.dt":
        if len(values) < 2:
            raise InputError("a dt sweep needs at least two values")
        path = config.build_path(base["path"])
        t_end = config.t_end(base, path)
        p = config.params(base)
        finals = []
        for v in values:
            cfg = config.set_key(config.set_key(base, key, float(v)), "time.t_end", t_end)
            f = _final_field(cfg, threads)
            finals.append(f.psi)
            rows.append({"dt": float(v), "bright_population": model.dark_projection(f, f.displacement, p)[2]})
        da = config.grid(base).cell_area
        for i in range(len(rows) - 1):
            rows[i]["diff_to_next"] = float(np.linalg.norm(finals[i] - finals[i + 1]) * math.sqrt(da))
        # Successive differences shrink by ratio^order.
        for i in range(len(rows) - 2):
            a, b = rows[i]["diff_to_next"], rows[i + 1]["diff_to_next"]
            ratio = rows[i]["dt"] / rows[i + 1]["dt"]
            rows[i]["order"] = float(math.log(a / b) / math.log(ratio)) if a > 0 and b > 0 else float("nan")
        return rows
    for v in values:
        cfg = config.validate(config.set_key(base, key, v))
        s = run_scenario(cfg, None, 0, threads, figures=False)
        fin = s["records"][-1]
        rows.append({param: v, "clusters": len(fin["clusters"]), "bright_population": fin["bright_population"],
                     "fidelity": fin["fidelity"], "boundary_density": fin["boundary_density"]})
    return rows


def _final_field(cfg, threads):
    p = config.params(cfg)
    path = config.build_path(cfg["path"])
    f0 = config.initial_field(cfg, p)
    dt = float(cfg["time"]["dt"])
    n = int(math.floor(float(cfg["time"]["t_end"]) / dt + 1e-9))
    out, _ = propagator.evolve(f0, path, p, dt, n * dt, workers=threads, max_dx=config.max_dx(cfg))
    return out


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tripodwave", description="Tripod-scheme wavepacket scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    r.add_argument("--snapshots", type=int, default=None, help="number of evenly spaced checkpoints")
    r.add_argument("--threads", type=int, default=None, help="FFT worker cap")
    r.add_argument("--quiet", action="store_true")
    r.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG rendering")

    o = sub.add_parser("oracle", help="analytic prediction only")
    o.add_argument("config")
    o.add_argument("--out", default=None, help="output JSON file (default stdout)")

    c = sub.add_parser("compare", help="compare a run directory with an oracle file")
    c.add_argument("run_dir")
    c.add_argument("oracle_file")
    c.add_argument("--out", default=None)

    s = sub.add_parser("sweep", help="vary one parameter")
    s.add_argument("param", help="r_L, dt, omega0, v_d or a dotted config key")
    s.add_argument("values", nargs="*", type=float)
    s.add_argument("--base", required=True, help="base scenario config")
    s.add_argument("--out", default=None, help="CSV table (default stdout)")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--no-figures", dest="figures", action="store_false")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "run":
            cfg = config.load(args.config)
            if args.threads is not None and args.threads < 1:
                raise InputError("--threads must be >= 1")
            out = Path(args.out) if args.out else Path("runs") / cfg["name"]
            s = run_scenario(cfg, out, args.snapshots, args.threads, args.figures, quiet)
            fin = s["records"][-1]
            log.info("%s: t=%.4g, %d clusters, bright %.3g, outputs in %s", cfg["name"], s["time"],
                     len(fin["clusters"]), fin["bright_population"], out)
            return EXIT_OK
        if args.command == "oracle":
            doc = oracle_document(config.load(args.config))
            text = json.dumps(_jsonable(doc), indent=2)
            if args.out:
                Path(args.out).write_text(text)
            else:
                print(text)
            return EXIT_OK
        if args.command == "compare":
            try:
                doc = json.loads(Path(args.oracle_file).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise InputError(f"cannot read oracle file: {exc}") from None
            res, ok = compare_run(Path(args.run_dir), doc)
            target = Path(args.out) if args.out else Path(args.run_dir) / "comparison.json"
            write_json(target, res)
            print(json.dumps(_jsonable({k: res[k] for k in res if k not in ("phases", "expected_phases",
                                                                             "phase_reliable")}), indent=2))
            return EXIT_OK if ok else EXIT_FAIL
        if args.command == "sweep":
            base = config.load(args.base)
            rows = sweep(args.param, args.values, base, args.threads)
            keys = list(dict.fromkeys(k for r in rows for k in r))
            fh = open(args.out, "w", newline="") if args.out else sys.stdout
            try:
                w = csv.DictWriter(fh, fieldnames=keys)
                w.writeheader()
                for r in rows:
                    w.writerow(r)
            finally:
                if args.out:
                    fh.close()
            if args.out and args.figures:
                from . import plotting

                x = list(rows[0])[0]
                ys = [k for k in keys if k != x and all(isinstance(r.get(k), float) for r in rows)]
                plotting.sweep_plot(rows, x, ys, Path(args.out).with_suffix(".png"), logx=x in ("r_L", "dt"))
            return EXIT_OK
    except (config.ConfigError, InputError, propagator.PreconditionError, GridError, paths.PathError,
            oracle.OracleError, analysis.FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, propagator.NumericalBlowup, SnapshotError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
