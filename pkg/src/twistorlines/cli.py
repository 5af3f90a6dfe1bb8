"""Command line: ``check``, ``solve``, ``metrics`` and ``sweep``.

Exit codes: 0 ok, 1 stability/genericity failure, 2 configuration parse
error, 3 solver failure, 4 pipeline error (missing run, too few points, ...).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_configuration, initial_configuration, load_config
from .hyperpolygon import check_stable, check_weights, energy_hp, moment_maps
from .loops import LaurentLoop
from .metrics import FitError, GaugeDriftError, calibrate_pairing, metric_study
from .twistor import (ContinuationRun, MonodromySolverState, SolverError, StabilityError,
                      TwistorProblem, continuation, verify_twistor)

EXIT_OK, EXIT_STABILITY, EXIT_PARSE, EXIT_SOLVER, EXIT_PIPELINE = 0, 1, 2, 3, 4
THREADS_ENV = "TWISTORLINES_THREADS"


class PipelineError(RuntimeError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def check_report(cfg: RunConfig) -> dict:
    """Genericity, smallness and stability of the configured weights and legs."""
    alpha = np.array(cfg.problem.alpha)
    wc = check_weights(alpha)
    report = {"n": len(alpha), "generic": wc.generic, "small": wc.small,
              "weight_witness": [i + 1 for i in wc.witness] if wc.witness is not None else None}
    stable, stab_witness = None, None
    if wc.generic and wc.small:
        sc = check_stable(initial_configuration(cfg.problem), alpha)
        stable = sc.stable
        stab_witness = [i + 1 for i in sc.witness] if sc.witness is not None else None
    report["stable"] = stable
    report["stability_witness"] = stab_witness
    report["ok"] = bool(wc.generic and wc.small and stable)
    return report


def cmd_check(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    rep = check_report(cfg)
    lines = [f"weights generic: {rep['generic']}", f"weights small:   {rep['small']}"]
    if rep["weight_witness"]:
        lines.append(f"  witness subset {{{', '.join(map(str, rep['weight_witness']))}}}")
    lines.append(f"stable:          {rep['stable']}")
    if rep["stability_witness"]:
        lines.append(f"  witness subset {{{', '.join(map(str, rep['stability_witness']))}}}")
    out.write("\n".join(lines) + "\n")
    out.write(_dump(rep))
    return EXIT_OK if rep["ok"] else EXIT_STABILITY


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def make_problem(cfg: RunConfig) -> TwistorProblem:
    rep = check_report(cfg)
    if not rep["ok"]:
        raise StabilityError(f"configuration rejected: {rep}")
    hp = build_configuration(cfg.problem)
    radii = None if cfg.problem.radii is None else np.array(cfg.problem.radii)
    return TwistorProblem(hp, np.array(cfg.problem.alpha), np.array(cfg.problem.punctures),
                          cfg.solver.settings(), radii)


def _state_record(st: MonodromySolverState) -> dict:
    return {"t": st.t, "x": st.x.tolist(), "iterations": st.iterations,
            "eta": [[float(e.real), float(e.imag)] for e in st.eta.ravel()],
            "P": [p.to_record() for p in st.P],
            "residuals": {k: float(v) for k, v in sorted(st.residuals.items())}}


def _certificate_record(run: ContinuationRun) -> dict | None:
    if len([s for s in run.states if s.t > 0]) < 3:
        return None
    c = verify_twistor(run)
    return {"t": c.t.tolist(), "sum_P": c.sum_P.tolist(), "unitarity": c.unitarity.tolist(),
            "det_residual": c.det_residual.tolist(), "B_hermitian": c.B_hermitian.tolist(),
            "B0_error": c.B0_error.tolist()}


def cmd_solve(cfg: RunConfig, out=None, certify: bool = True) -> int:
    out = out or sys.stdout
    problem = make_problem(cfg)
    run = continuation(problem, cfg.solver.t_list)
    root = Path(cfg.output.dir)
    names = []
    for k, st in enumerate(run.states):
        name = f"states/state_{k:03d}.json"
        _write(root / name, _dump(_state_record(st)))
        names.append(name)
    cert = _certificate_record(run) if certify and run.failed_at is None else None
    hp = problem.cfg
    manifest = {
        "config": cfg.to_dict(),
        "configuration": hp.to_record(),
        "energy_hp": energy_hp(hp, problem.alpha),
        "t_list": list(cfg.solver.t_list),
        "converged_t": run.converged_ts,
        "failed_at": run.failed_at,
        "status": "converged" if run.failed_at is None else "partial",
        "log": run.log,
        "states": names,
        "certificate": cert,
    }
    _write(root / "manifest.json", _dump(manifest))
    out.write(f"{len(run.states)}/{len(cfg.solver.t_list)} t values converged; "
              f"artifacts in {root}\n")
    if cert is not None:
        out.write(f"max |sum P| {max(cert['sum_P']):.2e}, unitarity {np.max(cert['unitarity']):.2e}, "
                  f"det {max(cert['det_residual']):.2e}, B(0) {max(cert['B0_error']):.2e}\n")
    if run.failed_at is not None:
        out.write(f"continuation stopped at t={run.failed_at:g}: {run.log[-1]['message']}\n")
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def load_run(cfg: RunConfig, run_dir: Path) -> ContinuationRun:
    mf = run_dir / "manifest.json"
    if not mf.exists():
        raise PipelineError(f"no run manifest in {run_dir}")
    manifest = json.loads(mf.read_text())
    problem = make_problem(cfg)
    states = []
    for name in manifest["states"]:
        rec = json.loads((run_dir / name).read_text())
        x = np.array(rec["x"])
        P, eta = problem.unpack(x)
        loops = tuple(LaurentLoop(0, p, "algebra") for p in P)
        states.append(MonodromySolverState(rec["t"], x, loops, eta, rec["residuals"], rec["iterations"]))
    ts = [s.t for s in states]
    return ContinuationRun(problem, ts, states, manifest["log"], manifest["failed_at"])


def cmd_metrics(cfg: RunConfig, run_dir: Path | None = None, out=None) -> int:
    out = out or sys.stdout
    run_dir = Path(run_dir or cfg.output.dir)
    run = load_run(cfg, run_dir)
    ts = [s.t for s in run.states if s.t > 0]
    if len(ts) < 3:
        raise FitError(f"run has {len(ts)} positive t values; at least three are needed")
    cal = calibrate_pairing(run.problem.alpha, seed=cfg.seed)
    study = metric_study(run.problem, ts, cfg.metrics.directions, cfg.metrics.h, cal,
                         collapse_tol=cfg.metrics.collapse_tol, run=run)
    rep = study.report
    if "csv" in cfg.output.formats:
        _write(run_dir / "metrics.csv", rep.to_csv())
    if "json" in cfg.output.formats:
        _write(run_dir / "metrics.json", rep.to_json() + "\n")
    out.write(f"deviation slope {rep.slope:.4f} (monotone: {rep.monotone}); "
              f"energy slope {rep.energy.slope:.4f}; "
              f"t->0 mismatch {rep.extrapolation_error:.2e}; "
              f"g1 error bar {rep.expansion.error:.2e}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_one(args: tuple) -> dict:
    path, do_metrics = args
    entry = {"config": str(path)}
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return {**entry, "exit": EXIT_PARSE, "message": str(exc)}
    sink = open(os.devnull, "w")
    try:
        code = cmd_check(cfg, sink)
        if code == EXIT_OK:
            code = cmd_solve(cfg, sink)
        if code == EXIT_OK and do_metrics:
            code = cmd_metrics(cfg, None, sink)
        return {**entry, "exit": code, "output": cfg.output.dir}
    except Exception as exc:          # reported per entry; the sweep continues
        return {**entry, "exit": exit_code_for(exc), "message": str(exc)}
    finally:
        sink.close()


def cmd_sweep(paths: list, jobs: int = 1, do_metrics: bool = False, out=None) -> int:
    out = out or sys.stdout
    tasks = [(p, do_metrics) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    out.write(_dump({"runs": results}))
    return max((r["exit"] for r in results), default=EXIT_OK)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_PARSE
    if isinstance(exc, StabilityError):
        return EXIT_STABILITY
    if isinstance(exc, (SolverError, GaugeDriftError)):
        return EXIT_SOLVER
    return EXIT_PIPELINE


def _apply_overrides(cfg: RunConfig, ns) -> RunConfig:
    sv = cfg.solver
    kw = {}
    if ns.N is not None:
        kw["N"] = ns.N
    if ns.M is not None:
        kw["M"] = ns.M
    if ns.ode_tol is not None:
        kw["ode_tol"] = ns.ode_tol
    if ns.newton_tol is not None:
        kw["newton_tol"] = ns.newton_tol
    if ns.t_list is not None:
        ts = tuple(float(x) for x in ns.t_list.split(","))
        if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("--t-list must be nonnegative and strictly increasing")
        kw["t_list"] = ts
    cfg = replace(cfg, solver=replace(sv, **kw)) if kw else cfg
    if getattr(ns, "out", None):
        cfg = replace(cfg, output=replace(cfg.output, dir=ns.out))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twistorlines", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path)
        p.add_argument("--N", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--ode-tol", type=float)
        p.add_argument("--newton-tol", type=float)
        p.add_argument("--t-list", help="comma separated t values")
        p.add_argument("--out", help="output directory (overrides output.dir)")

    common(sub.add_parser("check", help="weights and stability report"))
    p = sub.add_parser("solve", help="continuation run and certificates")
    common(p)
    p.add_argument("--no-certify", action="store_true")
    p = sub.add_parser("metrics", help="Kahler forms along a solved run")
    common(p)
    p.add_argument("--run", type=Path, help="run directory (default: output.dir)")
    p = sub.add_parser("sweep", help="check and solve several configurations")
    p.add_argument("configs", nargs="+", type=Path)
    p.add_argument("--jobs", type=int, help=f"worker processes (default: ${THREADS_ENV} or 1)")
    p.add_argument("--metrics", action="store_true")
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "sweep":
            jobs = ns.jobs or int(os.environ.get(THREADS_ENV, "1"))
            return cmd_sweep(ns.configs, jobs, ns.metrics)
        cfg = _apply_overrides(load_config(ns.config), ns)
        if ns.command == "check":
            return cmd_check(cfg)
        if ns.command == "solve":
            return cmd_solve(cfg, certify=not ns.no_certify)
        return cmd_metrics(cfg, ns.run)
    except Exception as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
