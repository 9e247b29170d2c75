"""Command-line runner: ``mvlevy run <config>`` and ``mvlevy validate <config>``.

Exit status is 0 on success, 2 for an invalid configuration and 3 for a
numerical failure (unreachable event, singular Gramian, no usable tail
data).  Each run writes its CSV files and a manifest whose body is the
resolved configuration, so the manifest itself re-runs the experiment.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


_WRITTEN: list = []


def write_csv(path, header, rows):
    _WRITTEN.append(Path(path))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def summary_line(**kv) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in kv.items())


# ------------------------------------------------------------------ tasks

def _controls(cfg, problem):
    from .jumps import ControlField
    from .skeleton import Control, read_phi_csv, read_psi_csv

    v = cfg.values
    T = v["run.T"]
    phi = psi = None
    signed = v["task.name"] == "skeleton-mdp" or v["task.regime"] == "mdp"
    if (v["task.psi"] is not None or v["task.psi_file"] is not None) and not problem.has_jumps:
        raise ConfigError("a jump control is given but the problem has no jumps")
    try:
        if v["task.phi_file"] is not None:
            phi = read_phi_csv(cfgmod.resolve_path(cfg, v["task.phi_file"]), T)
        elif v["task.phi"] is not None:
            phi = Control.constant(np.asarray(v["task.phi"]), T, problem.dim)
        if v["task.psi_file"] is not None:
            psi = read_psi_csv(cfgmod.resolve_path(cfg, v["task.psi_file"]), T, signed)
        elif v["task.psi"] is not None:
            psi = ControlField.constant(v["task.psi"], problem.jump_model, T, signed=signed)
    except (ValueError, IndexError, OSError) as exc:
        raise ConfigError(f"bad control: {exc}") from None
    if phi is not None and phi.dim != problem.dim:
        raise ConfigError(f"control has {phi.dim} components, problem.dim is {problem.dim}")
    if psi is not None and psi.n_marks != problem.jump_model.n_marks:
        raise ConfigError("jump control and mark grid disagree")
    return phi, psi


def _event(cfg):
    from .rate import Halfspace, SupNorm, TerminalPoint

    v = cfg.values
    kind = v["task.event"]
    if kind == "halfspace":
        return Halfspace(v["task.event_a"], v["task.event_c"])
    if kind == "point":
        return TerminalPoint(v["task.event_target"])
    return SupNorm(v["task.event_delta"], v["task.event_relative"])


def task_limit(cfg, problem, out, prefix, workers):
    from .dynamics import solve_limit

    b = solve_limit(problem, cfg["run.T"], cfg["run.dt"])
    x, k = b.path()
    d = problem.dim
    write_csv(out / f"{prefix}limit.csv", ["t"] + [f"x{i}" for i in range(d)] + [f"k{i}" for i in range(d)],
              ([t, *xi, *ki] for t, xi, ki in zip(b.times, x, k)))
    return {"task": "limit", "x_T": float(np.linalg.norm(x[-1])), "k_var": float(np.sum(np.linalg.norm(np.diff(k, axis=0), axis=1)))}


def task_simulate(cfg, problem, out, prefix, workers):
    from .dynamics import simulate_particles
    from .geometry import check_pair_monotonicity

    d = problem.dim
    header = (["epsilon", "replica", "particle", "t"] + [f"x{i}" for i in range(d)]
              + [f"k{i}" for i in range(d)])
    jrows, prows, worst = [], [], np.inf
    exits = 0
    for eps in cfg["run.epsilon"]:
        b = simulate_particles(problem, cfg["run.T"], cfg["run.dt"], eps, cfg["run.particles"],
                               cfg["run.seed"], cfg["run.replicas"], workers)
        exits += b.scheme["jump_exits"]
        R, N = b.replicas, b.particles
        for r in range(R):
            for i in range(N):
                x, k = b.path(r, i)
                worst = min(worst, check_pair_monotonicity(b.times, x, k).min_value)
                for t, xi, ki in zip(b.times, x, k):
                    prows.append([eps, r, i, t, *xi, *ki])
                if b.jump_logs is not None:
                    for t, j, z in b.jump_logs[r][i].rows():
                        jrows.append([eps, r, i, t, j, z])
    write_csv(out / f"{prefix}paths.csv", header, prows)
    if problem.has_jumps:
        write_csv(out / f"{prefix}jumps.csv", ["epsilon", "replica", "particle", "time", "mark_index", "mark_value"], jrows)
    return {"task": "simulate", "rows": len(prows), "jumps": len(jrows), "jump_exits": exits,
            "min_self_monotonicity": worst}


def _skeleton_csv(path, sol):
    write_csv(path, sol.header(),
              ([t, *y, *k] for t, y, k in zip(sol.times, sol.path, sol.correction)))


def task_skeleton(cfg, problem, out, prefix, workers, regime):
    from .dynamics import solve_limit
    from .skeleton import solve_ldp_skeleton, solve_mdp_skeleton

    lim = solve_limit(problem, cfg["run.T"], cfg["run.dt"])
    phi, psi = _controls(cfg, problem)
    if regime == "ldp":
        sol = solve_ldp_skeleton(problem, lim, phi, psi, half=cfg["task.half"])
    else:
        sol = solve_mdp_skeleton(problem, lim, phi, psi, project_deviation=cfg["task.project_deviation"])
    _skeleton_csv(out / f"{prefix}skeleton.csv", sol)
    return {"task": f"skeleton-{regime}", "cost": sol.cost,
            "y_T": ",".join(repr(float(a)) for a in sol.path[-1])}


def task_rate(cfg, problem, out, prefix, workers):
    from .dynamics import solve_limit
    from .rate import RateQuery, SingularGramian, lq_event_value, minimize_rate
    from .skeleton import write_control_csv

    v = cfg.values
    lim = solve_limit(problem, v["run.T"], v["run.dt"])
    q = RateQuery(v["task.regime"], _event(cfg), v["task.control_cells"], v["task.use_jumps"],
                  v["task.restarts"], v["task.rounds"], v["task.penalty0"], 10.0, v["task.maxiter"],
                  v["run.seed"], v["task.half"], project_deviation=v["task.project_deviation"])
    res = minimize_rate(q, problem, lim, workers)
    oracle = None
    try:
        oracle = lq_event_value(problem, lim, q.event, q.regime, q.use_jumps)
    except SingularGramian:
        oracle = np.inf
    rows = [res.row() + (np.nan if oracle is None else oracle,)]
    write_csv(out / f"{prefix}rate.csv", list(res.header) + ["oracle"], rows)
    write_csv(out / f"{prefix}rate_trace.csv", ["start", "round", "penalty", "objective", "cost", "residual"],
              res.diagnostics.get("trace", []))
    if res.phi is not None or res.psi is not None:
        cpath = out / f"{prefix}control.csv"
        ppath = write_control_csv(cpath, res.phi, res.psi)
        _WRITTEN.extend(Path(p) for p in (cpath if res.phi is not None else None, ppath) if p is not None)
    summary = {"task": "rate", "rate": res.value, "residual": res.residual, "feasible": res.feasible}
    if oracle is not None:
        summary["oracle"] = oracle
    if not res.feasible:
        raise NumericalFailure(summary_line(**summary) + " reason=event_unreachable")
    return summary


def task_tail(cfg, problem, out, prefix, workers):
    from .analysis import TailEstimationError, estimate_tail
    from .dynamics import ModerateScale

    v = cfg.values
    scale = ModerateScale(v["run.theta"]) if v["task.regime"] == "mdp" else None
    particles = v["run.particles"]
    try:
        est = estimate_tail(problem, _event(cfg), v["run.epsilon"], v["run.replicas"], v["run.T"], v["run.dt"],
                            v["run.seed"], scale, particles, v["task.min_hits"], workers)
    except TailEstimationError as exc:
        raise NumericalFailure(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_csv(out / f"{prefix}tail.csv", est.header, est.rows())
    return {"task": "tail", "regime": est.regime, "rate_estimate": est.rate_estimate,
            "intercept": est.intercept, "intercept_se": est.intercept_se, "slope": est.slope,
            "used": int(np.sum(est.used))}


def task_converge(cfg, problem, out, prefix, workers):
    from .analysis import convergence_study

    v = cfg.values
    phi, psi = _controls(cfg, problem) if v["task.mode"] == "controlled" else (None, None)
    rep = convergence_study(problem, v["run.epsilon"], v["run.replicas"], v["task.mode"], v["run.seed"],
                            v["run.T"], v["run.dt"], v["run.particles"], phi, psi, workers)
    write_csv(out / f"{prefix}converge.csv", rep.header, rep.rows())
    return {"task": "converge", "mode": rep.mode, "slope": rep.slope, "slope_se": rep.slope_se,
            "strictly_decreasing": rep.strictly_decreasing, "C_hat": rep.C_hat}


def task_hypotheses(cfg, problem, out, prefix, workers):
    from .coefficients import check_hypotheses

    v = cfg.values
    eps = [e for e in v["run.epsilon"] if e > 0] or [0.1]
    rep = check_hypotheses(problem.coeffs, problem.family, problem.domain, problem.jump_model,
                           v["task.samples"], v["run.seed"], eps_grid=eps, theta=v["run.theta"],
                           x0=problem.x0, T=v["run.T"], dt=v["run.dt"], c0_L=v["task.c0_L"],
                           c0_q=v["task.c0_q"])
    write_csv(out / f"{prefix}hypotheses.csv", rep.header, rep.rows())
    failed = [r.name for r in rep.results if not r.passed]
    return {"task": "check-hypotheses", "all_passed": rep.all_passed, "failed": ",".join(failed) or "none"}


def task_bihari(cfg, problem, out, prefix, workers):
    from .analysis import BihariSpec, bihari_result
    from .coefficients import modulus_from_params

    v = cfg.values
    rho = modulus_from_params(v["task.bihari_modulus"], L=v["task.bihari_L"], delta=v["task.bihari_delta"],
                              power=v["task.bihari_power"], coef=v["task.bihari_coef"])
    grid = np.linspace(0.0, v["run.T"], v["task.bihari_points"])
    try:
        res = bihari_result(BihariSpec(v["task.bihari_C"], np.full(grid.shape, v["task.bihari_q"]), rho, grid))
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from None
    write_csv(out / f"{prefix}bihari.csv", res.header, res.rows())
    return {"task": "bihari", "bound_T": float(res.bound[-1])}


TASK_FUNCS = {
    "limit": task_limit,
    "simulate": task_simulate,
    "skeleton-ldp": lambda *a: task_skeleton(*a, regime="ldp"),
    "skeleton-mdp": lambda *a: task_skeleton(*a, regime="mdp"),
    "rate": task_rate,
    "tail": task_tail,
    "converge": task_converge,
    "check-hypotheses": task_hypotheses,
    "bihari": task_bihari,
}


# --------------------------------------------------------------- commands

def run(config_path, workers: int | None = None, out: str | None = None, stream=sys.stdout) -> int:
    try:
        cfg = cfgmod.load(config_path)
        if out is not None:
            cfg = cfg.with_overrides(**{"output.dir": out})
        problem = cfgmod.build_problem(cfg)
        workers = workers or int(os.environ.get("MVLEVY_WORKERS", "1") or 1)
        outdir = Path(cfg["output.dir"])
        if not outdir.is_absolute() and out is None and cfg.source is not None:
            outdir = Path(cfg.source).parent / outdir
        outdir.mkdir(parents=True, exist_ok=True)
        prefix = cfg["output.prefix"]
        _WRITTEN.clear()
        status = EXIT_OK
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                summary = TASK_FUNCS[cfg["task.name"]](cfg, problem, outdir, prefix, workers)
            print(summary_line(**summary), file=stream)
        except NumericalFailure as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            status = EXIT_NUMERIC
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            status = EXIT_NUMERIC
        outputs = {p.name: cfgmod.git_blob_hash(p.read_bytes()) for p in _WRITTEN}
        inputs = {k: cfgmod.resolve_path(cfg, cfg[k]).resolve() for k in ("task.phi_file", "task.psi_file")
                  if cfg.get(k) is not None}
        # absolute input paths so the manifest re-runs from any directory
        cfg = cfg.with_overrides(**{k: str(p) for k, p in inputs.items()})
        (outdir / f"{prefix}manifest.cfg").write_text(cfgmod.manifest_text(cfg, inputs, outputs))
        return status
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def validate(config_path, stream=sys.stdout) -> int:
    try:
        cfg = cfgmod.load(config_path)
        cfgmod.build_problem(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stream.write(cfg.canonical_text())
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mvlevy", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute the task of a configuration file")
    p_run.add_argument("config")
    p_run.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: $MVLEVY_WORKERS or 1)")
    p_run.add_argument("--out", default=None, help="override output.dir")
    p_val = sub.add_parser("validate", help="check a configuration without running it")
    p_val.add_argument("config")
    args = ap.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.workers, args.out)
    return validate(args.config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
