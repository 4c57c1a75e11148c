"""Command line entry point: ``lypmfd {check|solve|sample|jacobian|validate} --config FILE``.

JSON goes to stdout, logs to stderr. Exit codes: 0 success, 1 condition
failure, 2 numerical failure, 3 configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time

import numpy as np

from .config import build_problem, load_config
from .errors import ConditionError, ConfigError, LypmfdError, TrichotomyError
from .perron import sample_manifold, solve_fixed_point
from .regularity import solve_T1
from .trajectory import write_trajectory_csv
from .validation import run_validation

log = logging.getLogger("lypmfd")

EXIT_OK, EXIT_CONDITION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3
FD_STEP = 1e-3


def _vector(text, n, name):
    try:
        v = np.array([float(s) for s in text.replace(" ", "").split(",") if s], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"--{name}: {exc}") from exc
    if v.shape != (n,):
        raise ConfigError(f"--{name} needs {n} comma-separated value(s), got {v.size}")
    return v


def _grid(text, n):
    """``lo:hi:k`` per center coordinate, comma-separated; the tensor grid of them."""
    axes = []
    for part in text.split(","):
        try:
            lo, hi, k = part.split(":")
            lo, hi, k = float(lo), float(hi), int(k)
        except ValueError as exc:
            raise ConfigError(f"--grid: expected lo:hi:n, got {part!r}") from exc
        if k < 1:
            raise ConfigError("--grid: n must be >= 1")
        axes.append(np.linspace(lo, hi, k))
    if len(axes) == 1 and n > 1:
        axes = axes * n
    if len(axes) != n:
        raise ConfigError(f"--grid: {len(axes)} axes for {n} center coordinate(s)")
    return [np.array(p) for p in itertools.product(*axes)]


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, default=_default)
    sys.stdout.write("\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _gate(problem, args):
    """Abort with a condition failure unless the gap checks pass or --force is set."""
    if problem.report.passed:
        return None
    if args.force:
        log.warning("conditions fail (%s); continuing because of --force", "; ".join(problem.report.messages))
        return None
    _emit({"error": "conditions not satisfied", "report": problem.report.to_dict()})
    return EXIT_CONDITION


def cmd_check(problem, args):
    out = problem.report.to_dict()
    out["problem"] = problem.to_dict()
    _emit(out)
    return EXIT_OK if problem.report.passed else EXIT_CONDITION


def cmd_solve(problem, args):
    code = _gate(problem, args)
    if code is not None:
        return code
    y0 = _vector(args.y0, problem.spec.n_y, "y0")
    res = solve_fixed_point(y0, problem.spec, problem.tc, problem.sigma, problem.cfg,
                            delta=problem.delta, **problem.solve_kwargs)
    if args.dump_trajectory:
        write_trajectory_csv(res.phi, args.dump_trajectory)
    _emit(res.to_dict())
    return EXIT_OK


def cmd_sample(problem, args):
    code = _gate(problem, args)
    if code is not None:
        return code
    grid = _grid(args.grid, problem.spec.n_y)
    sample = sample_manifold(grid, problem.spec, problem.tc, problem.sigma, problem.cfg, delta=problem.delta,
                             workers=args.workers, with_derivative=args.derivative, **problem.solve_kwargs)
    if args.csv:
        sample.write_csv(args.csv)
    _emit(sample.to_dict())
    return EXIT_NUMERICAL if sample.failures else EXIT_OK


def cmd_jacobian(problem, args):
    code = _gate(problem, args)
    if code is not None:
        return code
    spec = problem.spec
    y0 = _vector(args.y0, spec.n_y, "y0")
    kw = dict(delta=problem.delta, **problem.solve_kwargs)
    res = solve_fixed_point(y0, spec, problem.tc, problem.sigma, problem.cfg, **kw)
    t1 = solve_T1(y0, res.phi, spec, problem.tc, problem.sigma, problem.cfg, delta=problem.delta)
    h = args.fd_step
    fd = np.zeros_like(t1.dphi)
    for j in range(spec.n_y):
        e = np.zeros(spec.n_y)
        e[j] = h
        plus = solve_fixed_point(y0 + e, spec, problem.tc, problem.sigma, problem.cfg, **kw).phi_value
        minus = solve_fixed_point(y0 - e, spec, problem.tc, problem.sigma, problem.cfg, **kw).phi_value
        fd[:, j] = (np.concatenate(plus) - np.concatenate(minus)) / (2 * h)
    nx = spec.n_x
    _emit({
        "y0": y0,
        "phi_x": res.phi_value[0],
        "phi_z": res.phi_value[1],
        "dphi_x": t1.dphi[:nx],
        "dphi_z": t1.dphi[nx:],
        "iterations": t1.iterations,
        "measured_rates": t1.measured_rates,
        "fd_step": h,
        "fd_jacobian": fd,
        "fd_discrepancy": float(np.max(np.abs(fd - t1.dphi))) if fd.size else 0.0,
    })
    return EXIT_OK


def cmd_validate(problem, args):
    code = _gate(problem, args)
    if code is not None:
        return code
    y0 = _vector(args.y0, problem.spec.n_y, "y0")
    rep = run_validation(problem.spec, problem.tc, problem.sigma, y0, horizon=args.horizon, cfg=problem.cfg,
                         delta=problem.delta, box=problem.box, seed=problem.seed, h=args.step,
                         plateau=problem.plateau, n_steps=problem.numerics["n_steps"])
    _emit(rep.to_dict())
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "sample": cmd_sample,
    "jacobian": cmd_jacobian,
    "validate": cmd_validate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="lypmfd", description="Center manifolds by Lyapunov-Perron iteration.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON problem description")
    common.add_argument("--seed", type=int, default=None, help="seed for all sampling (overrides numerics.seed)")
    common.add_argument("--force", action="store_true", help="run even if the gap conditions fail")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("check", parents=[common], help="derive constants and report the gap conditions")
    s = sub.add_parser("solve", parents=[common], help="manifold point over one center coordinate")
    s.add_argument("--y0", required=True, help="comma-separated center coordinate")
    s.add_argument("--dump-trajectory", metavar="PATH", help="write the fixed-point trajectory as CSV")
    s = sub.add_parser("sample", parents=[common], help="manifold over a grid of center coordinates")
    s.add_argument("--grid", required=True, help="lo:hi:n per center coordinate, comma-separated")
    s.add_argument("--csv", metavar="PATH", help="also write the sample as CSV")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--derivative", action="store_true", help="append DPhi to every point")
    s = sub.add_parser("jacobian", parents=[common], help="DPhi with a finite-difference cross-check")
    s.add_argument("--y0", required=True)
    s.add_argument("--fd-step", type=float, default=FD_STEP)
    s = sub.add_parser("validate", parents=[common], help="invariance, ODE residual and spot checks")
    s.add_argument("--y0", required=True)
    s.add_argument("--horizon", type=float, default=5.0)
    s.add_argument("--step", type=float, default=0.01, help="RK4 step")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        problem = build_problem(load_config(args.config), seed=args.seed, force=args.force)
        code = COMMANDS[args.command](problem, args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        _emit({"error": "config", "message": str(exc)})
        return EXIT_CONFIG
    except (ConditionError, TrichotomyError) as exc:
        log.error("condition failure: %s", exc)
        _emit({"error": "condition", "message": str(exc)})
        return EXIT_CONDITION
    except (LypmfdError, OverflowError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        _emit({"error": "numerical", "type": type(exc).__name__, "message": str(exc)})
        return EXIT_NUMERICAL
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
