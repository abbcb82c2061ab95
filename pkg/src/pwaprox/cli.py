"""Command line entry point.

Exit codes: 0 success, 1 assumption check found a violation, 2 solver did not
converge, 3 input error, 4 infeasible parameter.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import a3check, experiments, oracle
from .admm import AdmmConfig, solve_admm
from .errors import PwaProxError, StageInfeasibleError, TooManyCombinationsError
from .mpc import PwaSystem, build_consensus, system_from_dict
from .operator import build_operator
from .problem import ConsensusProblem, problem_from_dict
from .solver import STAGE_INFEASIBLE, SolverConfig, solve

EXIT_OK = 0
EXIT_VIOLATED = 1
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3
EXIT_INFEASIBLE = 4


class InputError(Exception):
    pass


def bundled_example_path() -> Path:
    return Path(str(resources.files("pwaprox") / "data" / "ex51.json"))


def _load(args) -> tuple[ConsensusProblem, PwaSystem | None, np.ndarray | None]:
    """Problem, the PWA system it was built from (if any) and the theta stored in the file."""
    path = Path(args.problem) if args.problem else bundled_example_path()
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from e
    theta = np.asarray(d["theta"], dtype=float) if "theta" in d else None
    try:
        if "regions" in d:
            system = system_from_dict(d, args.N)
            return build_consensus(system), system, theta
        if "stages" in d:
            return problem_from_dict(d), None, theta
    except (KeyError, ValueError, TypeError, PwaProxError) as e:
        raise InputError(f"malformed problem file {path}: {e}") from e
    raise InputError(f"{path} is neither a PWA system (has 'regions') nor a consensus problem (has 'stages')")


def _theta(args, problem: ConsensusProblem, stored) -> np.ndarray:
    if args.theta is not None:
        try:
            theta = np.array([float(t) for t in args.theta.split(",")])
        except ValueError as e:
            raise InputError(f"--theta must be comma separated numbers: {e}") from e
    elif stored is not None:
        theta = stored
    else:
        theta = np.zeros(problem.p)
    if theta.size != problem.p:
        raise InputError(f"theta has {theta.size} entries, problem expects {problem.p}")
    return theta


def _solver_cfg(args) -> SolverConfig:
    return SolverConfig(xi=args.xi, gamma=args.gamma, eps_tol=args.eps, max_iter=args.max_iter)


def _admm_cfg(args) -> AdmmConfig:
    return AdmmConfig(rho=args.rho, eps_tol=args.eps, max_iter=args.admm_max_iter)


def _out(args):
    return open(args.out, "w", newline="") if args.out else sys.stdout


def _emit_json(args, payload) -> None:
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _finite(x):
    return float(x) if np.isfinite(x) else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    problem, _, stored = _load(args)
    theta = _theta(args, problem, stored)
    if args.method == "admm":
        res = solve_admm(problem, theta, _admm_cfg(args))
        payload = {"method": "admm", "status": res.status, "objective": _finite(res.objective),
                   "iterations": res.iterations,
                   "primal_residual": float(res.primal_trace[-1]) if len(res.primal_trace) else None,
                   "dual_residual": float(res.dual_trace[-1]) if len(res.dual_trace) else None,
                   "y": res.y.tolist()}
        ok = res.converged
    else:
        op = build_operator(problem, args.xi)
        res = solve(problem, theta, op, _solver_cfg(args))
        payload = {"method": "fixed_point", "status": res.status, "objective": _finite(res.objective),
                   "iterations": res.iterations, "residual": res.residual,
                   "residual_first": float(res.residual_trace[0]) if len(res.residual_trace) else None,
                   "y": res.y.tolist()}
        ok = res.converged
    _emit_json(args, payload)
    if res.status == STAGE_INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    problem, _, stored = _load(args)
    theta = _theta(args, problem, stored)
    res = oracle.global_solve(problem, theta, args.cap)
    if res is None:
        _emit_json(args, {"status": STAGE_INFEASIBLE})
        return EXIT_INFEASIBLE
    _emit_json(args, {"status": "Optimal", "objective": res.objective, "assignment": list(res.assignment),
                      "qps_solved": res.n_qps, "feasible_assignments": res.n_feasible, "z": res.z.tolist()})
    return EXIT_OK


def cmd_mpc_sim(args) -> int:
    problem, system, stored = _load(args)
    if system is None:
        raise InputError("mpc-sim needs a PWA system file (with 'regions')")
    theta = _theta(args, problem, stored)
    traj = oracle.closed_loop(system, args.method, theta, args.steps, horizon=args.N,
                              solver_cfg=_solver_cfg(args), admm_cfg=_admm_cfg(args), cap=args.cap)
    fh = _out(args)
    w = csv.writer(fh)
    w.writerow(["step"] + [f"x{i + 1}" for i in range(system.nx)] + [f"u{i + 1}" for i in range(system.nu)]
               + ["status", "iterations", "objective", "runtime_ms"])
    for k in range(traj.steps):
        u = traj.inputs[k] if k < len(traj.inputs) else np.full(system.nu, np.nan)
        w.writerow([k] + [repr(float(v)) for v in traj.states[k]] + [repr(float(v)) for v in u]
                   + [traj.statuses[k], int(traj.iterations[k]), repr(float(traj.objectives[k])),
                      f"{traj.runtimes_ms[k]:.3f}"])
    if fh is not sys.stdout:
        fh.close()
    if traj.stop_reason:
        print(f"stopped early: {traj.stop_reason}", file=sys.stderr)
    if any(s == STAGE_INFEASIBLE for s in traj.statuses):
        return EXIT_INFEASIBLE
    return EXIT_OK if all(s in ("Converged", "TrivialGlobal") for s in traj.statuses) else EXIT_NOT_CONVERGED


def cmd_multistart(args) -> int:
    problem, _, stored = _load(args)
    theta = _theta(args, problem, stored)
    summ = experiments.multistart(problem, theta, _solver_cfg(args), args.K, args.seed)
    obj = summ.converged_objectives()
    counts, edges = experiments.histogram(obj, args.bins)
    fh = _out(args)
    w = csv.writer(fh)
    w.writerow(["bin_low_objective", "bin_high_objective", "count_runs"])
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    if fh is not sys.stdout:
        fh.close()
    summary = {"runs": len(summ.runs), "convergence_rate": summ.convergence_rate,
               "kkt_pass_rate": float(np.mean([r.kkt_ok for r in summ.runs if r.status in ("Converged", "TrivialGlobal")]))
               if len(obj) else 0.0,
               "objective_min": _finite(obj.min()) if len(obj) else None,
               "seconds": round(summ.seconds, 3)}
    print(json.dumps(summary), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_bench(args) -> int:
    _, system, stored = _load(args)
    if system is None:
        raise InputError("bench needs a PWA system file (with 'regions')")
    try:
        horizons = [int(v) for v in args.horizons.split(",")]
    except ValueError as e:
        raise InputError(f"--horizons must be comma separated integers: {e}") from e
    theta = _theta(args, build_consensus(system, horizons[0]), stored)
    rows = experiments.bench(system, theta, horizons, _solver_cfg(args))
    fh = _out(args)
    w = csv.writer(fh)
    w.writerow(["N", "n_variables", "status", "iterations", "runtime_ms", "objective"])
    for r in rows:
        w.writerow([r.N, r.n, r.status, r.iterations, f"{r.runtime_ms:.3f}", repr(float(r.objective))])
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def cmd_compare(args) -> int:
    problem, _, stored = _load(args)
    theta = _theta(args, problem, stored)
    rows = experiments.compare(problem, theta, _solver_cfg(args), _admm_cfg(args), args.cap)
    fh = _out(args)
    w = csv.writer(fh)
    w.writerow(["method", "status", "iterations", "runtime_ms", "objective", "relative_suboptimality"])
    for r in rows:
        w.writerow([r.method, r.status, r.iterations, f"{r.runtime_ms:.3f}", repr(float(r.objective)),
                    repr(float(r.rel_subopt))])
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def cmd_check_a3(args) -> int:
    problem, _, _ = _load(args)
    report = a3check.check_a3(problem.stages, cap=args.cap)
    payload = {"verdict": "satisfied" if report.satisfied else "violated",
               "structures_checked": report.structures_checked,
               "violations": [{"stage": v.stage, "components": list(v.structure.components),
                               "active_sets": [list(a) for a in v.structure.active_sets],
                               "witness": v.witness.tolist(), "z": v.z.tolist(), "theta": v.theta.tolist()}
                              for v in report.violations]}
    _emit_json(args, payload)
    return EXIT_OK if report.satisfied else EXIT_VIOLATED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="PWA system or consensus problem JSON (default: bundled example)")
    common.add_argument("--N", type=int, default=None, help="horizon for PWA system files")
    common.add_argument("--theta", default=None, help="parameter as comma separated values")
    common.add_argument("--xi", type=float, default=10.0)
    common.add_argument("--gamma", type=float, default=0.5)
    common.add_argument("--eps", type=float, default=1e-3)
    common.add_argument("--max-iter", type=int, default=50000)
    common.add_argument("--rho", type=float, default=10.0)
    common.add_argument("--admm-max-iter", type=int, default=10000)
    common.add_argument("--cap", type=int, default=None, help="enumeration cap")
    common.add_argument("--out", default=None, help="output file (default: standard output)")

    p = argparse.ArgumentParser(prog="pwaprox", description="Fixed-point solver for PWA model predictive control.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="one solve, JSON result")
    s.add_argument("--method", choices=("fixed_point", "admm"), default="fixed_point")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("mpc-sim", parents=[common], help="closed-loop simulation, CSV trajectory")
    s.add_argument("--method", choices=oracle.CONTROLLERS, default="fixed_point")
    s.add_argument("--steps", type=int, default=10)
    s.set_defaults(func=cmd_mpc_sim)
    s = sub.add_parser("multistart", parents=[common], help="random restarts, objective histogram CSV")
    s.add_argument("--K", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bins", type=int, default=50)
    s.set_defaults(func=cmd_multistart)
    s = sub.add_parser("bench", parents=[common], help="runtime over a horizon sweep, CSV")
    s.add_argument("--horizons", default="5,10,20,40")
    s.set_defaults(func=cmd_bench)
    s = sub.add_parser("oracle", parents=[common], help="global optimum by enumeration, JSON")
    s.set_defaults(func=cmd_oracle)
    s = sub.add_parser("compare", parents=[common], help="fixed point vs ADMM vs oracle, CSV")
    s.set_defaults(func=cmd_compare)
    s = sub.add_parser("check-a3", parents=[common], help="exact local regularity check, JSON")
    s.set_defaults(func=cmd_check_a3)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    if args.cap is None:
        args.cap = a3check.DEFAULT_CAP if args.command == "check-a3" else oracle.DEFAULT_CAP
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StageInfeasibleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TooManyCombinationsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, PwaProxError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
