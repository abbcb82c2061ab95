"""Exact global solutions by enumerating region assignments, and closed-loop simulation.

Every stage picks one component; the remaining problem is a convex QP over
the affine set intersected with the chosen polyhedra. The best of all those
QPs is the global optimum.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmConfig, AdmmFactor, solve_admm
from .errors import NoActiveRegionError, StageInfeasibleError, TooManyCombinationsError
from .mpc import Layout, PwaSystem, build_consensus
from .numerics import solve_convex_qp
from .operator import build_operator
from .problem import ConsensusProblem, objective
from .solver import CONVERGED, STAGE_INFEASIBLE, SolverConfig, solve

DEFAULT_CAP = 10**6
CONTROLLERS = ("fixed_point", "admm", "oracle")


@dataclass
class OracleResult:
    z: np.ndarray
    objective: float
    assignment: tuple[int, ...]  # chosen component per stage, 0-based
    n_qps: int
    n_feasible: int


def n_assignments(problem: ConsensusProblem) -> int:
    return math.prod(s.m for s in problem.stages)


def assignment_qp(problem: ConsensusProblem, zset, assignment) -> tuple[np.ndarray, float] | None:
    """Convex QP over the affine set and one component per stage; ``None`` if infeasible."""
    n = problem.n
    Geq, geq, Fin, fin = [problem.A], [problem.b], [], []
    for k, i in enumerate(assignment):
        fp = zset.components[k][i]
        if fp is None:
            return None
        lo, hi = problem.offsets[k], problem.offsets[k + 1]
        G = np.zeros((fp.G.shape[0], n))
        G[:, lo:hi] = fp.G
        F = np.zeros((fp.F.shape[0], n))
        F[:, lo:hi] = fp.F
        Geq.append(G)
        geq.append(fp.g)
        Fin.append(F)
        fin.append(fp.f)
    res = solve_convex_qp(problem.H, problem.h, np.vstack(Geq), np.concatenate(geq),
                          np.vstack(Fin), np.concatenate(fin))
    if not res.optimal:
        return None
    return res.z, objective(problem, res.z)


def global_solve(problem: ConsensusProblem, theta, cap: int = DEFAULT_CAP) -> OracleResult | None:
    """Best convex QP over all region assignments; ``None`` if every assignment is infeasible.

    Assignments are visited in lexicographic order and only a strictly
    better objective replaces the incumbent, so ties go to the
    lexicographically smallest assignment.
    """
    total = n_assignments(problem)
    if total > cap:
        raise TooManyCombinationsError(f"{total} region assignments exceed the cap of {cap}")
    try:
        zset = problem.at(theta)
    except StageInfeasibleError:
        return None
    # empty components are filtered before enumeration
    choices = [[i for i, fp in enumerate(row) if fp is not None] for row in zset.components]
    best: OracleResult | None = None
    n_qps = n_feas = 0
    for assignment in itertools.product(*choices):
        n_qps += 1
        sol = assignment_qp(problem, zset, assignment)
        if sol is None:
            continue
        n_feas += 1
        z, val = sol
        if best is None or val < best.objective:
            best = OracleResult(z, val, tuple(assignment), 0, 0)
    if best is not None:
        best.n_qps, best.n_feasible = n_qps, n_feas
    return best


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, nx)
    inputs: np.ndarray  # (T, nu)
    objectives: np.ndarray
    statuses: list[str]
    iterations: np.ndarray
    runtimes_ms: np.ndarray
    stop_reason: str | None = None
    regions: list[int] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.statuses)


class _Controller:
    def __init__(self, system: PwaSystem, kind: str, horizon: int | None, solver_cfg: SolverConfig | None,
                 admm_cfg: AdmmConfig | None, cap: int):
        if kind not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        self.kind = kind
        self.problem = build_consensus(system, horizon)
        self.layout = Layout(system.nx, system.nu, horizon or system.N)
        self.cap = cap
        if kind == "fixed_point":
            self.cfg = solver_cfg or SolverConfig()
            self.op = build_operator(self.problem, self.cfg.xi)
        elif kind == "admm":
            self.cfg = admm_cfg or AdmmConfig()
            self.factor = AdmmFactor(self.problem, self.cfg.rho)

    def __call__(self, x):
        """Returns ``(u_1 or None, status, iterations, objective)``."""
        if self.kind == "oracle":
            res = global_solve(self.problem, x, self.cap)
            if res is None:
                return None, STAGE_INFEASIBLE, 0, float("nan")
            return res.z[self.layout.u(1)], CONVERGED, res.n_qps, res.objective
        if self.kind == "fixed_point":
            res = solve(self.problem, x, self.op, self.cfg)
        else:
            res = solve_admm(self.problem, x, self.cfg, self.factor)
        if res.status == STAGE_INFEASIBLE:
            return None, res.status, 0, float("nan")
        # y lies in Z, so its first input respects the input constraints
        return res.y[self.layout.u(1)], res.status, res.iterations, res.objective


def closed_loop(system: PwaSystem, controller: str, theta0, steps: int, horizon: int | None = None,
                solver_cfg: SolverConfig | None = None, admm_cfg: AdmmConfig | None = None,
                cap: int = DEFAULT_CAP, strict: bool = False) -> Trajectory:
    """Receding-horizon simulation: solve, apply the first input, advance the true dynamics.

    The plant uses the first-stage regions of ``system`` with ties going to the
    lowest region index. If no region contains the state and input the
    simulation stops (or raises :class:`NoActiveRegionError` when ``strict``).
    """
    ctrl = _Controller(system, controller, horizon, solver_cfg, admm_cfg, cap)
    x = np.asarray(theta0, dtype=float).reshape(system.nx)
    xs, us, objs, stats, iters, times, regs = [x.copy()], [], [], [], [], [], []
    reason = None
    for _ in range(steps):
        t0 = time.perf_counter()
        u, status, it, obj = ctrl(x)
        times.append(1e3 * (time.perf_counter() - t0))
        stats.append(status)
        iters.append(it)
        objs.append(obj)
        if u is None:
            reason = f"controller reported {status}"
            break
        nxt = system.step(x, u, 0)
        if nxt is None:
            reason = f"no region contains state {x.tolist()} and input {u.tolist()}"
            if strict:
                raise NoActiveRegionError(reason)
            us.append(u.copy())
            break
        x, reg = nxt
        us.append(u.copy())
        xs.append(x.copy())
        regs.append(reg)
    return Trajectory(np.array(xs), np.array(us).reshape(-1, system.nu), np.array(objs), stats,
                      np.array(iters), np.array(times), reason, regs)
