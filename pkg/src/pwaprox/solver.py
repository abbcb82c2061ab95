"""Krasnoselskij fixed-point iteration on the proximal KKT operator.

One iteration::

    z = M s + c
    y = proj_Z(s)
    s = s - gamma W (z - y)

stopping when ``||z - y|| <= eps_tol``. Multipliers are recovered as
``lambda = xi (z - s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import StageInfeasibleError
from .operator import OperatorData, trivial_solution, update_linear_cost
from .problem import ConsensusProblem, StagedZ, objective

TRIVIAL_GLOBAL = "TrivialGlobal"
CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
DIVERGED = "Diverged"
STAGE_INFEASIBLE = "StageInfeasible"


@dataclass
class SolverConfig:
    xi: float = 10.0
    gamma: float = 0.5
    eps_tol: float = 1e-3
    max_iter: int = 50000
    s0: np.ndarray | None = None
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SolveResult:
    status: str
    z: np.ndarray
    y: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    iterations: int
    residual_trace: np.ndarray = field(repr=False)
    objective: float = float("nan")
    active: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status in (CONVERGED, TRIVIAL_GLOBAL)

    @property
    def residual(self) -> float:
        return float(self.residual_trace[-1]) if len(self.residual_trace) else 0.0


def _infeasible(n: int) -> SolveResult:
    nan = np.full(n, np.nan)
    return SolveResult(STAGE_INFEASIBLE, nan, nan, nan, nan, 0, np.zeros(0))


def solve(problem: ConsensusProblem, theta, op: OperatorData, cfg: SolverConfig | None = None) -> SolveResult:
    """Run the fixed-point method from ``cfg.s0`` (zero by default)."""
    cfg = cfg or SolverConfig(xi=op.xi)
    s0 = np.zeros(problem.n) if cfg.s0 is None else np.asarray(cfg.s0, dtype=float).reshape(problem.n)
    return solve_batch(problem, theta, op, cfg, s0[None, :])[0]


def solve_batch(problem: ConsensusProblem, theta, op: OperatorData, cfg: SolverConfig, S0,
                keep_trace: bool = True) -> list[SolveResult]:
    """Independent runs from every row of ``S0``, iterated together.

    Each run sees exactly the sequence of iterates a single :func:`solve`
    from the same start would produce.
    """
    if not np.isclose(op.xi, cfg.xi, rtol=1e-12, atol=0.0):
        raise ValueError(f"operator built for xi={op.xi}, config has xi={cfg.xi}")
    op = update_linear_cost(op, problem, problem.h)
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    B, n = S0.shape
    try:
        zset = problem.at(theta)
    except StageInfeasibleError:
        return [_infeasible(n) for _ in range(B)]

    z_star = trivial_solution(problem, theta, op, zset)
    if z_star is not None:
        res = SolveResult(TRIVIAL_GLOBAL, z_star.copy(), z_star.copy(), z_star.copy(), np.zeros(n), 0,
                          np.zeros(0), objective(problem, z_star))
        return [res] + [SolveResult(**{**res.__dict__}) for _ in range(B - 1)]

    if B == 1:
        return [_iterate_single(problem, zset, op, cfg, S0[0])]
    return _iterate(problem, zset, op, cfg, S0, keep_trace)


def _iterate_single(problem, zset: StagedZ, op: OperatorData, cfg: SolverConfig, s0) -> SolveResult:
    """Same iteration as :func:`_iterate` for one run, with scalar bookkeeping."""
    M, c, W, gamma = op.M, op.c, op.W, cfg.gamma
    fac, eps = cfg.divergence_factor, cfg.eps_tol
    s_cap = (fac * (1.0 + math.sqrt(s0 @ s0))) ** 2
    r_cap = math.inf
    project = zset.project_point
    trace = []
    s = s0.copy()
    status = MAX_ITERATIONS
    for j in range(1, cfg.max_iter + 1):
        z = M @ s + c
        y, active = project(s)
        d = z - y
        r = math.sqrt(d @ d)
        trace.append(r)
        if j == 1:
            r_cap = fac * (1.0 + r)
        if r <= eps:
            status = CONVERGED
            break
        s_next = s - gamma * (W @ d)
        # NaN fails both comparisons
        if not (r <= r_cap and s_next @ s_next <= s_cap):
            status = DIVERGED
            break
        if j < cfg.max_iter:
            s = s_next
    obj = objective(problem, y) if np.all(np.isfinite(y)) else float("nan")
    return SolveResult(status, z, y, s, op.xi * (z - s), j, np.array(trace), obj, active.copy())


def _iterate(problem, zset: StagedZ, op: OperatorData, cfg: SolverConfig, S0, keep_trace):
    B, n = S0.shape
    M, c, W, gamma = op.M, op.c, op.W, cfg.gamma
    fac, eps = cfg.divergence_factor, cfg.eps_tol
    S = S0.copy()
    s_cap = fac * (1.0 + np.linalg.norm(S0, axis=1))
    r_cap = np.zeros(B)
    live = np.arange(B)
    history: list[tuple[np.ndarray, np.ndarray]] = []  # (live indices, residuals) per iteration
    results: list[SolveResult | None] = [None] * B
    project = zset.project_unchecked

    for j in range(1, cfg.max_iter + 1):
        Z = S @ M + c
        Y, active = project(S)
        D = Z - Y
        r = np.sqrt(np.einsum("bi,bi->b", D, D))
        S_next = S - gamma * (D @ W)
        if j == 1:
            r_cap[live] = fac * (1.0 + r)
        if keep_trace:
            history.append((live, r))
        s_norm = np.sqrt(np.einsum("bi,bi->b", S_next, S_next))
        done = r <= eps
        # NaN fails every comparison, so non-finite runs land in ``bad``
        bad = ~((r <= r_cap[live]) & (s_norm <= s_cap[live])) & ~done
        finish = done | bad
        if j == cfg.max_iter:
            finish[:] = True
        if finish.any():
            for row in np.flatnonzero(finish):
                idx = live[row]
                status = CONVERGED if done[row] else DIVERGED if bad[row] else MAX_ITERATIONS
                z, y, s = Z[row].copy(), Y[row].copy(), S[row].copy()
                obj = objective(problem, y) if np.all(np.isfinite(y)) else float("nan")
                results[idx] = SolveResult(status, z, y, s, op.xi * (z - s), j, np.array([r[row]]), obj,
                                           active[row].copy())
            keep = ~finish
            if not keep.any():
                break
            live = live[keep]
            S = S_next[keep]
        else:
            S = S_next
    if keep_trace:
        _attach_traces(results, history)
    return results


def _attach_traces(results, history) -> None:
    if len(results) == 1:
        results[0].residual_trace = np.concatenate([r for _, r in history])
        return
    idx = np.concatenate([live for live, _ in history])
    val = np.concatenate([r for _, r in history])
    order = np.argsort(idx, kind="stable")
    idx, val = idx[order], val[order]
    bounds = np.searchsorted(idx, np.arange(len(results) + 1))
    for k, res in enumerate(results):
        res.residual_trace = val[bounds[k]:bounds[k + 1]]


def verify_proximal_kkt(problem: ConsensusProblem, theta, z, lam, xi: float, tol: float,
                        zset: StagedZ | None = None) -> tuple[float, float, bool]:
    """Residuals of the xi-proximal KKT conditions.

    Stationarity on the affine set is measured as
    ``||V'(Hz + h - lam)|| + ||Az - b||``; the projection condition as
    ``||z - proj_Z(z - lam / xi)||``.
    """
    z = np.asarray(z, dtype=float).reshape(problem.n)
    lam = np.asarray(lam, dtype=float).reshape(problem.n)
    grad = problem.H @ z + problem.h - lam
    stat = float(np.linalg.norm(problem.V.T @ grad))
    if problem.m:
        stat += float(np.linalg.norm(problem.A @ z - problem.b))
    zset = zset if zset is not None else problem.at(theta)
    y, _ = zset.project(z - lam / xi)
    proj = float(np.linalg.norm(z - y))
    return stat, proj, bool(stat <= tol and proj <= tol)


def fixed_point_defect(op: OperatorData, zset: StagedZ, s, gamma: float) -> float:
    """``||s - ((1 - gamma) s + gamma T(s))||``."""
    y, _ = zset.project(s)
    return float(gamma * np.linalg.norm(op.W @ (op.M @ s + op.c - y)))
