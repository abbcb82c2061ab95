"""Multistart study, horizon benchmark and method comparison.

All randomness comes from a seeded PCG64 generator so runs are repeatable.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .admm import AdmmConfig, AdmmFactor, solve_admm
from .mpc import PwaSystem, build_consensus
from .operator import build_operator
from .oracle import DEFAULT_CAP, global_solve
from .problem import ConsensusProblem
from .solver import SolverConfig, solve, solve_batch, verify_proximal_kkt

Z0_RANGE = 1.0
LAMBDA0_RANGE = 10.0
BATCH = 250


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_starts(n: int, K: int, xi: float, seed: int) -> np.ndarray:
    """``s0 = z0 - lambda0 / xi`` with ``z0 ~ U[-1, 1]^n`` and ``lambda0 ~ U[-10, 10]^n``, one row per run."""
    rng = rng_for(seed)
    z0 = rng.uniform(-Z0_RANGE, Z0_RANGE, size=(K, n))
    lam0 = rng.uniform(-LAMBDA0_RANGE, LAMBDA0_RANGE, size=(K, n))
    return z0 - lam0 / xi


@dataclass
class MultistartRun:
    index: int
    status: str
    iterations: int
    objective: float
    kkt_stationarity: float
    kkt_projection: float
    kkt_ok: bool


@dataclass
class MultistartSummary:
    runs: list[MultistartRun]
    seconds: float

    @property
    def convergence_rate(self) -> float:
        return sum(r.status == "Converged" or r.status == "TrivialGlobal" for r in self.runs) / len(self.runs)

    def converged_objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.runs if r.status in ("Converged", "TrivialGlobal")])


def multistart(problem: ConsensusProblem, theta, cfg: SolverConfig, K: int, seed: int,
               kkt_tol: float = 1e-6, batch: int = BATCH) -> MultistartSummary:
    """Run ``K`` solves from random starts; each converged run is KKT-checked."""
    op = build_operator(problem, cfg.xi)
    S0 = random_starts(problem.n, K, cfg.xi, seed)
    zset = problem.at(theta)
    t0 = time.perf_counter()
    runs = []
    for lo in range(0, K, batch):
        for off, res in enumerate(solve_batch(problem, theta, op, cfg, S0[lo:lo + batch], keep_trace=False)):
            stat = proj = float("nan")
            ok = False
            if res.converged:
                stat, proj, ok = verify_proximal_kkt(problem, theta, res.z, res.lam, cfg.xi, kkt_tol, zset)
            runs.append(MultistartRun(lo + off, res.status, res.iterations, res.objective, stat, proj, ok))
    return MultistartSummary(runs, time.perf_counter() - t0)


def histogram(values, bins: int = 50) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(0, dtype=int), np.zeros(1)
    return np.histogram(values, bins=bins)


@dataclass
class BenchRow:
    N: int
    n: int
    status: str
    iterations: int
    runtime_ms: float
    objective: float


def bench(system: PwaSystem, theta, horizons, cfg: SolverConfig) -> list[BenchRow]:
    """One timed solve per horizon (operator construction excluded from the time)."""
    rows = []
    for N in horizons:
        problem = build_consensus(system, N)
        op = build_operator(problem, cfg.xi)
        t0 = time.perf_counter()
        res = solve(problem, theta, op, cfg)
        ms = 1e3 * (time.perf_counter() - t0)
        rows.append(BenchRow(N, problem.n, res.status, res.iterations, ms, res.objective))
    return rows


@dataclass
class CompareRow:
    method: str
    status: str
    iterations: int
    runtime_ms: float
    objective: float
    rel_subopt: float  # relative to the oracle optimum, nan without one


def compare(problem: ConsensusProblem, theta, solver_cfg: SolverConfig, admm_cfg: AdmmConfig,
            cap: int = DEFAULT_CAP, with_oracle: bool = True) -> list[CompareRow]:
    rows = []
    op = build_operator(problem, solver_cfg.xi)
    t0 = time.perf_counter()
    fp = solve(problem, theta, op, solver_cfg)
    rows.append(["fixed_point", fp.status, fp.iterations, 1e3 * (time.perf_counter() - t0), fp.objective])
    factor = AdmmFactor(problem, admm_cfg.rho)
    t0 = time.perf_counter()
    ad = solve_admm(problem, theta, admm_cfg, factor)
    rows.append(["admm", ad.status, ad.iterations, 1e3 * (time.perf_counter() - t0), ad.objective])
    best = float("nan")
    if with_oracle:
        t0 = time.perf_counter()
        orc = global_solve(problem, theta, cap)
        ms = 1e3 * (time.perf_counter() - t0)
        if orc is None:
            rows.append(["oracle", "StageInfeasible", 0, ms, float("nan")])
        else:
            best = orc.objective
            rows.append(["oracle", "Converged", orc.n_qps, ms, orc.objective])
    out = []
    for method, status, it, ms, obj in rows:
        rel = (obj - best) / max(1.0, abs(best)) if np.isfinite(best) else float("nan")
        out.append(CompareRow(method, status, it, ms, obj, rel))
    return out
