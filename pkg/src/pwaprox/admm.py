"""ADMM baseline on the same consensus splitting (scaled dual form).

    z    = argmin 0.5 z'Hz + h'z + rho/2 ||z - y + u||^2   s.t.  A z = b
    y    = proj_Z(z + u)
    u    = u + z - y

Terminates when the primal residual ``||z - y||`` and the dual residual
``rho ||y - y_prev||`` are both below ``eps_tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import StageInfeasibleError
from .problem import ConsensusProblem, objective
from .solver import CONVERGED, DIVERGED, MAX_ITERATIONS, STAGE_INFEASIBLE


@dataclass
class AdmmConfig:
    rho: float = 10.0
    eps_tol: float = 1e-3
    max_iter: int = 10000
    y0: np.ndarray | None = None
    lambda0: np.ndarray | None = None  # scaled dual u
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class AdmmResult:
    status: str
    z: np.ndarray
    y: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    iterations: int
    primal_trace: np.ndarray = field(repr=False)
    dual_trace: np.ndarray = field(repr=False)
    objective: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class AdmmFactor:
    """Cached LU factorization of ``[[H + rho I, A'], [A, 0]]``."""

    def __init__(self, problem: ConsensusProblem, rho: float):
        n, m = problem.n, problem.m
        K = np.zeros((n + m, n + m))
        K[:n, :n] = problem.H + rho * np.eye(n)
        K[:n, n:] = problem.A.T
        K[n:, :n] = problem.A
        self.rho = rho
        self.n = n
        self.lu = lu_factor(K)
        self.rhs = np.zeros(n + m)
        self.rhs[n:] = problem.b

    def solve(self, q: np.ndarray) -> np.ndarray:
        """``z`` minimizing ``0.5 z'(H + rho I)z - q'z`` on ``A z = b``."""
        self.rhs[: self.n] = q
        return lu_solve(self.lu, self.rhs)[: self.n]


def solve_admm(problem: ConsensusProblem, theta, cfg: AdmmConfig | None = None,
               factor: AdmmFactor | None = None) -> AdmmResult:
    """Run ADMM from ``y0`` and scaled dual ``lambda0`` (zero by default).

    The returned ``lam = -rho u`` is the multiplier estimate for which
    ``(y, lam)`` can be checked with
    :func:`~pwaprox.solver.verify_proximal_kkt` at ``xi = rho``.
    """
    cfg = cfg or AdmmConfig()
    n, rho = problem.n, cfg.rho
    y = np.zeros(n) if cfg.y0 is None else np.asarray(cfg.y0, dtype=float).reshape(n).copy()
    u = np.zeros(n) if cfg.lambda0 is None else np.asarray(cfg.lambda0, dtype=float).reshape(n).copy()
    try:
        zset = problem.at(theta)
    except StageInfeasibleError:
        nan = np.full(n, np.nan)
        return AdmmResult(STAGE_INFEASIBLE, nan, nan, nan, nan, 0, np.zeros(0), np.zeros(0))
    if factor is None or factor.rho != rho or factor.n != n:
        factor = AdmmFactor(problem, rho)
    h = problem.h
    cap = cfg.divergence_factor * (1.0 + float(np.linalg.norm(y)) + float(np.linalg.norm(u)))
    primal, dual = [], []
    status = MAX_ITERATIONS
    for j in range(1, cfg.max_iter + 1):
        z = factor.solve(rho * (y - u) - h)
        y_prev = y
        y, _ = zset.project_point(z + u)
        d = z - y
        u = u + d
        r = math.sqrt(d @ d)
        dy = y - y_prev
        s = rho * math.sqrt(dy @ dy)
        primal.append(r)
        dual.append(s)
        if r <= cfg.eps_tol and s <= cfg.eps_tol:
            status = CONVERGED
            break
        if not (r <= cap and math.sqrt(u @ u) <= cap):
            status = DIVERGED
            break
    obj = objective(problem, y) if np.all(np.isfinite(y)) else float("nan")
    return AdmmResult(status, z, y, u, -rho * u, j, np.array(primal), np.array(dual), obj)
