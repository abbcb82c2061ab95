"""Precomputed data of the proximal KKT operator for one proximal scaling ``xi``.

    R = V (V'HV)^{-1} V'
    M = xi (xi R - I)^{-1} R
    c = (xi R - I)^{-1} (R (h + H v_bar) - v_bar)
    W = Q diag(0.5 Lambda^{-1}, -I) Q'      with  M = Q diag(Lambda, 0) Q'
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatchError, RankMismatchError, XiTooSmallError
from .numerics import as_vector, sym_eigendecomposition
from .problem import ConsensusProblem

XI_MARGIN = 1e-9
EIG_ZERO_RTOL = 1e-9
TRIVIAL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class OperatorData:
    xi: float
    R: np.ndarray
    M: np.ndarray
    c: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    lambdas: np.ndarray
    rank: int
    K: np.ndarray  # (xi R - I)^{-1}
    h: np.ndarray

    def apply_T(self, s, y) -> np.ndarray:
        """``T(s) = s - W (M s + c - y)`` for a given projection ``y`` of ``s``."""
        return s - self.W @ (self.M @ s + self.c - y)


def min_admissible_xi(problem: ConsensusProblem) -> float:
    """``1 / lambda_min^+(R)``, which equals ``lambda_max(V'HV)``."""
    if problem.V.shape[1] == 0:
        return 0.0
    return float(np.linalg.eigvalsh(problem.V.T @ problem.H @ problem.V)[-1])


def build_operator(problem: ConsensusProblem, xi: float) -> OperatorData:
    xi = float(xi)
    thr = min_admissible_xi(problem)
    if not np.isfinite(xi) or xi <= 0 or xi <= thr * (1.0 + XI_MARGIN):
        hint = ""
        if problem.source == "mpc":
            hint = f"for MPC problems this means xi > lambda_max(H) = {np.linalg.eigvalsh(problem.H)[-1]:.6g}"
        raise XiTooSmallError(xi, thr, hint)
    n, V, H = problem.n, problem.V, problem.H
    R = V @ np.linalg.solve(V.T @ H @ V, V.T) if V.shape[1] else np.zeros((n, n))
    R = 0.5 * (R + R.T)
    K = np.linalg.inv(xi * R - np.eye(n))
    K = 0.5 * (K + K.T)
    M = xi * K @ R
    M = 0.5 * (M + M.T)
    Q, lam = sym_eigendecomposition(M)
    cutoff = EIG_ZERO_RTOL * max(np.max(np.abs(lam), initial=0.0), 1.0)
    rank = int(np.sum(np.abs(lam) > cutoff))
    if rank != n - problem.m:
        raise RankMismatchError(f"M has {rank} eigenvalues above {cutoff:.3g}, expected n - m = {n - problem.m}")
    scale = np.concatenate([0.5 / lam[:rank], -np.ones(n - rank)])
    W = (Q * scale) @ Q.T
    W = 0.5 * (W + W.T)
    c = _offset(K, R, H, problem.v_bar, problem.h)
    return OperatorData(xi, R, M, c, W, Q, lam, rank, K, problem.h.copy())


def _offset(K, R, H, v_bar, h) -> np.ndarray:
    return K @ (R @ (h + H @ v_bar) - v_bar)


def update_linear_cost(op: OperatorData, problem: ConsensusProblem, h) -> OperatorData:
    """Same operator with a new linear cost; only ``c`` is recomputed."""
    h = as_vector(h, problem.n)
    if h.shape[0] != op.M.shape[0]:
        raise DimensionMismatchError("h does not match the operator dimension")
    if np.array_equal(h, op.h):
        return op
    return replace(op, c=_offset(op.K, op.R, problem.H, problem.v_bar, h), h=h.copy())


def unconstrained_minimizer(problem: ConsensusProblem, op: OperatorData) -> np.ndarray:
    """Minimizer of the objective over the affine set alone."""
    return problem.v_bar - op.R @ (op.h + problem.H @ problem.v_bar)


def trivial_solution(problem: ConsensusProblem, theta, op: OperatorData, zset=None) -> np.ndarray | None:
    """The affine-set minimizer if it already lies in ``Z(theta)``, else ``None``."""
    z = unconstrained_minimizer(problem, op)
    zset = zset if zset is not None else problem.at(theta)
    return z if zset.contains(z, TRIVIAL_TOL) else None
