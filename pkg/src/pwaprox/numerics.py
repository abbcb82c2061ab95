"""Dense linear algebra helpers and a small convex QP solver.

Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .errors import (
    DimensionMismatchError,
    MaxPivotsError,
    NotSymmetricError,
    RankDeficientError,
)

RANK_TOL = 1e-10
FEAS_TOL = 1e-8

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


def as_matrix(x, cols: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a float 2-D array; ``None`` or ``[]`` become ``(0, cols)``."""
    if x is None:
        return np.zeros((0, cols or 0))
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        if a.ndim == 2 and cols is None:
            return a.reshape(a.shape[0], a.shape[1])
        return np.zeros((0, cols or 0))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatchError(f"expected {cols} columns, got {a.shape[1]}")
    return a


def as_vector(x, size: int | None = None) -> np.ndarray:
    if x is None:
        return np.zeros(size or 0)
    v = np.asarray(x, dtype=float).reshape(-1)
    if size is not None and v.shape[0] != size:
        raise DimensionMismatchError(f"expected vector of length {size}, got {v.shape[0]}")
    return v


def nullspace_and_particular(A, b) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal nullspace basis of ``A`` and the minimum-norm solution of ``Az = b``.

    Raises RankDeficientError when ``A`` does not have full row rank.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatchError("A must be a matrix")
    m, n = A.shape
    b = as_vector(b, m)
    if m == 0:
        return np.eye(n), np.zeros(n)
    if m > n:
        raise RankDeficientError(f"A has more rows ({m}) than columns ({n})")
    U, sv, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(sv > RANK_TOL * sv[0])) if sv[0] > 0 else 0
    if rank < m:
        raise RankDeficientError(f"A has numerical rank {rank} < {m}")
    V = Vt[m:].T.copy()
    v_bar = Vt[:m].T @ ((U.T @ b) / sv)
    return V, v_bar


def sym_eigendecomposition(S) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-pairs of a symmetric matrix with eigenvalues in descending order."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatchError("S must be square")
    nrm = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > 1e-12 * nrm:
        raise NotSymmetricError("matrix is not symmetric")
    lam, Q = np.linalg.eigh(0.5 * (S + S.T))
    return Q[:, ::-1].copy(), lam[::-1].copy()


@dataclass
class QPResult:
    z: np.ndarray | None
    status: str
    active: list[int] = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve_convex_qp(P, q, Geq=None, geq=None, Fineq=None, fineq=None,
                    tol: float = 1e-10, max_pivots: int | None = None) -> QPResult:
    """Minimize ``0.5 z'Pz + q'z`` s.t. ``Geq z = geq`` and ``Fineq z <= fineq``.

    Equalities are eliminated through a nullspace basis; the remaining
    inequality-constrained problem is solved with a primal active-set method
    started from a least-squares phase-1 point. Ties in the pivoting rules go
    to the lowest constraint index.

    An empty feasible set is a legal outcome and is returned with status
    ``"infeasible"``; hitting the pivot limit raises MaxPivotsError.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    q = as_vector(q, n)
    Geq = as_matrix(Geq, n)
    geq = as_vector(geq, Geq.shape[0])
    Fineq = as_matrix(Fineq, n)
    fineq = as_vector(fineq, Fineq.shape[0])

    # eliminate equalities: z = z_p + N v
    if Geq.shape[0]:
        U, sv, Vt = np.linalg.svd(Geq, full_matrices=True)
        smax = sv[0] if sv.size else 0.0
        r = int(np.sum(sv > RANK_TOL * max(smax, 1e-300))) if smax > 0 else 0
        if r:
            z_p = Vt[:r].T @ ((U[:, :r].T @ geq) / sv[:r])
        else:
            z_p = np.zeros(n)
        if np.linalg.norm(Geq @ z_p - geq) > FEAS_TOL * (1.0 + np.linalg.norm(geq)):
            return QPResult(None, INFEASIBLE)
        N = Vt[r:].T
    else:
        z_p = np.zeros(n)
        N = np.eye(n)
    d = N.shape[1]

    Fr = Fineq @ N
    fr = fineq - Fineq @ z_p
    row_norm = np.linalg.norm(Fr, axis=1)
    scale = np.maximum(1.0, np.linalg.norm(Fineq, axis=1))
    zero_rows = row_norm <= 1e-12 * scale
    if np.any(fr[zero_rows] < -FEAS_TOL * scale[zero_rows]):
        return QPResult(None, INFEASIBLE)
    keep = np.flatnonzero(~zero_rows)
    Fr = Fr[keep]
    fr = fr[keep]

    if d == 0:
        if Fr.shape[0] and np.max(Fr @ np.zeros(0) - fr) > FEAS_TOL:
            return QPResult(None, INFEASIBLE)
        return QPResult(z_p, OPTIMAL)

    Pr = N.T @ P @ N
    Pr = 0.5 * (Pr + Pr.T)
    qr = N.T @ (P @ z_p + q)

    v0 = _phase_one(Pr, qr, Fr, fr)
    if v0 is None:
        return QPResult(None, INFEASIBLE)
    if max_pivots is None:
        max_pivots = 50 * (Fr.shape[0] + d) + 100
    v, work, its = _primal_active_set(Pr, qr, Fr, fr, v0, tol, max_pivots)
    return QPResult(z_p + N @ v, OPTIMAL, sorted(int(keep[j]) for j in work), its)


def _phase_one(P, q, F, f) -> np.ndarray | None:
    m, d = F.shape
    if m == 0:
        return np.linalg.solve(P, -q)
    ftol = FEAS_TOL * (1.0 + np.max(np.abs(f)))
    v = np.linalg.solve(P, -q)
    if np.max(F @ v - f) <= ftol:
        return v
    if np.max(-f) <= ftol:
        return np.zeros(d)
    # min ||F v + t - f||^2 over v free, t >= 0
    Aug = np.hstack([F, np.eye(m)])
    lb = np.concatenate([np.full(d, -np.inf), np.zeros(m)])
    ub = np.full(d + m, np.inf)
    res = lsq_linear(Aug, f, bounds=(lb, ub), method="bvls", tol=1e-14)
    resid = np.linalg.norm(Aug @ res.x - f)
    if resid > FEAS_TOL * (1.0 + np.linalg.norm(f)):
        return None
    return res.x[:d]


def _primal_active_set(P, q, F, f, v, tol, max_pivots):
    d = P.shape[0]
    m = F.shape[0]
    v = v.copy()
    work: list[int] = []
    for it in range(max_pivots):
        g = P @ v + q
        k = len(work)
        if k:
            Fw = F[work]
            K = np.zeros((d + k, d + k))
            K[:d, :d] = P
            K[:d, d:] = Fw.T
            K[d:, :d] = Fw
            sol = np.linalg.solve(K, np.concatenate([-g, np.zeros(k)]))
            p, mu = sol[:d], sol[d:]
        else:
            p = np.linalg.solve(P, -g)
            mu = np.zeros(0)
        if np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(v)):
            mu_tol = tol * (1.0 + np.linalg.norm(g))
            neg = [i for i in range(k) if mu[i] < -mu_tol]
            if not neg:
                return v + p, work, it
            work.pop(min(neg, key=lambda i: work[i]))
            continue
        Fp = F @ p
        slack = np.maximum(f - F @ v, 0.0)
        alpha, block = 1.0, None
        in_work = set(work)
        for j in range(m):
            if j in in_work or Fp[j] <= 1e-14 * (1.0 + np.linalg.norm(p)):
                continue
            a = slack[j] / Fp[j]
            if a < alpha:
                alpha, block = a, j
        v = v + alpha * p
        if block is not None:
            work.append(block)
    raise MaxPivotsError(f"active-set QP exceeded {max_pivots} pivots")
