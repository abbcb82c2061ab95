"""Parametric convex polyhedra ``{z : G z = g(theta), F z <= f(theta)}``.

Projection onto a small polyhedron is done with a precomputed table of
active-set candidates (one affine map per linearly independent active set),
which is the explicit solution of the projection QP. The table depends only
on ``G`` and ``F``, so it is built once per polyhedron and reused for every
parameter value. Polyhedra with too many inequality rows, or with dependent
equality rows, fall back to :func:`~pwaprox.numerics.solve_convex_qp`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .errors import BlowUpError, DimensionMismatchError
from .numerics import RANK_TOL, as_matrix, as_vector, solve_convex_qp

MEMBERSHIP_TOL = 1e-7
ZERO_ROW_TOL = 1e-12
MAX_TABLE_ROWS = 10

# projection tables keyed by (G, F) content; identical stages share one table
_TABLES: dict[bytes, "ProjectionTable | None"] = {}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """Convex polyhedron whose right-hand sides are affine in a parameter.

    ``g(theta) = Gtheta @ theta + g0`` and ``f(theta) = Ftheta @ theta + f0``.
    """

    dim: int
    G: np.ndarray
    g0: np.ndarray
    Gtheta: np.ndarray
    F: np.ndarray
    f0: np.ndarray
    Ftheta: np.ndarray

    def __post_init__(self):
        n = int(self.dim)
        G = as_matrix(self.G, n)
        F = as_matrix(self.F, n)
        g0 = as_vector(self.g0, G.shape[0])
        f0 = as_vector(self.f0, F.shape[0])
        Gt = np.asarray(self.Gtheta, dtype=float)
        Ft = np.asarray(self.Ftheta, dtype=float)
        if Gt.ndim != 2 or Ft.ndim != 2:
            raise DimensionMismatchError("parameter maps must be matrices")
        if Gt.shape[0] != G.shape[0] or Ft.shape[0] != F.shape[0]:
            raise DimensionMismatchError("parameter map row counts do not match G/F")
        if Gt.shape[1] != Ft.shape[1]:
            raise DimensionMismatchError("parameter maps disagree on the parameter dimension")
        for name, val in (("G", G), ("F", F), ("g0", g0), ("f0", f0), ("Gtheta", Gt), ("Ftheta", Ft)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, _frozen(val))
        object.__setattr__(self, "dim", n)

    @classmethod
    def fixed(cls, G=None, g=None, F=None, f=None, dim: int | None = None, p: int = 0) -> "Polyhedron":
        """Non-parametric polyhedron (parameter maps are zero)."""
        if dim is None:
            for M in (G, F):
                if M is not None and np.size(M):
                    dim = np.asarray(M).reshape(len(M), -1).shape[1]
                    break
        if dim is None:
            raise ValueError("dim is required when there are no constraint rows")
        G = as_matrix(G, dim)
        F = as_matrix(F, dim)
        return cls(dim, G, as_vector(g, G.shape[0]), np.zeros((G.shape[0], p)),
                   F, as_vector(f, F.shape[0]), np.zeros((F.shape[0], p)))

    @classmethod
    def free(cls, dim: int, p: int = 0) -> "Polyhedron":
        return cls.fixed(dim=dim, p=p)

    @property
    def p(self) -> int:
        return self.Gtheta.shape[1]

    @property
    def n_eq(self) -> int:
        return self.G.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.F.shape[0]

    def rhs(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.p:
            raise DimensionMismatchError(f"theta has length {theta.shape[0]}, expected {self.p}")
        return self.Gtheta @ theta + self.g0, self.Ftheta @ theta + self.f0

    @cached_property
    def table(self) -> "ProjectionTable | None":
        key = self.structure_key
        if key not in _TABLES:
            _TABLES[key] = ProjectionTable.build(self.G, self.F)
        return _TABLES[key]

    @cached_property
    def structure_key(self) -> bytes:
        return self.G.tobytes() + b"|" + self.F.tobytes() + bytes(str(self.G.shape + self.F.shape), "ascii")


@dataclass(eq=False)
class FixedPolyhedron:
    """A polyhedron with its parameter substituted. May be empty."""

    dim: int
    G: np.ndarray
    g: np.ndarray
    F: np.ndarray
    f: np.ndarray
    table: "ProjectionTable | None" = field(default=None, repr=False)

    @cached_property
    def is_empty(self) -> bool:
        if self.table is not None:
            if not self.table.rhs_consistent(self.g, self.f):
                return True
            zok = self.table.project(np.zeros((1, 1, self.dim)), *self.table.offsets(self.g[None], self.f[None]),
                                     self.table.reduced_f(self.f)[None])[2]
            if bool(zok[0, 0]):
                return False
        res = solve_convex_qp(np.eye(self.dim), np.zeros(self.dim), self.G, self.g, self.F, self.f)
        return not res.optimal


def instantiate(poly: Polyhedron, theta) -> FixedPolyhedron:
    g, f = poly.rhs(theta)
    return FixedPolyhedron(poly.dim, poly.G, g, poly.F, f, poly.table)


def contains(fp: FixedPolyhedron, z, tol: float = MEMBERSHIP_TOL) -> bool:
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != fp.dim:
        raise DimensionMismatchError(f"point has length {z.shape[0]}, expected {fp.dim}")
    if fp.G.shape[0] and np.max(np.abs(fp.G @ z - fp.g)) > tol:
        return False
    if fp.F.shape[0] and np.max(fp.F @ z - fp.f) > tol:
        return False
    return True


def project_onto(fp: FixedPolyhedron, s) -> tuple[np.ndarray, float] | None:
    """Euclidean projection of ``s`` onto ``fp``; ``None`` if ``fp`` is empty."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape[0] != fp.dim:
        raise DimensionMismatchError(f"point has length {s.shape[0]}, expected {fp.dim}")
    if fp.is_empty:
        return None
    if fp.table is not None:
        z_off, mu_off = fp.table.offsets(fp.g[None], fp.f[None])
        Z, _, ok = fp.table.project(s[None, None, :], z_off, mu_off, fp.table.reduced_f(fp.f)[None])
        if ok[0, 0]:
            y = Z[0, 0]
            return y, float(np.linalg.norm(s - y))
    res = solve_convex_qp(np.eye(fp.dim), -s, fp.G, fp.g, fp.F, fp.f)
    if not res.optimal:
        return None
    return res.z, float(np.linalg.norm(s - res.z))


class ProjectionTable:
    """Affine maps ``s -> z`` and ``s -> mu`` for every usable active set.

    Candidate ``a`` is the projection onto ``{G z = g, F_a z = f_a}``; it is
    the projection onto the polyhedron iff it satisfies the remaining
    inequalities and its multipliers for ``F_a`` are non-negative.
    """

    def __init__(self, G, F, eq_rows, ineq_rows, active_sets, Pm, L, Ymu, Kmu, rhs_idx):
        self.G, self.F = G, F
        self.eq_rows = eq_rows
        self.ineq_rows = ineq_rows
        self.active_sets = active_sets
        self.Pm, self.L, self.Ymu, self.Kmu = Pm, L, Ymu, Kmu
        self.rhs_idx = rhs_idx
        self.Fr = F[ineq_rows]
        self.fscale = np.maximum(1.0, np.linalg.norm(self.Fr, axis=1)) if len(ineq_rows) else np.zeros(0)

    @classmethod
    def build(cls, G, F) -> "ProjectionTable | None":
        n = G.shape[1]
        eq_rows = np.flatnonzero(np.linalg.norm(G, axis=1) > ZERO_ROW_TOL)
        ineq_rows = np.flatnonzero(np.linalg.norm(F, axis=1) > ZERO_ROW_TOL)
        Gr, Fr = G[eq_rows], F[ineq_rows]
        p, m = Gr.shape[0], Fr.shape[0]
        if m > MAX_TABLE_ROWS:
            return None
        if p and np.linalg.matrix_rank(Gr, tol=RANK_TOL * max(1.0, np.linalg.norm(Gr, 2))) < p:
            return None
        free_dims = n - p
        cands = []
        for size in range(0, min(m, free_dims) + 1):
            for a in itertools.combinations(range(m), size):
                K = np.vstack([Gr, Fr[list(a)]]) if (p + size) else np.zeros((0, n))
                if K.shape[0]:
                    sv = np.linalg.svd(K, compute_uv=False)
                    if sv[-1] <= 1e-9 * sv[0]:
                        continue
                cands.append((a, K))
        C = len(cands)
        rmax = p + max((len(a) for a, _ in cands), default=0)
        qmax = max(rmax - p, 0)
        Pm = np.zeros((C, n, n))
        L = np.zeros((C, n, rmax))
        Ymu = np.zeros((C, qmax, n))
        Kmu = np.zeros((C, qmax, rmax))
        # rhs vector layout: [g_r (p), f_r (m), 0]; padding points at the trailing zero
        rhs_idx = np.full((C, rmax), p + m, dtype=int)
        for c, (a, K) in enumerate(cands):
            r = K.shape[0]
            rhs_idx[c, :p] = np.arange(p)
            rhs_idx[c, p:r] = p + np.asarray(a, dtype=int)
            if r == 0:
                Pm[c] = np.eye(n)
                continue
            Kinv = np.linalg.inv(K @ K.T)
            Pm[c] = np.eye(n) - K.T @ Kinv @ K
            L[c, :, :r] = K.T @ Kinv
            Ymu[c, : r - p, :] = (Kinv @ K)[p:]
            Kmu[c, : r - p, :r] = Kinv[p:]
        return cls(G, F, eq_rows, ineq_rows, [a for a, _ in cands], Pm, L, Ymu, Kmu, rhs_idx)

    @property
    def n_candidates(self) -> int:
        return len(self.active_sets)

    def rhs_consistent(self, g, f, tol: float = 1e-9) -> bool:
        """Rows with zero coefficients must hold on their own (``0 = g_j``, ``0 <= f_j``)."""
        zg = np.setdiff1d(np.arange(self.G.shape[0]), self.eq_rows)
        zf = np.setdiff1d(np.arange(self.F.shape[0]), self.ineq_rows)
        if zg.size and np.max(np.abs(g[zg])) > tol:
            return False
        if zf.size and np.min(f[zf]) < -tol:
            return False
        return True

    def reduced_f(self, f) -> np.ndarray:
        return np.asarray(f)[..., self.ineq_rows]

    def offsets(self, g, f) -> tuple[np.ndarray, np.ndarray]:
        """Right-hand-side contributions for a batch of ``M`` instantiations.

        ``g`` is ``(M, p_full)`` and ``f`` is ``(M, m_full)``.
        """
        M = g.shape[0]
        rhs = np.concatenate([g[:, self.eq_rows], f[:, self.ineq_rows], np.zeros((M, 1))], axis=1)
        k = rhs[:, self.rhs_idx]  # (M, C, rmax)
        z_off = np.einsum("cnr,mcr->mcn", self.L, k)
        mu_off = -np.einsum("cqr,mcr->mcq", self.Kmu, k)
        return z_off, mu_off

    def project(self, S, z_off, mu_off, f_red, tol: float = 1e-9):
        """Project ``S`` of shape ``(B, M, n)`` onto ``M`` instantiations.

        Returns ``(Z, dist, ok)`` with ``Z`` of shape ``(B, M, n)``; ``ok`` is
        False where no candidate certified optimality (caller falls back).
        """
        Zc = np.einsum("cij,bmj->bmci", self.Pm, S) + z_off[None]
        ok = np.ones(Zc.shape[:3], dtype=bool)
        if self.Fr.shape[0]:
            viol = np.einsum("ij,bmcj->bmci", self.Fr, Zc) - f_red[None, :, None, :]
            scale = tol * (1.0 + np.abs(f_red))[None, :, None, :] * self.fscale
            ok &= np.all(viol <= scale, axis=3)
        if self.Ymu.shape[1]:
            mu = np.einsum("cqj,bmj->bmcq", self.Ymu, S) + mu_off[None]
            mtol = tol * (1.0 + np.linalg.norm(S, axis=2))[:, :, None, None]
            ok &= np.all(mu >= -mtol, axis=3)
        first = np.argmax(ok, axis=2)
        found = np.take_along_axis(ok, first[:, :, None], axis=2)[:, :, 0]
        Z = np.take_along_axis(Zc, first[:, :, None, None], axis=2)[:, :, 0, :]
        return Z, np.linalg.norm(S - Z, axis=2), found


# ---------------------------------------------------------------------------
# cone primitives


def _lp_max(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Maximize ``c'x``; returns ``(value, x)`` or ``(None, None)`` if infeasible."""
    res = linprog(-np.asarray(c, float), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return None, None
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return -res.fun, res.x


def _normalize_rows(D: np.ndarray) -> np.ndarray:
    if D.shape[0] == 0:
        return D
    scale = np.max(np.abs(D), axis=1)
    keep = scale > 1e-12
    D = D[keep] / scale[keep, None]
    # exact duplicates after scaling
    _, idx = np.unique(np.round(D, 10), axis=0, return_index=True)
    return D[np.sort(idx)]


def remove_redundant_rows(D: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Drop rows of ``{v : D v <= 0}`` implied by the remaining rows."""
    D = _normalize_rows(D)
    n = D.shape[1]
    keep = list(range(D.shape[0]))
    for i in range(D.shape[0] - 1, -1, -1):
        others = [j for j in keep if j != i]
        if not others:
            break
        val, _ = _lp_max(D[i], D[others], np.zeros(len(others)), bounds=[(-1, 1)] * n)
        if val is not None and val <= tol:
            keep = others
    return D[keep]


def fm_project_cone(Gen_free, Gen_nonneg, dim: int | None = None, cap: int = 20000) -> np.ndarray:
    """H-representation of ``{G' nu + F' mu : mu >= 0}`` via Fourier-Motzkin.

    ``Gen_free`` holds the free generators as rows (``G``), ``Gen_nonneg`` the
    sign-constrained ones (``F``). Returns ``D`` with the cone equal to
    ``{v : D v <= 0}``.
    """
    if dim is None:
        for M in (Gen_free, Gen_nonneg):
            if M is not None and np.size(M):
                dim = np.asarray(M).shape[1]
                break
    if dim is None:
        raise ValueError("dim is required for an empty generator set")
    Gf = as_matrix(Gen_free, dim)
    Gn = as_matrix(Gen_nonneg, dim)
    p, q = Gf.shape[0], Gn.shape[0]
    na = p + q
    # columns: [v (dim) | aux (na)]
    Eq = np.hstack([np.eye(dim), -Gf.T, -Gn.T])
    Ineq = np.hstack([np.zeros((q, dim + p)), -np.eye(q)])

    # Gaussian elimination of aux variables that appear in equalities
    for col in range(dim, dim + na):
        if Eq.shape[0] == 0:
            break
        piv = int(np.argmax(np.abs(Eq[:, col])))
        a = Eq[piv, col]
        if abs(a) <= 1e-12 * max(1.0, np.max(np.abs(Eq[piv]))):
            continue
        row = Eq[piv] / a
        Eq = np.delete(Eq, piv, axis=0)
        Eq = Eq - np.outer(Eq[:, col], row)
        Eq[:, col] = 0.0
        if Ineq.shape[0]:
            Ineq = Ineq - np.outer(Ineq[:, col], row)
            Ineq[:, col] = 0.0

    # Fourier-Motzkin on aux variables left only in inequalities
    for col in range(dim, dim + na):
        c = Ineq[:, col]
        pos = np.flatnonzero(c > 1e-12)
        neg = np.flatnonzero(c < -1e-12)
        zero = np.flatnonzero(np.abs(c) <= 1e-12)
        rows = [Ineq[zero]]
        if pos.size and neg.size:
            if pos.size * neg.size + zero.size > cap:
                raise BlowUpError(f"Fourier-Motzkin row count would reach {pos.size * neg.size + zero.size}")
            comb = (Ineq[pos][:, None, :] * (-c[neg])[None, :, None]
                    + Ineq[neg][None, :, :] * c[pos][:, None, None]).reshape(-1, Ineq.shape[1])
            rows.append(comb)
        Ineq = np.vstack(rows)
        Ineq[:, col] = 0.0
        if Ineq.shape[0] > 1:
            Ineq = _prune(Ineq)
            if pos.size and neg.size and Ineq.shape[0] > 2:
                Ineq = remove_redundant_rows(Ineq)

    Dv = Ineq[:, :dim]
    Ev = Eq[:, :dim]
    D = np.vstack([Dv, Ev, -Ev])
    if D.shape[0] == 0:
        return np.zeros((0, dim))
    return remove_redundant_rows(D)


def _prune(Ineq: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(Ineq), axis=1)
    keep = scale > 1e-12
    Ineq = Ineq[keep] / scale[keep, None]
    _, idx = np.unique(np.round(Ineq, 10), axis=0, return_index=True)
    return Ineq[np.sort(idx)]


def cone_contains(D: np.ndarray, v, tol: float = 1e-9) -> bool:
    v = np.asarray(v, dtype=float)
    if D.shape[0] == 0:
        return True
    return bool(np.max(D @ v) <= tol * max(1.0, np.linalg.norm(v)))
