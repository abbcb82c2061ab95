"""Consensus problem data and the decoupled projection onto the staged set.

The problem is

    min 0.5 z'Hz + h'z   s.t.  A z = b,  z in Z(theta),

where ``Z(theta)`` is a Cartesian product over stages of unions of
parametric polyhedra.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, NotPositiveDefiniteError, StageInfeasibleError
from .numerics import as_matrix, as_vector, nullspace_and_particular, solve_convex_qp
from .polyhedra import (
    MEMBERSHIP_TOL,
    FixedPolyhedron,
    Polyhedron,
    contains,
    instantiate,
)

TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class StageSet:
    """Union of polyhedra over one block of variables."""

    dim: int
    components: tuple[Polyhedron, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a stage needs at least one component")
        for c in comps:
            if c.dim != self.dim:
                raise DimensionMismatchError(f"component of dim {c.dim} in stage of dim {self.dim}")
        if len({c.p for c in comps}) > 1:
            raise DimensionMismatchError("components disagree on the parameter dimension")
        object.__setattr__(self, "components", comps)

    @classmethod
    def free(cls, dim: int, p: int = 0) -> "StageSet":
        return cls(dim, (Polyhedron.free(dim, p),))

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def p(self) -> int:
        return self.components[0].p


@dataclass(frozen=True, eq=False)
class ConsensusProblem:
    H: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    stages: tuple[StageSet, ...]
    p: int = 0
    source: str = "generic"
    V: np.ndarray = field(init=False, repr=False)
    v_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionMismatchError("H must be square")
        n = H.shape[0]
        stages = tuple(self.stages)
        if sum(s.dim for s in stages) != n:
            raise DimensionMismatchError(f"stage dimensions sum to {sum(s.dim for s in stages)}, expected n={n}")
        for s in stages:
            if s.p != self.p:
                raise DimensionMismatchError(f"stage parameter dimension {s.p} != p={self.p}")
        if np.linalg.norm(H - H.T) > 1e-12 * max(1.0, np.linalg.norm(H)):
            raise NotPositiveDefiniteError("H is not symmetric")
        H = 0.5 * (H + H.T)
        lam_min = np.linalg.eigvalsh(H)[0] if n else 1.0
        if lam_min <= 1e-12 * max(1.0, np.abs(H).max(initial=0.0)):
            raise NotPositiveDefiniteError(f"smallest eigenvalue of H is {lam_min:.3g}")
        A = as_matrix(self.A, n)
        b = as_vector(self.b, A.shape[0])
        h = as_vector(self.h, n)
        V, v_bar = nullspace_and_particular(A, b)
        for name, val in (("H", H), ("h", h), ("A", A), ("b", b), ("V", V), ("v_bar", v_bar)):
            val = np.ascontiguousarray(val)
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "stages", stages)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.dim for s in self.stages])]).astype(int)

    def block(self, z, k: int) -> np.ndarray:
        return np.asarray(z)[..., self.offsets[k]:self.offsets[k + 1]]

    def with_linear_cost(self, h) -> "ConsensusProblem":
        return replace(self, h=as_vector(h, self.n))

    def at(self, theta) -> "StagedZ":
        """Instantiate the staged set for a concrete parameter."""
        return StagedZ(self, theta)


def validate(problem: ConsensusProblem) -> None:
    """Re-check the problem invariants (construction already enforces them)."""
    if np.linalg.norm(problem.A @ problem.V) > 1e-10 * (1.0 + np.linalg.norm(problem.A)):
        raise DimensionMismatchError("cached nullspace basis is inconsistent with A")
    if problem.m and np.linalg.norm(problem.A @ problem.v_bar - problem.b) > 1e-10 * (1.0 + np.linalg.norm(problem.b)):
        raise DimensionMismatchError("cached particular solution is inconsistent with A, b")


def objective(problem: ConsensusProblem, z) -> float:
    z = as_vector(z, problem.n)
    return float(0.5 * z @ problem.H @ z + problem.h @ z)


class _Stack:
    """Every (stage, slot) of ``Z(theta)`` padded into one array stack.

    Entry ``k * max_m + i`` holds component ``i`` of stage ``k`` with ``nmax``
    coordinates and ``cmax`` active-set candidates. Padding coordinates read a
    zero column, padding candidates are never certified, and empty or missing
    components get an infinite distance. Components without a table are
    always projected with the QP solver. A projection of a whole batch is then
    a single matrix product plus a fixed handful of array operations.
    """

    def __init__(self, grid: list[list[FixedPolyhedron | None]], offsets, n: int, max_m: int):
        nstage = len(grid)
        E = nstage * max_m
        entries = [(k, row[i] if i < len(row) else None) for k, row in enumerate(grid) for i in range(max_m)]
        tables = [fp.table for _, fp in entries if fp is not None and fp.table is not None]
        nmax = max(int(offsets[k + 1] - offsets[k]) for k in range(nstage))
        cmax = max((t.n_candidates for t in tables), default=1)
        mmax = max((t.Fr.shape[0] for t in tables), default=0)
        qmax = max((t.Ymu.shape[1] for t in tables), default=0)
        R = max(mmax + qmax, 1)
        self.nmax = nmax
        self.shape = (E, cmax, R, nmax)
        self.fixed = [fp for _, fp in entries]
        self.empty = np.array([fp is None for fp in self.fixed])
        self.d_pad = np.where(self.empty, np.inf, 0.0)
        self.cols = np.full((E, nmax), n, dtype=int)
        Pm = np.zeros((E, cmax, nmax, nmax))
        self.z_off = np.zeros((E, cmax, nmax))
        cert = np.zeros((E, cmax, R, nmax))
        cert_off = np.full((E, cmax, R), np.inf)
        for e, (k, fp) in enumerate(entries):
            if fp is None:
                continue
            d = fp.dim
            self.cols[e, :d] = np.arange(offsets[k], offsets[k + 1])
            t = fp.table
            if t is None:
                continue
            C, m, q = t.n_candidates, t.Fr.shape[0], t.Ymu.shape[1]
            z_off, mu_off = t.offsets(fp.g[None], fp.f[None])
            f_red = t.reduced_f(fp.f)
            Pm[e, :C, :d, :d] = t.Pm
            self.z_off[e, :C, :d] = z_off[0]
            # optimality certificate of each candidate, affine in the point and
            # divided by its tolerance scale:
            #   primal  Fr (Pm s + z_off) - f <= 0,   dual  -(Ymu s + mu_off) <= 0
            fs = ((1.0 + np.abs(f_red)) * t.fscale)[:, None]
            cert[e, :C, :m, :d] = np.einsum("ij,cjk->cik", t.Fr, t.Pm) / fs
            cert[e, :C, m:m + q, :d] = -t.Ymu
            cert_off[e, :C, :m] = (z_off[0] @ t.Fr.T - f_red) / fs[:, 0]
            cert_off[e, :C, m:m + q] = -mu_off[0]
            cert_off[e, :C, m + q:] = 0.0
        # scatter the per-entry maps onto full-length points
        big = np.zeros((n + 1, E, cmax * R + cmax * nmax + nmax))
        for e in range(E):
            for j, col in enumerate(self.cols[e]):
                big[col, e, :cmax * R] += cert[e, :, :, j].reshape(-1)
                big[col, e, cmax * R:cmax * (R + nmax)] += Pm[e, :, :, j].reshape(-1)
                big[col, e, cmax * (R + nmax) + j] += 1.0
        big = big[:n]
        self.cert_map = big[:, :, :cmax * R].reshape(n, -1).copy()
        self.rest_map = big[:, :, cmax * R:].reshape(n, -1).copy()
        self.big = np.hstack([self.cert_map, self.rest_map])
        self.n_cert = self.cert_map.shape[1]
        self.cert_off = cert_off.reshape(-1)
        self.e_base = np.arange(E) * cmax
        self.z_off_flat = self.z_off.reshape(E * cmax, nmax)

    def project(self, S, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Project ``S`` ``(B, n)`` onto every entry; returns ``Z (B, E, nmax)`` and distances ``(B, E)``."""
        B = S.shape[0]
        E, C, R, nmax = self.shape
        both = S @ self.big
        # certificate tolerance relative to the size of the whole point
        scale = tol * (1.0 + np.sqrt(np.einsum("bi,bi->b", S, S)))
        ok = (both[:, :self.n_cert] + self.cert_off <= scale[:, None]).reshape(B, E, C, R).all(axis=3)
        pick = ok.argmax(axis=2) + self.e_base
        rest = both[:, self.n_cert:].reshape(B, E, C + 1, nmax)
        rows = np.arange(B)[:, None]
        Z = rest[:, :, :C].reshape(B, E * C, nmax)[rows, pick] + self.z_off_flat[pick]
        Sx = rest[:, :, C]
        D = Sx - Z
        dist = np.sqrt(np.einsum("bej,bej->be", D, D)) + self.d_pad
        need = ~(ok.reshape(B, E * C)[rows, pick] | self.empty)
        if need.any():
            for b, e in zip(*np.nonzero(need)):
                fp = self.fixed[e]
                res = solve_convex_qp(np.eye(fp.dim), -Sx[b, e, :fp.dim], fp.G, fp.g, fp.F, fp.f)
                Z[b, e, :fp.dim] = res.z
                dist[b, e] = np.linalg.norm(Sx[b, e, :fp.dim] - res.z)
        return Z, dist


    def project_point(self, s, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Single-point version of :meth:`project`."""
        E, C, R, nmax = self.shape
        both = s @ self.big
        scale = tol * (1.0 + math.sqrt(s @ s))
        ok = (both[:self.n_cert] + self.cert_off <= scale).reshape(E, C, R).all(axis=2)
        pick = ok.argmax(axis=1) + self.e_base
        rest = both[self.n_cert:].reshape(E, C + 1, nmax)
        Z = rest[:, :C].reshape(E * C, nmax)[pick] + self.z_off_flat[pick]
        Sx = rest[:, C]
        D = Sx - Z
        dist = np.sqrt(np.einsum("ej,ej->e", D, D)) + self.d_pad
        need = ~(ok.reshape(-1)[pick] | self.empty)
        if need.any():
            for e in np.flatnonzero(need):
                fp = self.fixed[e]
                res = solve_convex_qp(np.eye(fp.dim), -Sx[e, :fp.dim], fp.G, fp.g, fp.F, fp.f)
                Z[e, :fp.dim] = res.z
                dist[e] = np.linalg.norm(Sx[e, :fp.dim] - res.z)
        return Z, dist


class StagedZ:
    """``Z(theta)`` for one parameter value, ready for repeated projections."""

    def __init__(self, problem: ConsensusProblem, theta):
        theta = np.asarray(theta if theta is not None else np.zeros(problem.p), dtype=float).reshape(-1)
        if theta.shape[0] != problem.p:
            raise DimensionMismatchError(f"theta has length {theta.shape[0]}, expected {problem.p}")
        self.problem = problem
        self.theta = theta
        self.n = problem.n
        self.offsets = problem.offsets
        self.max_m = max(s.m for s in problem.stages)
        self.components: list[list[FixedPolyhedron | None]] = []
        for k, stage in enumerate(problem.stages):
            row = []
            for poly in stage.components:
                fp = instantiate(poly, theta)
                row.append(None if fp.is_empty else fp)
            if all(c is None for c in row):
                raise StageInfeasibleError(k)
            self.components.append(row)
        self.nstage = len(problem.stages)
        self.stack = _Stack(self.components, self.offsets, self.n, self.max_m)
        self.stage_of_col = np.repeat(np.arange(self.nstage), np.diff(self.offsets))
        self.local_of_col = np.arange(self.n) - self.offsets[self.stage_of_col]

    def project(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Blockwise projection; returns ``(y, active)`` with the chosen component per stage.

        Accepts a single point ``(n,)`` or a batch ``(B, n)``. Each stage takes
        the closest component; exact ties go to the lowest index.
        """
        S = np.asarray(s, dtype=float)
        single = S.ndim == 1
        S = np.atleast_2d(S)
        if S.shape[1] != self.n:
            raise DimensionMismatchError(f"point has length {S.shape[1]}, expected {self.n}")
        y, active = self.project_unchecked(S)
        if single:
            return y[0], active[0]
        return y, active

    def project_unchecked(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch projection without input validation (hot loop of the solvers)."""
        B = S.shape[0]
        if B == 1:
            y, active = self.project_point(S[0])
            return y[None], active[None]
        Z, d = self.stack.project(S)
        dist = d.reshape(B, self.nstage, self.max_m)
        active = (dist <= dist.min(axis=2, keepdims=True) * (1.0 + TIE_RTOL) + 1e-15).argmax(axis=2)
        sc = self.stage_of_col
        Z = Z.reshape(B, self.nstage, self.max_m, self.stack.nmax)
        y = Z[np.arange(B)[:, None], sc, active[:, sc], self.local_of_col]
        return y, active

    def project_point(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Single-point version of :meth:`project_unchecked`."""
        Z, d = self.stack.project_point(s)
        dist = d.reshape(self.nstage, self.max_m)
        active = (dist <= dist.min(axis=1, keepdims=True) * (1.0 + TIE_RTOL) + 1e-15).argmax(axis=1)
        sc = self.stage_of_col
        return Z.reshape(self.nstage, self.max_m, -1)[sc, active[sc], self.local_of_col], active

    def contains(self, z, tol: float = MEMBERSHIP_TOL) -> bool:
        z = as_vector(z, self.n)
        for k, row in enumerate(self.components):
            zk = z[self.offsets[k]:self.offsets[k + 1]]
            if not any(fp is not None and contains(fp, zk, tol) for fp in row):
                return False
        return True


def project_Z(problem: ConsensusProblem, theta, s) -> tuple[np.ndarray, np.ndarray]:
    return problem.at(theta).project(s)


def contains_Z(problem: ConsensusProblem, theta, z, tol: float = MEMBERSHIP_TOL) -> bool:
    return problem.at(theta).contains(z, tol)


# ---------------------------------------------------------------------------
# JSON


def _poly_from_json(d: dict, nk: int, p: int) -> Polyhedron:
    G = as_matrix(d.get("G"), nk)
    F = as_matrix(d.get("F"), nk)
    Gt = d.get("Gtheta")
    Ft = d.get("Ftheta")
    Gt = np.zeros((G.shape[0], p)) if Gt is None or np.size(Gt) == 0 else as_matrix(Gt, p)
    Ft = np.zeros((F.shape[0], p)) if Ft is None or np.size(Ft) == 0 else as_matrix(Ft, p)
    return Polyhedron(nk, G, as_vector(d.get("g0"), G.shape[0]), Gt, F, as_vector(d.get("f0"), F.shape[0]), Ft)


def problem_from_dict(d: dict) -> ConsensusProblem:
    n = int(d["n"])
    p = int(d.get("p", 0))
    stages = []
    for st in d["stages"]:
        nk = int(st["nk"])
        stages.append(StageSet(nk, tuple(_poly_from_json(c, nk, p) for c in st["components"])))
    H = as_matrix(d["H"], n)
    A = as_matrix(d.get("A"), n)
    return ConsensusProblem(H, as_vector(d.get("h"), n), A, as_vector(d.get("b"), A.shape[0]),
                            tuple(stages), p=p, source=d.get("source", "generic"))


def problem_to_dict(problem: ConsensusProblem) -> dict:
    def poly(c: Polyhedron) -> dict:
        return {"G": c.G.tolist(), "g0": c.g0.tolist(), "Gtheta": c.Gtheta.tolist(),
                "F": c.F.tolist(), "f0": c.f0.tolist(), "Ftheta": c.Ftheta.tolist()}

    return {
        "n": problem.n,
        "p": problem.p,
        "H": problem.H.tolist(),
        "h": problem.h.tolist(),
        "A": problem.A.tolist(),
        "b": problem.b.tolist(),
        "source": problem.source,
        "stages": [{"nk": s.dim, "components": [poly(c) for c in s.components]} for s in problem.stages],
    }


def load_problem(path) -> ConsensusProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))


def save_problem(problem: ConsensusProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem)))
