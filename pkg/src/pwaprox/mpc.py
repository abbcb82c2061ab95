"""Piecewise-affine MPC problems rewritten as consensus problems.

Variable layout for horizon ``N``::

    z = (u_1, w_1 | x_2, u_2, w_2 | ... | x_N, u_N, w_N | x_{N+1})

``w_k`` is a copy of ``x_{k+1}``; the coupling ``x_{k+1} = w_k`` is the only
equality constraint, so ``b = 0`` and the initial state ``theta`` only enters
the right-hand sides of the first stage.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, NotPositiveDefiniteError
from .numerics import as_matrix, as_vector, solve_convex_qp
from .polyhedra import Polyhedron
from .problem import ConsensusProblem, StageSet

PLANT_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class PwaRegion:
    """``x+ = A x + B u + c`` on ``C = {(x, u) : Cg [x; u] = cg, Cf [x; u] <= cf}``."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    C: Polyhedron

    def __post_init__(self):
        A = as_matrix(self.A)
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise DimensionMismatchError("A must be square")
        B = as_matrix(self.B)
        if B.shape[0] != nx:
            B = B.reshape(nx, -1)
        c = as_vector(self.c, nx)
        nu = B.shape[1]
        if self.C.dim != nx + nu or self.C.p != 0:
            raise DimensionMismatchError("region polyhedron must live in (x, u) space without parameters")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)
        if solve_convex_qp(np.eye(self.C.dim), np.zeros(self.C.dim), self.C.G, self.C.g0,
                           self.C.F, self.C.f0).z is None:
            raise ValueError("region polyhedron is empty")

    @classmethod
    def from_rows(cls, A, B, c, Cf, Cg=None) -> "PwaRegion":
        """Build from augmented constraint rows ``[F | f]`` and optionally ``[G | g]``."""
        A = as_matrix(A)
        B = as_matrix(B)
        if B.shape[0] != A.shape[0]:
            B = B.reshape(A.shape[0], -1)
        dim = A.shape[0] + B.shape[1]
        Cf = as_matrix(Cf, dim + 1)
        Cg = as_matrix(Cg, dim + 1)
        C = Polyhedron.fixed(G=Cg[:, :dim], g=Cg[:, dim], F=Cf[:, :dim], f=Cf[:, dim], dim=dim)
        return cls(A, B, c if c is not None else np.zeros(A.shape[0]), C)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    def contains(self, x, u, tol: float = PLANT_TOL) -> bool:
        xu = np.concatenate([x, u])
        if self.C.n_eq and np.max(np.abs(self.C.G @ xu - self.C.g0)) > tol:
            return False
        if self.C.n_ineq and np.max(self.C.F @ xu - self.C.f0) > tol:
            return False
        return True


@dataclass(frozen=True, eq=False)
class PwaSystem:
    """Per-stage PWA regions with quadratic costs.

    Stage cost ``k`` is ``q_{k+1}(x_{k+1}) + r_k(u_k)`` with
    ``q(x) = x'Qx + qlin'x`` and ``r(u) = u'Ru + rlin'u``.
    """

    nx: int
    nu: int
    regions: tuple[tuple[PwaRegion, ...], ...]
    Q: tuple[np.ndarray, ...]
    R: tuple[np.ndarray, ...]
    qlin: tuple[np.ndarray, ...] = ()
    rlin: tuple[np.ndarray, ...] = ()
    alpha: tuple[float, ...] = ()
    time_invariant: bool = field(default=False)

    def __post_init__(self):
        N = len(self.regions)
        if N == 0:
            raise ValueError("horizon must be at least 1")
        regions = tuple(tuple(r) for r in self.regions)
        for stage in regions:
            if not stage:
                raise ValueError("every stage needs at least one region")
            for r in stage:
                if r.nx != self.nx or r.nu != self.nu:
                    raise DimensionMismatchError("region dimensions disagree with (nx, nu)")
        qlin = tuple(self.qlin) or tuple(np.zeros(self.nx) for _ in range(N))
        rlin = tuple(self.rlin) or tuple(np.zeros(self.nu) for _ in range(N))
        alpha = tuple(self.alpha) or tuple(0.5 for _ in range(N))
        Q = tuple(as_matrix(q, self.nx) for q in self.Q)
        R = tuple(as_matrix(r, self.nu) for r in self.R)
        for name, seq in (("Q", Q), ("R", R), ("qlin", qlin), ("rlin", rlin), ("alpha", alpha)):
            if len(seq) != N:
                raise DimensionMismatchError(f"{name} has {len(seq)} entries, horizon is {N}")
        for M in Q + R:
            if np.linalg.eigvalsh(0.5 * (M + M.T))[0] <= 0:
                raise NotPositiveDefiniteError("stage cost matrices must be positive definite")
        if not all(0.0 < a < 1.0 for a in alpha):
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "qlin", tuple(as_vector(v, self.nx) for v in qlin))
        object.__setattr__(self, "rlin", tuple(as_vector(v, self.nu) for v in rlin))
        object.__setattr__(self, "alpha", tuple(float(a) for a in alpha))

    @classmethod
    def uniform(cls, regions, Q, R, N: int, alpha: float = 0.5) -> "PwaSystem":
        """Same regions and costs at every stage."""
        regions = tuple(regions)
        r0 = regions[0]
        return cls(r0.nx, r0.nu, (regions,) * N, (as_matrix(Q),) * N, (as_matrix(R),) * N,
                   alpha=(alpha,) * N, time_invariant=True)

    @property
    def N(self) -> int:
        return len(self.regions)

    def with_horizon(self, N: int) -> "PwaSystem":
        if N == self.N:
            return self
        if N < self.N:
            sl = slice(0, N)
        elif not self.time_invariant:
            raise ValueError("cannot extend the horizon of a time-varying system")
        else:
            sl = None
        pick = (lambda seq: tuple(seq[sl])) if sl is not None else (lambda seq: (seq[0],) * N)
        return PwaSystem(self.nx, self.nu, pick(self.regions), pick(self.Q), pick(self.R), pick(self.qlin),
                         pick(self.rlin), pick(self.alpha), self.time_invariant)

    def step(self, x, u, stage: int = 0, tol: float = PLANT_TOL):
        """Advance the true dynamics; returns ``(x_next, region)`` or ``None`` if no region applies."""
        x = as_vector(x, self.nx)
        u = as_vector(u, self.nu)
        for i, reg in enumerate(self.regions[stage]):
            if reg.contains(x, u, tol):
                return reg.A @ x + reg.B @ u + reg.c, i
        return None

    def cost(self, xs, us) -> float:
        """Original stage-summed cost for ``xs = (x_2..x_{N+1})`` and ``us = (u_1..u_N)``."""
        total = 0.0
        for k in range(self.N):
            x, u = xs[k], us[k]
            total += x @ self.Q[k] @ x + self.qlin[k] @ x + u @ self.R[k] @ u + self.rlin[k] @ u
        return float(total)


class Layout:
    """Index bookkeeping for the consensus variable of an ``N``-stage MPC problem."""

    def __init__(self, nx: int, nu: int, N: int):
        self.nx, self.nu, self.N = nx, nu, N
        self.first = nu + nx
        self.mid = 2 * nx + nu
        self.n = N * nu + 2 * N * nx

    def _start(self, k: int) -> int:
        return 0 if k == 1 else self.first + (k - 2) * self.mid

    def u(self, k: int) -> slice:
        s = self._start(k) + (0 if k == 1 else self.nx)
        return slice(s, s + self.nu)

    def w(self, k: int) -> slice:
        s = self._start(k) + (self.nu if k == 1 else self.nx + self.nu)
        return slice(s, s + self.nx)

    def x(self, k: int) -> slice:
        """State ``x_k`` for ``k = 2..N+1``."""
        if k == self.N + 1:
            s = self.first + (self.N - 1) * self.mid
        else:
            s = self._start(k)
        return slice(s, s + self.nx)

    def states(self, z) -> np.ndarray:
        return np.array([z[self.x(k)] for k in range(2, self.N + 2)])

    def inputs(self, z) -> np.ndarray:
        return np.array([z[self.u(k)] for k in range(1, self.N + 1)])

    def pack(self, xs, us) -> np.ndarray:
        """Consensus vector for states ``x_2..x_{N+1}`` and inputs ``u_1..u_N`` (``w_k = x_{k+1}``)."""
        z = np.zeros(self.n)
        for k in range(1, self.N + 1):
            z[self.u(k)] = us[k - 1]
            z[self.w(k)] = xs[k - 1]
            z[self.x(k + 1)] = xs[k - 1]
        return z


def _split_region(reg: PwaRegion):
    nx = reg.nx
    C = reg.C
    return C.G[:, :nx], C.G[:, nx:], C.g0, C.F[:, :nx], C.F[:, nx:], C.f0


def build_consensus(system: PwaSystem, N: int | None = None) -> ConsensusProblem:
    """Consensus problem with ``theta`` = initial state and the cost split between ``x_{k+1}`` and ``w_k``."""
    if N is not None:
        system = system.with_horizon(N)
    nx, nu, N = system.nx, system.nu, system.N
    lay = Layout(nx, nu, N)
    n = lay.n
    H = np.zeros((n, n))
    h = np.zeros(n)
    A = np.zeros((N * nx, n))
    for k in range(1, N + 1):
        a = system.alpha[k - 1]
        Qk, Rk = system.Q[k - 1], system.R[k - 1]
        H[lay.u(k), lay.u(k)] = 2.0 * Rk
        H[lay.w(k), lay.w(k)] = 2.0 * (1.0 - a) * Qk
        H[lay.x(k + 1), lay.x(k + 1)] = 2.0 * a * Qk
        h[lay.u(k)] = system.rlin[k - 1]
        h[lay.w(k)] = (1.0 - a) * system.qlin[k - 1]
        h[lay.x(k + 1)] = a * system.qlin[k - 1]
        rows = slice((k - 1) * nx, k * nx)
        A[rows, lay.x(k + 1)] = np.eye(nx)
        A[rows, lay.w(k)] = -np.eye(nx)

    stages = []
    comps = []
    for reg in system.regions[0]:
        Gx, Gu, gc, Fx, Fu, fc = _split_region(reg)
        G = np.vstack([np.hstack([-reg.B, np.eye(nx)]), np.hstack([Gu, np.zeros((Gu.shape[0], nx))])])
        Gtheta = np.vstack([reg.A, -Gx])
        g0 = np.concatenate([reg.c, gc])
        F = np.hstack([Fu, np.zeros((Fu.shape[0], nx))])
        comps.append(Polyhedron(nu + nx, G, g0, Gtheta, F, fc, -Fx))
    stages.append(StageSet(nu + nx, tuple(comps)))
    for k in range(2, N + 1):
        comps = []
        for reg in system.regions[k - 1]:
            Gx, Gu, gc, Fx, Fu, fc = _split_region(reg)
            G = np.vstack([np.hstack([-reg.A, -reg.B, np.eye(nx)]),
                           np.hstack([Gx, Gu, np.zeros((Gx.shape[0], nx))])])
            g0 = np.concatenate([reg.c, gc])
            F = np.hstack([Fx, Fu, np.zeros((Fx.shape[0], nx))])
            comps.append(Polyhedron(2 * nx + nu, G, g0, np.zeros((G.shape[0], nx)), F, fc,
                                    np.zeros((F.shape[0], nx))))
        stages.append(StageSet(2 * nx + nu, tuple(comps)))
    stages.append(StageSet.free(nx, nx))
    return ConsensusProblem(H, h, A, np.zeros(N * nx), tuple(stages), p=nx, source="mpc")


def update_reference(problem: ConsensusProblem, system: PwaSystem, x_ref, u_ref) -> np.ndarray:
    """Linear cost realizing ``sum (x_{k+1}-xr_k)'Q(x_{k+1}-xr_k) + (u_k-ur_k)'R(u_k-ur_k)``.

    ``x_ref`` has shape ``(N, nx)`` (targets for ``x_2..x_{N+1}``), ``u_ref``
    shape ``(N, nu)``. The constant term is :func:`reference_offset`.
    """
    N, nx, nu = system.N, system.nx, system.nu
    x_ref = np.asarray(x_ref, dtype=float).reshape(-1)
    u_ref = np.asarray(u_ref, dtype=float).reshape(-1)
    if x_ref.size != N * nx or u_ref.size != N * nu:
        raise DimensionMismatchError(f"references must have shapes ({N}, {nx}) and ({N}, {nu})")
    lay = Layout(nx, nu, N)
    if lay.n != problem.n:
        raise DimensionMismatchError("problem and system horizons differ")
    x_ref = x_ref.reshape(N, nx)
    u_ref = u_ref.reshape(N, nu)
    h = np.zeros(problem.n)
    for k in range(1, N + 1):
        a = system.alpha[k - 1]
        qlin = -2.0 * system.Q[k - 1] @ x_ref[k - 1]
        h[lay.u(k)] = -2.0 * system.R[k - 1] @ u_ref[k - 1]
        h[lay.w(k)] = (1.0 - a) * qlin
        h[lay.x(k + 1)] = a * qlin
    return h


def reference_offset(system: PwaSystem, x_ref, u_ref) -> float:
    x_ref = np.asarray(x_ref, dtype=float).reshape(system.N, system.nx)
    u_ref = np.asarray(u_ref, dtype=float).reshape(system.N, system.nu)
    return float(sum(x_ref[k] @ system.Q[k] @ x_ref[k] + u_ref[k] @ system.R[k] @ u_ref[k]
                     for k in range(system.N)))


def example_51(N: int = 10, weight: float = 0.5) -> PwaSystem:
    """Two-state, one-input PWA system switching on the sign of ``x_1``; inputs in ``[-1, 1]``.

    The stage cost is ``weight * (||x_{k+1}||^2 + ||u_k||^2)``. The default
    ``weight=0.5`` is the scaling under which the reference optimum
    ``0.4189`` at ``N=10, theta=(1, 1)`` and the reference local-optimum
    clusters are reproduced; ``weight=1`` is the plain regulation sum.
    """
    r3 = np.sqrt(3.0)
    A1 = 0.4 * np.array([[1.0, -r3], [r3, 1.0]])
    A2 = 0.4 * np.array([[1.0, r3], [-r3, 1.0]])
    B = np.array([[0.0], [1.0]])
    ubox = [[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, -1.0, 1.0]]
    reg1 = PwaRegion.from_rows(A1, B, None, [[-1.0, 0.0, 0.0, 0.0]] + ubox)
    reg2 = PwaRegion.from_rows(A2, B, None, [[1.0, 0.0, 0.0, 0.0]] + ubox)
    return PwaSystem.uniform((reg1, reg2), weight * np.eye(2), weight * np.eye(1), N)


# ---------------------------------------------------------------------------
# JSON: {n_x, n_u, N, regions: [[{A, B, c, Cf, Cg?}, ...], ...], Q, R, alpha, x_ref?, u_ref?, theta?}


def system_from_dict(d: dict, N: int | None = None) -> PwaSystem:
    nx, nu = int(d["n_x"]), int(d["n_u"])
    N = int(N if N is not None else d["N"])
    per_stage = [[PwaRegion.from_rows(r["A"], r["B"], r.get("c"), r["Cf"], r.get("Cg")) for r in stage]
                 for stage in d["regions"]]
    uniform = len(per_stage) == 1

    def per(key, default, shape):
        v = d.get(key, default)
        a = np.asarray(v, dtype=float)
        if a.ndim == len(shape):
            return [a.reshape(shape)] * N
        if a.shape[0] < N:
            raise DimensionMismatchError(f"{key} has {a.shape[0]} entries, horizon is {N}")
        return [x.reshape(shape) for x in a[:N]]

    if uniform:
        regions = [per_stage[0]] * N
    else:
        if len(per_stage) < N:
            raise DimensionMismatchError(f"regions given for {len(per_stage)} stages, horizon is {N}")
        regions = per_stage[:N]
    Q = per("Q", None, (nx, nx))
    R = per("R", None, (nu, nu))
    alpha = d.get("alpha", 0.5)
    alpha = [float(alpha)] * N if np.ndim(alpha) == 0 else [float(a) for a in alpha[:N]]
    x_ref = per("x_ref", np.zeros(nx), (nx,))
    u_ref = per("u_ref", np.zeros(nu), (nu,))
    qlin = [-2.0 * Q[k] @ x_ref[k] for k in range(N)]
    rlin = [-2.0 * R[k] @ u_ref[k] for k in range(N)]
    time_inv = uniform and np.ndim(d["Q"]) == 2 and np.ndim(d["R"]) == 2 and np.ndim(d.get("alpha", 0.5)) == 0 \
        and "x_ref" not in d and "u_ref" not in d
    return PwaSystem(nx, nu, tuple(tuple(r) for r in regions), tuple(Q), tuple(R), tuple(qlin), tuple(rlin),
                     tuple(alpha), time_inv)


def system_to_dict(system: PwaSystem, theta=None) -> dict:
    def region(r: PwaRegion) -> dict:
        out = {"A": r.A.tolist(), "B": r.B.tolist(), "c": r.c.tolist(),
               "Cf": np.hstack([r.C.F, r.C.f0[:, None]]).tolist()}
        if r.C.n_eq:
            out["Cg"] = np.hstack([r.C.G, r.C.g0[:, None]]).tolist()
        return out

    if system.time_invariant:
        regions = [[region(r) for r in system.regions[0]]]
        Q, R, alpha = system.Q[0].tolist(), system.R[0].tolist(), system.alpha[0]
    else:
        regions = [[region(r) for r in st] for st in system.regions]
        Q = [q.tolist() for q in system.Q]
        R = [r.tolist() for r in system.R]
        alpha = list(system.alpha)
    d = {"n_x": system.nx, "n_u": system.nu, "N": system.N, "regions": regions, "Q": Q, "R": R, "alpha": alpha}
    if theta is not None:
        d["theta"] = list(map(float, theta))
    return d


def load_system(path, N: int | None = None) -> PwaSystem:
    return system_from_dict(json.loads(Path(path).read_text()), N)
