"""Exact check of the local regularity assumption on a staged set.

At every point of ``Z`` the regular normal cone ``N`` must either be ``{0}``
or small moves inside ``N^perp`` must stay in ``Z``. Both ``N`` and the local
shape of ``Z`` only depend on which components are active and which of their
inequalities are active, so the check enumerates those active structures:

* ``N = intersection_i {G_i' nu + F_iA' mu : mu >= 0}`` (H-representation by
  Fourier-Motzkin elimination of the multipliers);
* ``R = union_i {v : G_i v = 0, F_iA v <= 0}``;
* the structure is fine if ``N = {0}`` or ``N^perp`` is contained in ``R``.

Stages of a Cartesian product are checked independently.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import CombinatorialCapError
from .polyhedra import ZERO_ROW_TOL, Polyhedron, _lp_max, contains, fm_project_cone, instantiate
from .problem import StageSet

REALIZE_TOL = 1e-7  # minimum slack of strict inequalities in realizability LPs
LP_BOX = 1e3  # bound on |z|, |theta| in realizability LPs
CONE_TOL = 1e-9
INTERIOR_TOL = 1e-9
DEFAULT_CAP = 10**5


@dataclass(frozen=True)
class ActiveStructure:
    """Active components of one stage and, for each of them, the active inequality rows."""

    components: tuple[int, ...]
    active_sets: tuple[tuple[int, ...], ...]  # aligned with ``components``

    def active_rows(self, i: int) -> tuple[int, ...]:
        return self.active_sets[self.components.index(i)] if i in self.components else ()


@dataclass
class A3Violation:
    stage: int
    structure: ActiveStructure
    witness: np.ndarray
    z: np.ndarray  # a point with this active structure
    theta: np.ndarray
    normal_cone: np.ndarray = field(repr=False)  # H-representation {v : D v <= 0}


@dataclass
class A3Report:
    satisfied: bool
    violations: list[A3Violation]
    structures_checked: list[int]  # per stage


# ---------------------------------------------------------------------------
# cone primitives


def _interior(D: np.ndarray, k: int):
    """Chebyshev-style interior point of ``{x : D x <= 0}`` in the unit box.

    Maximizes the minimum slack ``t`` over the rows of ``D`` (assumed of unit
    length). Returns ``(t, x)``; ``t > 0`` iff the cone has non-empty interior.
    """
    if D.shape[0] == 0:
        return 1.0, np.ones(k)
    c = np.zeros(k + 1)
    c[-1] = 1.0
    A_ub = np.hstack([D, np.ones((D.shape[0], 1))])
    t, x = _lp_max(c, A_ub, np.zeros(D.shape[0]), bounds=[(-1, 1)] * k + [(None, 1)])
    if t is None:
        return -np.inf, np.zeros(k)
    return t, x[:k]


def cone_zero_test(D) -> bool:
    """True iff ``{v : D v <= 0}`` is ``{0}``.

    Maximizes ``+v_j`` and ``-v_j`` for every coordinate over the cone
    intersected with the unit box; the cone is trivial iff every optimum is 0.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    dim = D.shape[1]
    if D.shape[0] == 0:
        return dim == 0
    bounds = [(-1, 1)] * dim
    zeros = np.zeros(D.shape[0])
    for j in range(dim):
        for sign in (1.0, -1.0):
            c = np.zeros(dim)
            c[j] = sign
            val, _ = _lp_max(c, D, zeros, bounds=bounds)
            if val is not None and val > CONE_TOL:
                return False
    return True


def implicit_equalities(D: np.ndarray) -> np.ndarray:
    """Rows of ``D`` that hold with equality on all of ``{v : D v <= 0}``."""
    dim = D.shape[1]
    keep = []
    zeros = np.zeros(D.shape[0])
    for j, d in enumerate(D):
        val, _ = _lp_max(-d, D, zeros, bounds=[(-1, 1)] * dim)
        if val is None or val <= CONE_TOL * max(1.0, np.linalg.norm(d)):
            keep.append(j)
    return D[keep]


def orthogonal_complement_basis(D: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of the span of ``{D v <= 0}``.

    The span of a polyhedral cone is cut out by its implicit equalities, so its
    complement is their row space.
    """
    dim = D.shape[1]
    Deq = implicit_equalities(D) if D.shape[0] else np.zeros((0, dim))
    if Deq.shape[0] == 0:
        return np.zeros((dim, 0))
    U, sv, Vt = np.linalg.svd(Deq)
    r = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
    return Vt[:r].T


def subspace_in_cone_union(S_basis, cones, cap: int = DEFAULT_CAP):
    """Decide whether ``span(S_basis)`` lies inside the union of closed cones.

    ``cones`` are H-representations ``D_i`` (``{v : D_i v <= 0}``). The search
    runs in coordinates ``x`` of an orthonormal basis ``U`` of the subspace,
    where cone ``i`` reads ``{x : D_i U x <= 0}``. Work cones start as the whole
    subspace. A work cone is dropped when it is lower dimensional or contained
    in a remaining cone; otherwise it is split along the rows of one remaining
    cone ``R_i`` into children ``{r_j x >= 0, r_l x <= 0 (l < j)}`` which
    together cover ``P \\ R_i`` up to a set of measure zero. A full-dimensional
    work cone with no cones left certifies non-coverage; the uncovered set is
    open in the subspace, so discarding measure-zero pieces never hides it.

    Returns ``(covered, witness)`` with ``witness`` a unit vector of the
    subspace outside every cone (``None`` when covered).
    """
    S = np.atleast_2d(np.asarray(S_basis, dtype=float))
    dim = S.shape[0]
    if S.shape[1] == 0:
        return True, None
    U, sv, _ = np.linalg.svd(S, full_matrices=False)
    U = U[:, sv > 1e-10 * max(1.0, sv[0])]
    k = U.shape[1]
    reduced = []
    for D in cones:
        Dx = np.atleast_2d(np.asarray(D, dtype=float)).reshape(-1, dim) @ U
        keep = np.linalg.norm(Dx, axis=1) > ZERO_ROW_TOL
        reduced.append(Dx[keep] / np.linalg.norm(Dx[keep], axis=1)[:, None])
    stack = [(np.zeros((0, k)), tuple(range(len(reduced))))]
    visited = 0
    while stack:
        P, rem = stack.pop()
        visited += 1
        if visited > cap:
            raise CombinatorialCapError(f"cone covering visited more than {cap} work cones")
        t, x = _interior(P, k)
        if t <= INTERIOR_TOL:
            continue
        if any(_cone_inside(P, reduced[i], k) for i in rem):
            continue
        if not rem:
            w = U @ _off_cones(P, x, t, reduced)
            return False, w / np.linalg.norm(w)
        Ri, rest = reduced[rem[0]], rem[1:]
        if _interior(np.vstack([P, Ri]), k)[0] <= INTERIOR_TOL:
            # R_i meets P only on a lower-dimensional set
            stack.append((P, rest))
            continue
        split = [r for r in Ri if _row_max(P, r, k) > CONE_TOL]
        children = []
        for j, r in enumerate(split):
            children.append((np.vstack([P, -r[None, :]] + ([np.array(split[:j])] if j else [])), rest))
        stack.extend(reversed(children))  # depth-first in row order
    return True, None


def _off_cones(P, x, t, cones) -> np.ndarray:
    """Move an interior point of ``P`` off cones that meet ``P`` only in a lower-dimensional set."""
    def outside(y):
        return all(D.shape[0] and np.max(D @ y) > 1e-9 for D in cones)

    rng = np.random.Generator(np.random.PCG64(0))
    y = x
    for _ in range(1000):
        if outside(y):
            return y
        # stays in P: the Chebyshev ball around x has radius t
        step = rng.normal(size=x.size)
        y = x + 0.5 * t * step / np.linalg.norm(step)
    return y


def _row_max(P, r, k) -> float:
    if P.shape[0] == 0:
        return float(np.abs(r).sum())
    val, _ = _lp_max(r, P, np.zeros(P.shape[0]), bounds=[(-1, 1)] * k)
    return -np.inf if val is None else val


def _cone_inside(P, D, k) -> bool:
    return all(_row_max(P, r, k) <= CONE_TOL for r in D)


# ---------------------------------------------------------------------------
# active structures


def _rows(poly: Polyhedron):
    """Stacked constraint data over ``x = (z, theta)``: ``Gz z - Gt theta = g0`` and ``Fz z - Ft theta <= f0``."""
    return (np.hstack([poly.G, -poly.Gtheta]), poly.g0, np.hstack([poly.F, -poly.Ftheta]), poly.f0)


def _realize(stage: StageSet, members: dict[int, tuple[int, ...]], excluded_rows: dict[int, tuple[str, int]]):
    """Maximize the strict slack ``t`` for one active structure and one choice of violated rows.

    Returns ``(t, z, theta)`` or ``None`` when infeasible.
    """
    n, p = stage.dim, stage.p
    nv = n + p + 1
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for i, act in members.items():
        G, g, F, f = _rows(stage.components[i])
        for gi, gv in zip(G, g):
            A_eq.append(np.append(gi, 0.0))
            b_eq.append(gv)
        for j, (fj, fv) in enumerate(zip(F, f)):
            if j in act:
                A_eq.append(np.append(fj, 0.0))
                b_eq.append(fv)
            else:
                A_ub.append(np.append(fj, 1.0))
                b_ub.append(fv)
    for i, (kind, j) in excluded_rows.items():
        G, g, F, f = _rows(stage.components[i])
        if kind == "F":
            # F_j x - f_j >= t
            A_ub.append(np.append(-F[j], 1.0))
            b_ub.append(-f[j])
        else:
            sign = 1.0 if kind == "G+" else -1.0
            A_ub.append(np.append(-sign * G[j], 1.0))
            b_ub.append(-sign * g[j])
    c = np.zeros(nv)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq) if A_eq else None, b_eq=np.array(b_eq) if b_eq else None,
                  bounds=[(-LP_BOX, LP_BOX)] * (n + p) + [(None, 1.0)], method="highs")
    if res.status != 0:
        return None
    return -res.fun, res.x[:n], res.x[n:n + p]


def _exclusion_choices(poly: Polyhedron):
    return [("F", j) for j in range(poly.n_ineq)] + [(s, j) for j in range(poly.n_eq) for s in ("G+", "G-")]


def realizable_structures(stage: StageSet, cap: int = DEFAULT_CAP):
    """All active structures attained by some ``theta`` and some ``z`` in ``Z(theta)``.

    Yields ``(structure, z, theta)`` with a witness point per structure.
    Structures that are only attained on lower-dimensional parameter sets
    are included.
    """
    m = stage.m
    # active sets each component can attain on its own
    own: list[list[tuple[int, ...]]] = []
    tried = 0
    for i, poly in enumerate(stage.components):
        sets = []
        for size in range(poly.n_ineq + 1):
            for act in itertools.combinations(range(poly.n_ineq), size):
                tried += 1
                if tried > cap:
                    raise CombinatorialCapError(f"more than {cap} candidate active sets")
                sol = _realize(stage, {i: act}, {})
                if sol is not None and sol[0] >= REALIZE_TOL:
                    sets.append(act)
        own.append(sets)
    for size in range(1, m + 1):
        for comps in itertools.combinations(range(m), size):
            others = [i for i in range(m) if i not in comps]
            for acts in itertools.product(*(own[i] for i in comps)):
                members = dict(zip(comps, acts))
                best = None
                for excl in itertools.product(*(_exclusion_choices(stage.components[i]) for i in others)):
                    tried += 1
                    if tried > cap:
                        raise CombinatorialCapError(f"more than {cap} candidate active structures")
                    sol = _realize(stage, members, dict(zip(others, excl)))
                    if sol is not None and sol[0] >= REALIZE_TOL:
                        best = sol
                        break
                if best is not None:
                    yield ActiveStructure(tuple(comps), tuple(acts)), best[1], best[2]


def normal_cone(stage: StageSet, structure: ActiveStructure) -> np.ndarray:
    """H-representation of the regular normal cone for an active structure."""
    rows = []
    for i, act in zip(structure.components, structure.active_sets):
        poly = stage.components[i]
        G = poly.G[np.linalg.norm(poly.G, axis=1) > ZERO_ROW_TOL] if poly.n_eq else poly.G
        F = poly.F[list(act)] if act else np.zeros((0, stage.dim))
        F = F[np.linalg.norm(F, axis=1) > ZERO_ROW_TOL] if F.shape[0] else F
        rows.append(fm_project_cone(G, F, stage.dim))
    return np.vstack(rows)


def recession_cone(stage: StageSet, i: int, act: tuple[int, ...]) -> np.ndarray:
    """``{v : G_i v = 0, F_iA v <= 0}`` as rows ``D`` with ``D v <= 0``."""
    poly = stage.components[i]
    F = poly.F[list(act)] if act else np.zeros((0, stage.dim))
    return np.vstack([F, poly.G, -poly.G])


def check_stage(stage: StageSet, k: int = 0, cap: int = DEFAULT_CAP, stop_at_first: bool = False):
    """Check one stage; returns ``(violations, number of structures checked)``."""
    if stage.m == 1:
        # a single convex polyhedron always satisfies the condition
        return [], 0
    violations = []
    count = 0
    for structure, z, theta in realizable_structures(stage, cap):
        count += 1
        D = normal_cone(stage, structure)
        if cone_zero_test(D):
            continue
        S = orthogonal_complement_basis(D)
        if S.shape[1] == 0:
            continue
        cones = [recession_cone(stage, i, a) for i, a in zip(structure.components, structure.active_sets)]
        covered, w = subspace_in_cone_union(S, cones, cap)
        if not covered:
            violations.append(A3Violation(k, structure, w, z, theta, D))
            if stop_at_first:
                break
    return violations, count


def _stage_key(stage: StageSet) -> bytes:
    parts = [str((stage.dim, stage.p, stage.m)).encode()]
    for c in stage.components:
        for a in (c.G, c.g0, c.Gtheta, c.F, c.f0, c.Ftheta):
            parts.append(str(a.shape).encode() + a.tobytes())
    return b"|".join(parts)


def check_a3(stages, cap: int = DEFAULT_CAP, stop_at_first: bool = False) -> A3Report:
    """Check every stage; identical stages are only checked once."""
    stages = list(stages)
    done: dict[bytes, tuple[list[A3Violation], int]] = {}
    violations: list[A3Violation] = []
    counts = []
    for k, stage in enumerate(stages):
        key = _stage_key(stage)
        if key not in done:
            done[key] = check_stage(stage, k, cap, stop_at_first)
        viol, cnt = done[key]
        counts.append(cnt)
        violations.extend(A3Violation(k, v.structure, v.witness, v.z, v.theta, v.normal_cone) for v in viol)
        if violations and stop_at_first:
            break
    return A3Report(not violations, violations, counts)


def normal_cone_extent(stage: StageSet, structure: ActiveStructure, w) -> float:
    """``max |<w, v>|`` over ``v`` in the normal cone with ``||v||_inf <= 1``.

    Uses the generator form ``v = G_i' nu_i + F_iA' mu_i`` for every active
    component directly (no elimination), so it is an independent check of the
    H-representation used by the verdict.
    """
    dim = stage.dim
    blocks = []
    for i, act in zip(structure.components, structure.active_sets):
        poly = stage.components[i]
        F = poly.F[list(act)] if act else np.zeros((0, dim))
        blocks.append((poly.G, F))
    nvar = dim + sum(G.shape[0] + F.shape[0] for G, F in blocks)
    A_eq = []
    col = dim
    for G, F in blocks:
        rows = np.zeros((dim, nvar))
        rows[:, :dim] = np.eye(dim)
        rows[:, col:col + G.shape[0]] = -G.T
        col += G.shape[0]
        rows[:, col:col + F.shape[0]] = -F.T
        col += F.shape[0]
        A_eq.append(rows)
    bounds = [(-1, 1)] * dim
    for G, F in blocks:
        bounds += [(None, None)] * G.shape[0] + [(0, None)] * F.shape[0]
    A_eq = np.vstack(A_eq)
    best = 0.0
    for sign in (1.0, -1.0):
        c = np.zeros(nvar)
        c[:dim] = sign * np.asarray(w, dtype=float)
        val, _ = _lp_max(c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), bounds=bounds)
        if val is not None:
            best = max(best, val)
    return best


def witness_is_sound(stage: StageSet, violation: A3Violation, eps: float = 1e-3, tol: float = 1e-8):
    """``(orthogonal, leaves_Z)`` for a reported violation.

    ``orthogonal``: ``|<w, v>| <= tol ||w|| ||v||`` over the normal cone;
    ``leaves_Z``: ``z + eps w`` lies in no component at the reported ``theta``.
    """
    w = np.asarray(violation.witness, dtype=float)
    # a generator scaled to ||v||_inf = 1 has ||v|| >= 1
    orth = bool(normal_cone_extent(stage, violation.structure, w) <= tol * np.linalg.norm(w))
    moved = violation.z + eps * w
    outside = not any(contains(instantiate(c, violation.theta), moved, 1e-12) for c in stage.components)
    return orth, outside
