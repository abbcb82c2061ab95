import itertools

import numpy as np
import pytest

from pwaprox.mpc import build_consensus, example_51
from pwaprox.polyhedra import Polyhedron, instantiate, project_onto
from pwaprox.problem import ConsensusProblem, StageSet

THETA_51 = np.array([1.0, 1.0])


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def random_spd(r, n, cond=10.0):
    Q, _ = np.linalg.qr(r.normal(size=(n, n)))
    lam = np.exp(r.uniform(0.0, np.log(cond), size=n))
    return (Q * lam) @ Q.T


def random_polyhedron(r, dim, n_ineq=None, n_eq=0, p=0, bounded=True):
    """Non-empty polyhedron around a random centre, optionally parametric."""
    if n_ineq is None:
        n_ineq = int(r.integers(1, 5))
    centre = r.normal(size=dim)
    F = r.normal(size=(n_ineq, dim))
    if bounded:
        F = np.vstack([F, np.eye(dim), -np.eye(dim)])
    f = F @ centre + r.uniform(0.2, 1.5, size=F.shape[0])
    G = r.normal(size=(n_eq, dim))
    g = G @ centre
    Ft = r.normal(size=(F.shape[0], p)) * 0.1
    Gt = r.normal(size=(n_eq, p)) * 0.1
    return Polyhedron(dim, G, g, Gt, F, f, Ft)


def random_staged_problem(r, n_stages=None, max_m=3, max_dim=4, n_eq=None, single=False):
    """Random consensus problem with non-empty components and a feasible affine set."""
    n_stages = n_stages or int(r.integers(1, 4))
    stages = []
    for _ in range(n_stages):
        dim = int(r.integers(1, max_dim + 1))
        m = 1 if single else int(r.integers(1, max_m + 1))
        comps = tuple(random_polyhedron(r, dim, n_ineq=int(r.integers(0, 4)),
                                        n_eq=int(r.integers(0, min(2, dim))), bounded=bool(r.integers(0, 2)))
                      for _ in range(m))
        stages.append(StageSet(dim, comps))
    n = sum(s.dim for s in stages)
    H = random_spd(r, n)
    h = r.normal(size=n)
    m_eq = int(r.integers(0, max(1, n // 2))) if n_eq is None else n_eq
    A = r.normal(size=(m_eq, n))
    return ConsensusProblem(H, h, A, r.normal(size=m_eq), tuple(stages))


def brute_force_projection(problem, theta, s):
    """Minimum over every component combination, each projected with the generic QP."""
    best, best_y = np.inf, None
    choices = [range(st.m) for st in problem.stages]
    for combo in itertools.product(*choices):
        y = np.zeros(problem.n)
        total = 0.0
        ok = True
        for k, i in enumerate(combo):
            fp = instantiate(problem.stages[k].components[i], theta)
            fp.table = None  # force the active-set QP
            res = project_onto(fp, problem.block(s, k))
            if res is None:
                ok = False
                break
            yk, d = res
            y[problem.offsets[k]:problem.offsets[k + 1]] = yk
            total += d * d
        if ok and total < best:
            best, best_y = total, y
    return best_y, np.sqrt(best)


@pytest.fixture(scope="session")
def ex51():
    return build_consensus(example_51(10))


@pytest.fixture(scope="session")
def ex51_literal():
    return build_consensus(example_51(10, weight=1.0))


def random_convex_problem(r, roomy=False):
    """Single-component stages, an affine set through a feasible point.

    With ``roomy`` the polyhedra are large boxes, so the minimizer over the
    affine set usually lies inside them.
    """
    n_stages = int(r.integers(1, 4))
    stages = []
    for _ in range(n_stages):
        dim = int(r.integers(1, 4))
        if roomy:
            poly = Polyhedron.fixed(F=np.vstack([np.eye(dim), -np.eye(dim)]), f=np.full(2 * dim, 50.0))
        else:
            poly = random_polyhedron(r, dim, n_ineq=int(r.integers(1, 4)))
        stages.append(StageSet(dim, (poly,)))
    n = sum(s.dim for s in stages)
    # a point of Z: project the origin stage by stage
    z0 = np.concatenate([project_onto(instantiate(s.components[0], np.zeros(0)), np.zeros(s.dim))[0]
                         for s in stages])
    m = int(r.integers(0, max(1, n - 1)))
    A = r.normal(size=(m, n))
    scale = 0.2 if roomy else 3.0
    return ConsensusProblem(random_spd(r, n), r.normal(size=n) * scale, A, A @ z0, tuple(stages))


def admissible_xi(problem, factor=2.0):
    from pwaprox.operator import min_admissible_xi

    return factor * max(min_admissible_xi(problem), 1e-3)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[i]
        terminalreporter.write_line(f"criterion {i:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
