import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import THETA_51, random_polyhedron, random_spd, rng
from pwaprox.errors import XiTooSmallError
from pwaprox.operator import (
    build_operator,
    min_admissible_xi,
    trivial_solution,
    unconstrained_minimizer,
    update_linear_cost,
)
from pwaprox.oracle import global_solve
from pwaprox.polyhedra import Polyhedron
from pwaprox.problem import ConsensusProblem, StageSet, objective
from pwaprox.solver import SolverConfig, solve, verify_proximal_kkt


def random_free_problem(r, n, m):
    H = random_spd(r, n)
    return ConsensusProblem(H, r.normal(size=n), r.normal(size=(m, n)), r.normal(size=m), (StageSet.free(n),))


def test_closed_form_without_coupling():
    xi = 3.0
    h = np.array([1.0, -2.0, 0.5])
    prob = ConsensusProblem(np.eye(3), h, np.zeros((0, 3)), np.zeros(0), (StageSet.free(3),))
    op = build_operator(prob, xi)
    assert np.allclose(op.R, np.eye(3))
    assert np.allclose(op.M, xi / (xi - 1) * np.eye(3))
    assert np.allclose(op.c, h / (xi - 1))
    assert np.allclose(op.W, (xi - 1) / (2 * xi) * np.eye(3))


def test_example_threshold(ex51, ex51_literal):
    build_operator(ex51_literal, 10.0)
    with pytest.raises(XiTooSmallError, match="lambda_max"):
        build_operator(ex51_literal, 1.0)
    # the halved cost halves the threshold
    assert min_admissible_xi(ex51) == pytest.approx(1.0)
    with pytest.raises(XiTooSmallError):
        build_operator(ex51, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_spectral_properties(seed):
    r = rng(seed)
    n = int(r.integers(2, 9))
    m = int(r.integers(0, n))
    prob = random_free_problem(r, n, m)
    xi = min_admissible_xi(prob) * r.uniform(1.01, 5.0)
    op = build_operator(prob, xi)
    lam = np.linalg.eigvalsh(op.M)
    assert lam[0] >= -1e-9
    pos = lam[lam > 1e-9 * max(1.0, lam[-1])]
    assert len(pos) == n - m and pos.min() > 1.0
    assert np.min(np.abs(np.linalg.eigvalsh(op.W))) > 0.0
    assert np.allclose(op.R @ prob.H @ op.R, op.R, atol=1e-9 * max(1.0, np.abs(op.R).max()))
    s = r.normal(size=n)
    y = r.normal(size=n)
    K = op.M @ s + op.c - y
    assert np.allclose(op.apply_T(s, y) - s, -op.W @ K, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_xi_just_below_threshold_rejected(seed):
    prob = random_free_problem(rng(seed), 5, 2)
    with pytest.raises(XiTooSmallError):
        build_operator(prob, 0.99 * min_admissible_xi(prob))


def test_new_linear_cost():
    r = rng(3)
    prob = random_free_problem(r, 6, 2)
    op = build_operator(prob, 2.0 * min_admissible_xi(prob))
    assert update_linear_cost(op, prob, prob.h).c is op.c
    h = r.normal(size=6)
    c1 = update_linear_cost(op, prob, h).c
    c2 = update_linear_cost(op, prob, 2 * h).c
    assert np.allclose(c2 - c1, op.K @ op.R @ h, atol=1e-12)
    for _ in range(5):
        h = r.normal(size=6)
        rebuilt = build_operator(prob.with_linear_cost(h), op.xi).c
        assert np.allclose(update_linear_cost(op, prob, h).c, rebuilt, atol=1e-12)


def test_trivial_solution_cases(ex51):
    op = build_operator(ex51, 10.0)
    assert trivial_solution(ex51, THETA_51, op) is None
    # origin is in every region of the example when theta = 0
    z = trivial_solution(ex51, np.zeros(2), op)
    assert z is not None and np.allclose(z, 0.0)


def test_trivial_solution_is_global_on_a_convex_instance():
    r = rng(8)
    prob = random_free_problem(r, 4, 1)
    op = build_operator(prob, 2.0 * min_admissible_xi(prob))
    z_e = unconstrained_minimizer(prob, op)
    box = Polyhedron.fixed(F=np.vstack([np.eye(4), -np.eye(4)]), f=np.abs(z_e).max() + 1.0 + np.zeros(8))
    boxed = ConsensusProblem(prob.H, prob.h, prob.A, prob.b, (StageSet(4, (box,)),))
    z = trivial_solution(boxed, np.zeros(0), op)
    assert z is not None
    assert objective(boxed, z) == pytest.approx(global_solve(boxed, np.zeros(0)).objective, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_operator_zero_is_a_proximal_kkt_point(seed):
    r = rng(900 + seed)
    n = 5
    poly = random_polyhedron(r, n, n_ineq=3, bounded=True)
    prob = ConsensusProblem(random_spd(r, n), r.normal(size=n) * 3, r.normal(size=(1, n)),
                            np.zeros(1), (StageSet(n, (poly,)),))
    # make the affine set meet the polyhedron: pass through an interior point
    c = global_solve(ConsensusProblem(np.eye(n), np.zeros(n), np.zeros((0, n)), np.zeros(0),
                                      (StageSet(n, (poly,)),)), np.zeros(0)).z
    prob = ConsensusProblem(prob.H, prob.h, prob.A, prob.A @ c, prob.stages)
    xi = 3.0 * min_admissible_xi(prob)
    op = build_operator(prob, xi)
    res = solve(prob, np.zeros(0), op, SolverConfig(xi=xi, eps_tol=1e-11, max_iter=200000))
    assert res.converged
    if res.status == "TrivialGlobal":
        return
    s = res.s
    y, _ = prob.at(np.zeros(0)).project(s)
    assert np.linalg.norm(op.M @ s + op.c - y) <= 1e-9
    z = op.M @ s + op.c
    assert verify_proximal_kkt(prob, np.zeros(0), z, xi * (z - s), xi, 1e-7)[2]
