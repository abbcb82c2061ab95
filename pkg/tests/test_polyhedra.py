import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import THETA_51, random_polyhedron, rng
from pwaprox.errors import BlowUpError, DimensionMismatchError
from pwaprox.mpc import build_consensus, example_51
from pwaprox.numerics import solve_convex_qp
from pwaprox.polyhedra import (
    FixedPolyhedron,
    Polyhedron,
    cone_contains,
    contains,
    fm_project_cone,
    instantiate,
    project_onto,
)

BOX = Polyhedron.fixed(F=np.vstack([np.eye(3), -np.eye(3)]), f=np.ones(6))


def test_nonparametric_instantiation_is_identity():
    fp = instantiate(BOX, np.zeros(0))
    assert np.array_equal(fp.F, BOX.F) and np.array_equal(fp.f, BOX.f0)


def test_instantiation_rejects_wrong_theta_length():
    with pytest.raises(DimensionMismatchError):
        instantiate(random_polyhedron(rng(0), 2, p=2), np.zeros(3))


def test_first_stage_encodes_dynamics_and_region():
    stage = build_consensus(example_51(10)).stages[0]
    fp = instantiate(stage.components[0], THETA_51)
    r3 = np.sqrt(3.0)
    A1 = 0.4 * np.array([[1.0, -r3], [r3, 1.0]])
    u = 0.3
    z = np.concatenate([[u], A1 @ THETA_51 + np.array([0.0, u])])  # (u1, w1)
    assert np.allclose(fp.G @ z, fp.g)
    # region 1 needs x1 >= 0; theta1 = 1 satisfies it and |u| <= 1
    assert contains(fp, z, 1e-9)
    assert not contains(fp, z + np.array([0.0, 0.0, 1.0]), 1e-9)
    fp_other = instantiate(stage.components[1], THETA_51)
    assert fp_other.is_empty  # x1 <= 0 fails for theta1 = 1


@pytest.mark.parametrize("seed", range(5))
def test_instantiation_is_affine_in_theta(seed):
    r = rng(seed)
    poly = random_polyhedron(r, 3, n_eq=1, p=2)
    t1, t2 = r.normal(size=2), r.normal(size=2)
    a, b = instantiate(poly, t1), instantiate(poly, t2)
    assert np.allclose(b.g - a.g, poly.Gtheta @ (t2 - t1), atol=1e-14)
    assert np.allclose(b.f - a.f, poly.Ftheta @ (t2 - t1), atol=1e-14)


def test_projection_of_inside_point():
    fp = instantiate(BOX, np.zeros(0))
    s = np.array([0.2, -0.5, 0.9])
    y, d = project_onto(fp, s)
    assert np.allclose(y, s) and d == pytest.approx(0.0, abs=1e-15)


def test_projection_onto_half_line():
    fp = instantiate(Polyhedron.fixed(G=[[0.0, 1.0]], g=[0.0], F=[[1.0, 0.0]], f=[0.0]), np.zeros(0))
    y, d = project_onto(fp, np.array([1.0, 1.0]))
    assert np.allclose(y, [0.0, 0.0], atol=1e-12)
    assert d == pytest.approx(np.sqrt(2.0))


def test_projection_onto_empty_polyhedron():
    fp = instantiate(Polyhedron.fixed(F=[[1.0], [-1.0]], f=[-1.0, -1.0]), np.zeros(0))
    assert fp.is_empty
    assert project_onto(fp, np.zeros(1)) is None


def _closest_grid_distance(fp, s, y):
    """Smallest distance to ``s`` over feasible points of shrinking grids centred at ``y``.

    For a convex set a point is the projection iff no nearby feasible point is
    closer, so refining grids around ``y`` certify it independently of any QP.
    """
    ticks = np.linspace(-1.0, 1.0, 11)
    offsets = np.stack(np.meshgrid(*[ticks] * fp.dim, indexing="ij"), axis=-1).reshape(-1, fp.dim)
    best = np.inf
    for h in (1e-1, 1e-2, 1e-3, 1e-4):
        pts = y + h * offsets
        feas = np.all(pts @ fp.F.T <= fp.f + 1e-12, axis=1)
        if feas.any():
            best = min(best, np.linalg.norm(pts[feas] - s, axis=1).min())
    return best


@pytest.mark.parametrize("seed", range(4))
def test_projection_matches_qp_and_grid_refinement(seed):
    r = rng(300 + seed)
    poly = random_polyhedron(r, 3, n_ineq=4)
    fp = instantiate(poly, np.zeros(0))
    for _ in range(50):
        s = r.normal(size=3) * 3
        y, d = project_onto(fp, s)
        qp = solve_convex_qp(np.eye(3), -s, Fineq=fp.F, fineq=fp.f)
        assert np.linalg.norm(y - qp.z) <= 1e-6
        assert contains(fp, y, 1e-9)
        assert _closest_grid_distance(fp, s, y) >= d - 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_projection_is_firmly_nonexpansive_and_feasible(seed):
    r = rng(seed)
    dim = int(r.integers(1, 5))
    fp = instantiate(random_polyhedron(r, dim, n_eq=int(r.integers(0, dim))), np.zeros(0))
    s, t = r.normal(size=dim) * 3, r.normal(size=dim) * 3
    ys, _ = project_onto(fp, s)
    yt, _ = project_onto(fp, t)
    assert np.dot(ys - yt, ys - yt) <= np.dot(s - t, ys - yt) + 1e-8
    assert contains(fp, ys, 1e-7) and contains(fp, yt, 1e-7)


def test_contains_tolerance_semantics():
    fp = instantiate(BOX, np.zeros(0))
    assert contains(fp, np.array([1.0, -1.0, 1.0]), 1e-9)
    assert not contains(fp, np.array([2.0, 0.0, 0.0]), 1e-9)
    tol = 1e-6
    for eps in (tol / 2, -tol / 2):
        assert contains(fp, np.array([1.0 + eps, 0.0, 0.0]), tol)
    eq = FixedPolyhedron(1, np.array([[1.0]]), np.array([0.0]), np.zeros((0, 1)), np.zeros(0))
    assert contains(eq, np.array([tol / 2]), tol) and contains(eq, np.array([-tol / 2]), tol)
    with pytest.raises(DimensionMismatchError):
        contains(fp, np.zeros(2), 1e-9)


def test_fm_orthant():
    D = fm_project_cone(np.zeros((0, 2)), np.eye(2))
    for v, inside in (([1.0, 2.0], True), ([0.0, 0.0], True), ([-1.0, 1.0], False), ([1.0, -1e-3], False)):
        assert cone_contains(D, np.array(v)) is inside
    assert D.shape[0] == 2


def test_fm_free_line():
    d = np.array([1.0, 2.0, -1.0])
    D = fm_project_cone(d[None, :], np.zeros((0, 3)))
    assert cone_contains(D, 3.0 * d) and cone_contains(D, -0.5 * d)
    assert not cone_contains(D, d + np.array([0.0, 0.0, 0.1]))
    # a line in 3-D needs two inequalities per orthogonal direction
    assert D.shape[0] == 4


def _lp_member(gens_free, gens_nonneg, v):
    A = np.hstack([gens_free.T, gens_nonneg.T])
    bounds = [(None, None)] * gens_free.shape[0] + [(0, None)] * gens_nonneg.shape[0]
    res = linprog(np.zeros(A.shape[1]), A_eq=A, b_eq=v, bounds=bounds, method="highs")
    return res.status == 0


@pytest.mark.parametrize("seed", range(5))
def test_fm_membership_matches_lp(seed):
    r = rng(400 + seed)
    free = r.normal(size=(int(r.integers(0, 2)), 3))
    nonneg = r.normal(size=(int(r.integers(1, 4)), 3))
    D = fm_project_cone(free, nonneg, 3)
    for _ in range(100):
        # mix of cone points and random points
        if r.random() < 0.5:
            v = free.T @ r.normal(size=free.shape[0]) + nonneg.T @ r.uniform(0, 1, size=nonneg.shape[0])
        else:
            v = r.normal(size=3)
        lp = _lp_member(free, nonneg, v)
        assert cone_contains(D, v, 1e-9) == lp
        for alpha in (0.1, 7.0):
            assert cone_contains(D, alpha * v, 1e-9) == lp


def test_fm_blowup_cap():
    r = rng(5)
    with pytest.raises(BlowUpError):
        fm_project_cone(np.zeros((0, 6)), r.normal(size=(14, 6)), 6, cap=5)
