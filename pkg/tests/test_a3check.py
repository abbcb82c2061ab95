import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls

from conftest import rng
from pwaprox.a3check import (
    ActiveStructure,
    check_a3,
    check_stage,
    cone_zero_test,
    normal_cone,
    realizable_structures,
    subspace_in_cone_union,
    witness_is_sound,
)
from pwaprox.errors import CombinatorialCapError
from pwaprox.polyhedra import Polyhedron, contains, instantiate
from pwaprox.problem import StageSet


def two_plane_stage():
    """Two half-strips sharing the segment {(t, 0, 0) : -4 <= t <= 0}, one flat and one tilted."""
    F = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    P0 = Polyhedron.fixed(G=[[0, 0, 1.0]], g=[0.0], F=F, f=[0, 4, 1.4, 1.4])
    P1 = Polyhedron.fixed(G=[[0, -1.0, 1.0]], g=[0.0], F=F, f=[0, 4, 1, 1])
    return StageSet(3, (P0, P1))


def box_stage(dim, lo, hi):
    F = np.vstack([np.eye(dim), -np.eye(dim)])
    return Polyhedron.fixed(F=F, f=np.concatenate([np.full(dim, hi), np.full(dim, -lo)]))


# ---------------------------------------------------------------------------
# cone primitives


def test_cone_zero_examples():
    assert cone_zero_test(np.vstack([np.eye(3), -np.eye(3)]))
    assert not cone_zero_test(-np.eye(3))
    assert not cone_zero_test(np.zeros((0, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 8))
def test_cone_zero_agrees_with_row_generators(seed, dim, k):
    # {v : D v <= 0} is {0} iff the rows of D generate the whole space,
    # i.e. every +-e_j is a nonnegative combination of the rows
    r = rng(seed)
    D = r.normal(size=(k, dim))
    if r.integers(0, 2):
        D = np.vstack([D, -D[: int(r.integers(1, k + 1))].sum(axis=0, keepdims=True)])
    spans = all(nnls(D.T, sgn * e)[1] <= 1e-9 for e in np.eye(dim) for sgn in (1.0, -1.0))
    assert cone_zero_test(D) == spans
    if D.shape[0] <= dim:
        assert not spans


def test_line_covered_by_two_half_lines():
    covered, w = subspace_in_cone_union(np.array([[1.0], [0.0]]), [np.array([[-1.0, 0.0]]), np.array([[1.0, 0.0]])])
    assert covered and w is None


def test_plane_not_covered_by_orthant():
    covered, w = subspace_in_cone_union(np.eye(2), [-np.eye(2)])
    assert not covered
    assert w[0] < 0 and w[1] < 0
    assert abs(np.linalg.norm(w) - 1) <= 1e-12


def test_plane_covered_by_four_quadrants():
    quads = [np.diag([sx, sy]) for sx in (1.0, -1.0) for sy in (1.0, -1.0)]
    assert subspace_in_cone_union(np.eye(2), quads)[0]
    assert not subspace_in_cone_union(np.eye(2), quads[:3])[0]


def test_covering_cap():
    cones = [r for r in (rng(1).normal(size=(6, 3)) for _ in range(6))]
    with pytest.raises(CombinatorialCapError):
        subspace_in_cone_union(np.eye(3), cones, cap=1)


def _sample_verdict(S, cones, n=10**4, tol=1e-6, seed=0):
    X = rng(seed).normal(size=(n, S.shape[1])) @ S.T
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    inside = np.zeros(n, dtype=bool)
    for D in cones:
        inside |= np.all(X @ D.T <= tol, axis=1)
    return bool(inside.all())


@pytest.mark.parametrize("seed", range(40))
def test_covering_agrees_with_directional_sampling(seed):
    r = rng(seed)
    S = np.linalg.qr(r.normal(size=(3, int(r.integers(1, 4)))))[0]
    cones = [r.normal(size=(int(r.integers(1, 3)), 3)) for _ in range(int(r.integers(1, 5)))]
    covered, w = subspace_in_cone_union(S, cones)
    assert covered == _sample_verdict(S, cones)
    if not covered:
        assert np.linalg.norm(w - S @ (S.T @ w)) <= 1e-10
        assert all(np.max(D @ w) > 0 for D in cones)


# ---------------------------------------------------------------------------
# stage checks


def test_convex_stage_is_satisfied():
    stage = StageSet(2, (box_stage(2, -1.0, 1.0),))
    report = check_a3([stage])
    assert report.satisfied and not report.violations


def test_two_disjoint_boxes_are_satisfied():
    # components never touch, so every regular normal cone sees one box only
    stage = StageSet(2, (box_stage(2, -1.0, 0.0), box_stage(2, 1.0, 2.0)))
    assert check_a3([stage]).satisfied


def test_adjacent_boxes_are_satisfied():
    # two boxes sharing a face form a convex rectangle
    F = np.vstack([np.eye(2), -np.eye(2)])
    a = Polyhedron.fixed(F=F, f=[0.0, 1.0, 1.0, 1.0])
    b = Polyhedron.fixed(F=F, f=[1.0, 1.0, 0.0, 1.0])
    assert check_a3([StageSet(2, (a, b))]).satisfied


def test_two_planes_violate_with_sound_witness():
    stage = two_plane_stage()
    report = check_a3([stage])
    assert not report.satisfied
    origin = [v for v in report.violations if np.allclose(v.z, 0.0, atol=1e-6)]
    assert origin
    for v in report.violations:
        w = v.witness
        assert np.linalg.norm(w) > 0
        orth, outside = witness_is_sound(stage, v)
        assert orth and outside
    for v in origin:
        # the normal cone at the origin is the ray along e_1
        assert abs(v.witness[0]) <= 1e-8 * np.linalg.norm(v.witness)
        assert set(v.structure.components) == {0, 1}


def test_the_hand_witness_is_also_outside():
    stage = two_plane_stage()
    w = np.array([0.0, 1.0, 0.5])
    assert not any(contains(instantiate(c, np.zeros(0)), 1e-3 * w, 1e-12) for c in stage.components)
    structure = ActiveStructure((0, 1), ((0,), (0,)))
    N = normal_cone(stage, structure)
    # (0, 1, 1/2) is orthogonal to e_1, which spans the normal cone
    assert not cone_zero_test(N)
    assert np.all(N @ np.array([1.0, 0.0, 0.0]) <= 1e-9)


def test_realized_structures_are_consistent():
    stage = two_plane_stage()
    for structure, z, theta in realizable_structures(stage):
        for i in structure.components:
            fp = instantiate(stage.components[i], theta)
            assert contains(fp, z, 1e-6)
            act = structure.active_rows(i)
            assert np.all(np.abs(fp.F[list(act)] @ z - fp.f[list(act)]) <= 1e-6)


def test_stages_are_checked_independently():
    bad, good = two_plane_stage(), StageSet(2, (box_stage(2, -1.0, 1.0),))
    a, b = check_a3([bad]), check_a3([good])
    both = check_a3([good, bad, good])
    assert both.satisfied == (a.satisfied and b.satisfied)
    assert {v.stage for v in both.violations} == {1}
    assert len(both.violations) == len(a.violations)
    assert check_a3([good, good]).satisfied


def test_stop_at_first():
    report = check_a3([two_plane_stage()], stop_at_first=True)
    assert not report.satisfied and len(report.violations) == 1


def test_single_component_shortcut():
    stage = StageSet(2, (box_stage(2, -1.0, 1.0),))
    assert check_stage(stage) == ([], 0)
