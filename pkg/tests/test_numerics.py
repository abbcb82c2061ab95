import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd, rng
from pwaprox.errors import DimensionMismatchError, NotSymmetricError, RankDeficientError
from pwaprox.numerics import (
    as_matrix,
    nullspace_and_particular,
    solve_convex_qp,
    sym_eigendecomposition,
)


def test_nullspace_of_difference_row():
    V, v_bar = nullspace_and_particular(np.array([[1.0, -1.0]]), [0.0])
    assert V.shape == (2, 1)
    assert np.allclose(np.abs(V[:, 0]), [1 / np.sqrt(2)] * 2)
    assert np.allclose(v_bar, 0.0)


def test_nullspace_of_identity_is_empty():
    b = np.array([1.0, -2.0, 3.0])
    V, v_bar = nullspace_and_particular(np.eye(3), b)
    assert V.shape == (3, 0)
    assert np.allclose(v_bar, b)


@pytest.mark.parametrize("seed", range(5))
def test_nullspace_residuals(seed):
    r = rng(seed)
    A, b = r.normal(size=(3, 7)), r.normal(size=3)
    V, v_bar = nullspace_and_particular(A, b)
    assert np.linalg.norm(A @ V) <= 1e-10
    assert np.linalg.norm(A @ v_bar - b) <= 1e-10
    assert np.allclose(V.T @ V, np.eye(4), atol=1e-12)


def test_rank_deficient_rows_rejected():
    A = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(RankDeficientError):
        nullspace_and_particular(A, [0.0, 0.0])


def test_eigen_identity_and_diagonal():
    _, lam = sym_eigendecomposition(np.eye(4))
    assert np.allclose(lam, 1.0)
    Q, lam = sym_eigendecomposition(np.diag([1.0, 3.0]))
    assert np.allclose(lam, [3.0, 1.0])
    assert np.allclose(np.abs(Q), [[0, 1], [1, 0]])


def test_eigen_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        sym_eigendecomposition(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10**6))
def test_eigen_reconstruction_order_and_gershgorin(n, seed):
    r = rng(seed)
    B = r.normal(size=(n, n))
    S = B + B.T
    Q, lam = sym_eigendecomposition(S)
    assert np.linalg.norm(Q @ np.diag(lam) @ Q.T - S) <= 1e-9 * max(1.0, np.linalg.norm(S))
    assert np.all(np.diff(lam) <= 1e-12)
    radius = np.abs(S).sum(axis=1) - np.abs(np.diag(S))
    for l in lam:
        assert np.any(np.abs(l - np.diag(S)) <= radius + 1e-9)


def test_qp_unconstrained_and_clamped():
    p = np.array([0.3, -1.2, 2.0])
    res = solve_convex_qp(np.eye(3), -p)
    assert res.optimal and np.allclose(res.z, p)
    box_F = np.vstack([np.eye(2), -np.eye(2)])
    res = solve_convex_qp(np.eye(2), -np.array([2.0, 0.0]), Fineq=box_F, fineq=np.ones(4))
    assert np.allclose(res.z, [1.0, 0.0])


def test_qp_infeasible_is_a_status():
    res = solve_convex_qp(np.eye(1), np.zeros(1), Fineq=[[1.0], [-1.0]], fineq=[-1.0, -1.0])
    assert res.status == "infeasible" and res.z is None


def _enumerate_active_sets(P, q, F, f):
    """Best KKT point over every active subset (exhaustive oracle)."""
    n, m = P.shape[0], F.shape[0]
    best = None
    for size in range(m + 1):
        for a in itertools.combinations(range(m), size):
            Fa = F[list(a)]
            K = np.block([[P, Fa.T], [Fa, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-q, f[list(a)]]))
            except np.linalg.LinAlgError:
                continue
            z, mu = sol[:n], sol[n:]
            if np.all(F @ z <= f + 1e-9) and np.all(mu >= -1e-9):
                val = 0.5 * z @ P @ z + q @ z
                if best is None or val < best[1]:
                    best = (z, val)
    return best


@pytest.mark.parametrize("seed", range(30))
def test_qp_matches_active_set_enumeration(seed):
    r = rng(100 + seed)
    P = random_spd(r, 2)
    q = r.normal(size=2) * 3
    m = int(r.integers(1, 5))
    F = r.normal(size=(m, 2))
    f = F @ r.normal(size=2) + r.uniform(0.1, 1.0, size=m)
    res = solve_convex_qp(P, q, Fineq=F, fineq=f)
    z_ref, _ = _enumerate_active_sets(P, q, F, f)
    assert np.linalg.norm(res.z - z_ref) <= 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_qp_with_equalities_matches_enumeration(seed):
    r = rng(200 + seed)
    n = 4
    P = random_spd(r, n)
    q = r.normal(size=n)
    G = r.normal(size=(1, n))
    x0 = r.normal(size=n)
    F = r.normal(size=(5, n))
    f = F @ x0 + r.uniform(0.1, 1.0, size=5)
    res = solve_convex_qp(P, q, G, G @ x0, F, f)
    # eliminate the equality and enumerate in the reduced space
    V, vb = nullspace_and_particular(G, G @ x0)
    zr, _ = _enumerate_active_sets(V.T @ P @ V, V.T @ (P @ vb + q), F @ V, f - F @ vb)
    assert np.linalg.norm(res.z - (vb + V @ zr)) <= 1e-8


def test_as_matrix_checks_columns():
    assert as_matrix(None, 3).shape == (0, 3)
    with pytest.raises(DimensionMismatchError):
        as_matrix([[1.0, 2.0]], 3)
