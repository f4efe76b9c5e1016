import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from kfcs.dantzig import (
    DantzigProblem,
    SolverError,
    Tolerances,
    gauss_dantzig,
    least_squares_on_support,
    repair_support,
    solve_dantzig,
)
from kfcs.sensing import generate_gaussian_matrix
from oracles import dantzig_by_vertices


def _instance(rng, n, m, k=3, noise=0.05):
    A = generate_gaussian_matrix(n, m, rng)
    x = np.zeros(m)
    x[rng.choice(m, min(k, m), replace=False)] = rng.standard_normal(min(k, m))
    y = A @ x + noise * rng.standard_normal(n)
    lam = rng.uniform(0.02, 0.95) * np.max(np.abs(A.T @ y))
    return A, y, lam


def _highs(A, y, lam):
    G, c = A.T @ A, A.T @ y
    m = A.shape[1]
    res = linprog(
        np.ones(2 * m), A_ub=np.block([[G, -G], [-G, G]]), b_ub=np.r_[c + lam, lam - c], bounds=(0, None), method="highs"
    )
    return res.fun


def _feasible(A, y, lam, zeta):
    return np.max(np.abs(A.T @ (y - A @ zeta))) <= lam * (1 + 1e-6)


@pytest.mark.parametrize("seed", range(30))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    A, y, lam = _instance(rng, int(rng.integers(2, 5)), int(rng.integers(4, 8)))
    sol = solve_dantzig(DantzigProblem(A, y, lam))
    expected, _ = dantzig_by_vertices(A, y, lam)
    assert sol.ok
    assert sol.objective == pytest.approx(expected, abs=1e-7)
    assert _feasible(A, y, lam, sol.zeta)


@pytest.mark.parametrize("seed", range(10))
def test_matches_highs_on_larger_problems(seed):
    rng = np.random.default_rng(100 + seed)
    A, y, lam = _instance(rng, 30, 90, k=8, noise=0.1)
    sol = solve_dantzig(DantzigProblem(A, y, lam))
    assert sol.objective == pytest.approx(_highs(A, y, lam), rel=1e-7, abs=1e-9)
    assert _feasible(A, y, lam, sol.zeta)


@pytest.mark.parametrize("seed", range(10))
def test_revised_and_tableau_methods_agree(seed):
    rng = np.random.default_rng(200 + seed)
    A, y, lam = _instance(rng, 12, 30, k=5)
    a = solve_dantzig(DantzigProblem(A, y, lam), method="revised")
    b = solve_dantzig(DantzigProblem(A, y, lam), method="tableau")
    assert a.objective == pytest.approx(b.objective, abs=1e-9)


def test_forced_bland_rule_reaches_same_optimum():
    rng = np.random.default_rng(7)
    A, y, lam = _instance(rng, 10, 25, k=4)
    ref = solve_dantzig(DantzigProblem(A, y, lam))
    bland = solve_dantzig(DantzigProblem(A, y, lam), Tolerances(stall_limit=0))
    assert bland.objective == pytest.approx(ref.objective, abs=1e-9)


@pytest.mark.parametrize("m", [1, 4, 17, 64])
def test_orthonormal_matrix_gives_soft_threshold(m):
    rng = np.random.default_rng(m)
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    y = rng.standard_normal(m)
    lam = 0.5
    sol = solve_dantzig(DantzigProblem(Q, y, lam))
    c = Q.T @ y
    np.testing.assert_allclose(sol.zeta, np.sign(c) * np.maximum(np.abs(c) - lam, 0), atol=1e-6)


def test_identity_example():
    sol = solve_dantzig(DantzigProblem(np.eye(3), np.array([2.0, -0.5, 1.2]), 1.0))
    np.testing.assert_allclose(sol.zeta, [1.0, 0.0, 0.2], atol=1e-12)


def test_large_lambda_gives_zero():
    rng = np.random.default_rng(1)
    A, y, _ = _instance(rng, 6, 12)
    sol = solve_dantzig(DantzigProblem(A, y, np.max(np.abs(A.T @ y))))
    assert sol.ok and not sol.zeta.any() and sol.iterations == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 100.0))
def test_scaling_homogeneity(seed, scale):
    rng = np.random.default_rng(seed)
    A, y, lam = _instance(rng, 8, 20, k=3)
    base = solve_dantzig(DantzigProblem(A, y, lam))
    scaled = solve_dantzig(DantzigProblem(A, scale * y, scale * lam))
    assert scaled.objective == pytest.approx(scale * base.objective, rel=1e-7, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 15), extra=st.integers(0, 30))
def test_solution_is_always_feasible(seed, n, extra):
    rng = np.random.default_rng(seed)
    A, y, lam = _instance(rng, n, n + extra, k=n // 2 + 1)
    sol = solve_dantzig(DantzigProblem(A, y, lam))
    assert sol.ok
    assert _feasible(A, y, lam, sol.zeta)


def test_iteration_cap_reports_status():
    rng = np.random.default_rng(3)
    A, y, lam = _instance(rng, 20, 60, k=10)
    lam = 0.01 * lam
    sol = solve_dantzig(DantzigProblem(A, y, lam), Tolerances(max_iterations=2))
    assert sol.status == "iteration-limit"
    with pytest.raises(SolverError):
        gauss_dantzig(DantzigProblem(A, y, lam), 0.1, Tolerances(max_iterations=2))


def test_problem_validation():
    with pytest.raises(ValueError):
        DantzigProblem(np.eye(3), np.ones(3), -1.0)
    with pytest.raises(ValueError):
        DantzigProblem(np.eye(3), np.ones(4), 1.0)


def test_gauss_dantzig_recovers_noiseless_sparse_vector():
    rng = np.random.default_rng(4)
    A = generate_gaussian_matrix(40, 100, rng)
    x = np.zeros(100)
    x[[3, 40, 77]] = [1.5, -2.0, 0.8]
    xhat, support = gauss_dantzig(DantzigProblem(A, A @ x, 1e-3), 0.1)
    np.testing.assert_array_equal(support, [3, 40, 77])
    np.testing.assert_allclose(xhat, x, atol=1e-9)


def test_least_squares_zero_off_support():
    rng = np.random.default_rng(5)
    A = generate_gaussian_matrix(10, 20, rng)
    y = rng.standard_normal(10)
    x = least_squares_on_support(A, y, [2, 5, 9])
    assert set(np.flatnonzero(x)) <= {2, 5, 9}
    np.testing.assert_allclose(x[[2, 5, 9]], np.linalg.lstsq(A[:, [2, 5, 9]], y, rcond=None)[0])
    assert not least_squares_on_support(A, y, []).any()


def test_rank_repair_drops_smallest_priority():
    A = generate_gaussian_matrix(5, 8, 0)
    A[:, 4] = A[:, 1]  # duplicate column
    priority = np.arange(8, dtype=float)
    kept = repair_support(A, [1, 2, 4], priority)
    np.testing.assert_array_equal(kept, [2, 4])
    priority[4] = 0.5
    kept = repair_support(A, [1, 2, 4], priority, protected=[1])
    np.testing.assert_array_equal(kept, [1, 2])
    # greedy: the unprotected column 2 goes first, then 4 is still dependent
    priority[4] = 9.0
    np.testing.assert_array_equal(repair_support(A, [1, 2, 4], priority, protected=[1]), [1])
    # more columns than rows is never full rank
    assert repair_support(A, range(7), np.ones(8)).size <= 5


def test_least_squares_handles_rank_deficiency():
    A = generate_gaussian_matrix(5, 8, 0)
    A[:, 4] = A[:, 1]
    y = A[:, 1] * 2.0 + A[:, 2]
    x = least_squares_on_support(A, y, [1, 2, 4], priority=np.array([0, 5, 1, 0, 0.1, 0, 0, 0]))
    np.testing.assert_allclose(A @ x, y, atol=1e-10)
    assert x[4] == 0.0
