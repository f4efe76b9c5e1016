import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfcs.sensing import (
    BudgetExceededError,
    RipOracle,
    critical_sparsities,
    generate_gaussian_matrix,
    rip_constant,
    roc_constant,
)
from oracles import rip_by_svd, roc_by_svd


def test_columns_have_unit_norm():
    A = generate_gaussian_matrix(72, 256, 3)
    assert A.shape == (72, 256)
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1.0, atol=1e-10)


def test_matrix_is_reproducible_from_seed():
    np.testing.assert_array_equal(generate_gaussian_matrix(5, 9, 11), generate_gaussian_matrix(5, 9, 11))
    assert not np.array_equal(generate_gaussian_matrix(5, 9, 11), generate_gaussian_matrix(5, 9, 12))


@pytest.mark.parametrize("n,m", [(0, 4), (3, 0)])
def test_bad_dimensions_rejected(n, m):
    with pytest.raises(ValueError):
        generate_gaussian_matrix(n, m, 0)


def test_order_one_constant_is_zero_for_unit_columns():
    A = generate_gaussian_matrix(6, 10, 0)
    assert rip_constant(A, 1).delta == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("n,m,S", [(6, 12, 2), (6, 12, 3), (8, 14, 4), (5, 9, 5)])
def test_rip_matches_singular_value_search(seed, n, m, S):
    A = generate_gaussian_matrix(n, m, seed)
    rep = rip_constant(A, S)
    assert rep.delta == pytest.approx(rip_by_svd(A, S), abs=1e-10)
    assert rep.subset_count == len(list(__import__("itertools").combinations(range(m), S)))


@pytest.mark.parametrize("seed", range(3))
def test_roc_matches_singular_value_search(seed):
    A = generate_gaussian_matrix(6, 10, seed)
    for S, Sp in [(1, 1), (1, 3), (2, 2), (2, 4), (3, 3)]:
        assert roc_constant(A, S, Sp).theta == pytest.approx(roc_by_svd(A, S, Sp), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 8), extra=st.integers(1, 6))
def test_rip_is_monotone_in_order(seed, n, extra):
    A = generate_gaussian_matrix(n, n + extra, seed)
    deltas = [rip_constant(A, S).delta for S in range(1, min(5, n + extra) + 1)]
    assert all(a <= b + 1e-12 for a, b in zip(deltas, deltas[1:]))


def test_orthonormal_matrix_has_zero_constants():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))
    assert rip_constant(Q, 3).delta == pytest.approx(0.0, abs=1e-12)
    assert roc_constant(Q, 2, 3).theta == pytest.approx(0.0, abs=1e-12)
    assert critical_sparsities(Q, 6) == (6, 3)


def test_critical_sparsities_follow_their_definitions():
    A = generate_gaussian_matrix(10, 14, 2)
    s1, s2 = critical_sparsities(A, 6)
    deltas = {S: rip_by_svd(A, S) for S in range(1, 7)}
    assert all(deltas[S] < 0.5 for S in range(1, s1 + 1))
    assert s1 == 6 or deltas[s1 + 1] >= 0.5
    ok = lambda S: deltas[2 * S] + roc_by_svd(A, S, min(2 * S, 14 - S)) < 1
    assert all(ok(S) for S in range(1, s2 + 1))
    assert s2 == 3 or not ok(s2 + 1)


def test_budget_is_enforced():
    A = generate_gaussian_matrix(4, 30, 0)
    with pytest.raises(BudgetExceededError):
        rip_constant(A, 10, budget=1000)
    with pytest.raises(BudgetExceededError):
        roc_constant(A, 3, 3, budget=1000)


def test_invalid_orders_rejected():
    A = generate_gaussian_matrix(4, 6, 0)
    with pytest.raises(ValueError):
        rip_constant(A, 7)
    with pytest.raises(ValueError):
        roc_constant(A, 4, 3)


def test_oracle_caches_and_clips_second_order():
    A = generate_gaussian_matrix(5, 8, 1)
    orc = RipOracle(A)
    assert orc.delta(0) == 0.0 and orc.theta(3, 0) == 0.0
    assert orc.delta(3) == rip_constant(A, 3).delta
    assert orc.theta(3, 9) == roc_constant(A, 3, 5).theta
