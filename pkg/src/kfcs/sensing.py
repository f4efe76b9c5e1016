"""Random sensing matrices and exhaustive restricted-isometry constants.

The isometry constant of order ``S`` is the smallest ``delta`` with

    (1 - delta) ||c||^2 <= ||A_T c||^2 <= (1 + delta) ||c||^2

for every column subset ``T`` of size at most ``S``.  The orthogonality
constant of orders ``(S, S')`` bounds ``|<A_T c, A_T' c'>|`` over disjoint
subsets.  Both are computed here by brute force, so they are only usable
for small ``m``; every routine enforces an enumeration budget.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

DEFAULT_BUDGET = 2_000_000
_CHUNK = 4096


class BudgetExceededError(RuntimeError):
    """Raised when an exhaustive search would visit too many subsets."""


@dataclass(frozen=True)
class RipReport:
    order: int
    delta: float
    subset_count: int


@dataclass(frozen=True)
class RocReport:
    order: int
    order2: int
    theta: float
    pair_count: int


def normalize_columns(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ValueError("matrix has a zero column")
    return A / norms


def generate_gaussian_matrix(n: int, m: int, seed: int | np.random.Generator | None) -> np.ndarray:
    """Draw an ``n x m`` matrix with i.i.d. N(0, 1) entries and unit-norm columns."""
    if n < 1 or m < 1:
        raise ValueError(f"matrix dimensions must be positive, got {n}x{m}")
    rng = np.random.default_rng(seed)
    return normalize_columns(rng.standard_normal((n, m)))


def _combination_chunks(m: int, k: int, exclude: tuple[int, ...] = ()) -> Iterator[np.ndarray]:
    pool = [i for i in range(m) if i not in set(exclude)]
    it = itertools.combinations(pool, k)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.asarray(block, dtype=np.intp)


def _check_budget(count: int, budget: int, what: str) -> None:
    if count > budget:
        raise BudgetExceededError(f"{what} needs {count} subsets, budget is {budget}")


def rip_constant(A: np.ndarray, S: int, budget: int = DEFAULT_BUDGET) -> RipReport:
    """Exhaustive isometry constant of order ``S`` (clamped at zero).

    Only subsets of size exactly ``S`` are visited; by eigenvalue interlacing
    the extreme eigenvalues of smaller Gram blocks are never more extreme.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    if not 1 <= S <= m:
        raise ValueError(f"order must be in [1, {m}], got {S}")
    count = math.comb(m, S)
    _check_budget(count, budget, f"order-{S} isometry constant")
    G = A.T @ A
    delta = 0.0
    for idx in _combination_chunks(m, S):
        blocks = G[idx[:, :, None], idx[:, None, :]]
        eig = np.linalg.eigvalsh(blocks)
        worst = max(float(np.max(eig[:, -1] - 1.0)), float(np.max(1.0 - eig[:, 0])))
        delta = max(delta, worst)
    return RipReport(order=S, delta=delta, subset_count=count)


def roc_constant(A: np.ndarray, S: int, Sp: int, budget: int = DEFAULT_BUDGET) -> RocReport:
    """Exhaustive orthogonality constant: max spectral norm of ``A_T' A_T2``
    over disjoint ``|T| = S``, ``|T2| = Sp``."""
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    if S < 1 or Sp < 1 or S + Sp > m:
        raise ValueError(f"orders ({S}, {Sp}) invalid for {m} columns")
    count = math.comb(m, S) * math.comb(m - S, Sp)
    _check_budget(count, budget, f"order-({S},{Sp}) orthogonality constant")
    G = A.T @ A
    theta = 0.0
    for first in itertools.combinations(range(m), S):
        rows = np.asarray(first, dtype=np.intp)
        for idx in _combination_chunks(m, Sp, exclude=first):
            blocks = G[rows[None, :, None], idx[:, None, :]]
            if S == 1 or Sp == 1:
                norms = np.linalg.norm(blocks.reshape(len(idx), -1), axis=1)
            else:
                norms = np.linalg.svd(blocks, compute_uv=False)[:, 0]
            theta = max(theta, float(np.max(norms)))
    return RocReport(order=S, order2=Sp, theta=theta, pair_count=count)


def critical_sparsities(A: np.ndarray, S_limit: int, budget: int = DEFAULT_BUDGET) -> tuple[int, int]:
    """Return ``(S_star, S_star_star)``.

    ``S_star`` is the largest ``S <= S_limit`` with isometry constant below 1/2.
    ``S_star_star`` is the largest ``S`` with ``2S <= S_limit`` and
    ``delta_2S + theta_{S,2S} < 1``.  When ``3S`` exceeds the column count the
    second orthogonality order is shrunk to ``m - S``, which is the same as
    taking the maximum over subsets of size at most ``2S``.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[1]
    S_limit = min(S_limit, m)
    if S_limit < 1:
        raise ValueError("S_limit must be positive")

    deltas: dict[int, float] = {}

    def delta(k: int) -> float:
        if k not in deltas:
            deltas[k] = rip_constant(A, k, budget).delta
        return deltas[k]

    s_star = 0
    for S in range(1, S_limit + 1):
        if delta(S) >= 0.5:
            break
        s_star = S

    s_star_star = 0
    for S in range(1, S_limit // 2 + 1):
        other = min(2 * S, m - S)
        theta = roc_constant(A, S, other, budget).theta if other >= 1 else 0.0
        if delta(2 * S) + theta >= 1.0:
            break
        s_star_star = S
    return s_star, s_star_star


class RipOracle:
    """Memoized isometry and orthogonality constants for one matrix."""

    def __init__(self, A: np.ndarray, budget: int = DEFAULT_BUDGET):
        self.A = np.asarray(A, dtype=float)
        self.budget = budget
        self._delta: dict[int, float] = {}
        self._theta: dict[tuple[int, int], float] = {}

    def delta(self, S: int) -> float:
        if S <= 0:
            return 0.0
        if S not in self._delta:
            self._delta[S] = rip_constant(self.A, S, self.budget).delta
        return self._delta[S]

    def theta(self, S: int, Sp: int) -> float:
        m = self.A.shape[1]
        Sp = min(Sp, m - S)
        if S <= 0 or Sp <= 0:
            return 0.0
        key = (S, Sp)
        if key not in self._theta:
            self._theta[key] = roc_constant(self.A, S, Sp, self.budget).theta
        return self._theta[key]
