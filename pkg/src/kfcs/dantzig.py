"""Dantzig selector as a linear program, and Gauss-Dantzig refinement.

The selector solves

    minimize ||zeta||_1  subject to  ||A'(y - A zeta)||_inf <= lam.

Writing ``zeta = u - v`` with ``u, v >= 0``, ``G = A'A`` and ``c = A'y``
turns this into a standard-form LP with ``2m`` variables and ``2m``
inequality rows::

     G u - G v <= c + lam
    -G u + G v <= lam - c

Costs are all ones, so the all-slack basis is dual feasible from the start
and a dual simplex method needs no phase one.  It begins at ``zeta = 0``
and usually finishes in about one pivot per nonzero of the answer, which
is what makes the per-time-step solves in the filters cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

COND_LIMIT = 1e12


class SolverError(RuntimeError):
    """The LP did not reach an optimal basis."""


@dataclass(frozen=True)
class DantzigProblem:
    A: np.ndarray
    y: np.ndarray
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.A.shape[0] != np.shape(self.y)[0]:
            raise ValueError("A and y disagree on the number of measurements")


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    optimality: float = 1e-8
    pivot: float = 1e-10
    max_iterations: int | None = None  # default 50 * number of LP variables
    stall_limit: int = 50


@dataclass
class LpSolution:
    zeta: np.ndarray
    objective: float
    status: str  # "optimal", "infeasible" or "iteration-limit"
    iterations: int = 0
    basis: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    """Condensed tableau ``x_B = beta - alpha x_N`` with the objective row last.

    Column ``k`` of ``M`` (``k < ncols``) holds ``alpha[:, k]`` and the final
    column holds ``beta``; the last row stores ``-d`` and the objective value.
    Variables ``0..2m-1`` are ``u`` then ``v``; ``2m..4m-1`` are the slacks.
    """

    def __init__(self, T: np.ndarray, b: np.ndarray, cost: np.ndarray):
        self.T = T
        self.b = b
        self.cost = cost
        rows, ncols = T.shape
        self.basic = np.arange(ncols, ncols + rows)
        self.nonbasic = np.arange(ncols)
        M = np.empty((rows + 1, ncols + 1))
        M[:rows, :ncols] = T
        M[:rows, ncols] = b
        M[rows, :ncols] = -cost
        M[rows, ncols] = 0.0
        self.M = M

    @property
    def beta(self) -> np.ndarray:
        return self.M[:-1, -1]

    @property
    def reduced_costs(self) -> np.ndarray:
        return -self.M[-1, :-1]

    @property
    def objective(self) -> float:
        return float(self.M[-1, -1])

    def pivot(self, r: int, s: int) -> None:
        M = self.M
        p = M[r, s]
        col = M[:, s].copy()
        row = M[r, :] / p
        M -= np.outer(col, row)
        M[r, :] = row
        M[:, s] = -col / p
        M[r, s] = 1.0 / p
        self.basic[r], self.nonbasic[s] = self.nonbasic[s], self.basic[r]

    def refactor(self) -> None:
        """Rebuild the tableau from the original data for the current basis."""
        rows, ncols = self.T.shape
        full = np.hstack([self.T, np.eye(rows)])
        B = full[:, self.basic]
        N = full[:, self.nonbasic]
        sol = np.linalg.solve(B, np.column_stack([N, self.b]))
        alpha, beta = sol[:, :-1], sol[:, -1]
        full_cost = np.concatenate([self.cost, np.zeros(rows)])
        cB = full_cost[self.basic]
        d = full_cost[self.nonbasic] - alpha.T @ cB
        self.M[:rows, :ncols] = alpha
        self.M[:rows, ncols] = beta
        self.M[rows, :ncols] = -d
        self.M[rows, ncols] = float(cB @ beta)


def _dual_simplex(tab: _Tableau, tol: Tolerances, max_iter: int) -> tuple[str, int]:
    it = 0
    bland = False
    stall = 0
    last_obj = tab.objective
    while True:
        beta = tab.beta
        infeasible = np.flatnonzero(beta < -tol.feasibility)
        if infeasible.size == 0:
            return "optimal", it
        if it >= max_iter:
            return "iteration-limit", it
        if bland:
            r = int(infeasible[np.argmin(tab.basic[infeasible])])
        else:
            r = int(infeasible[np.argmin(beta[infeasible])])
        row = tab.M[r, :-1]
        cand = np.flatnonzero(row < -tol.pivot)
        if cand.size == 0:
            return "infeasible", it
        d = np.maximum(tab.reduced_costs[cand], 0.0)
        step = -row[cand]
        ratios = d / step
        if bland:
            best = ratios.min()
            ties = cand[ratios <= best + tol.optimality]
            s = int(ties[np.argmin(tab.nonbasic[ties])])
        else:
            # Harris two-pass: allow a small dual infeasibility, then take the
            # largest pivot among the near-minimal ratios.
            bound = ((d + tol.optimality) / step).min()
            ok = ratios <= bound
            s = int(cand[ok][np.argmax(step[ok])])
        tab.pivot(r, s)
        it += 1
        obj = tab.objective
        if obj > last_obj + 1e-14 * max(1.0, abs(obj)):
            stall = 0
            last_obj = obj
        else:
            stall += 1
            if stall >= tol.stall_limit:
                bland = True


class _RevisedState:
    """Basis of the Dantzig LP described by its small structural block.

    ``cols`` lists the basic structural variables (``u_j`` is ``j``, ``v_j``
    is ``m + j``) and ``rows`` the constraint rows whose slacks are nonbasic.
    The two lists have equal length ``k <= rank(G)``, and the basis matrix is
    block triangular with ``T[rows, cols]`` as its only nontrivial block, so
    every quantity is recomputed from scratch in ``O(k^3 + m k)``.
    """

    def __init__(self, G: np.ndarray, c: np.ndarray, lam: float):
        self.G = G
        self.m = G.shape[0]
        self.b = np.concatenate([c + lam, lam - c])
        self.cols: list[int] = []
        self.rows: list[int] = []

    def _signed(self, idx) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx, dtype=np.intp)
        return idx % self.m, np.where(idx < self.m, 1.0, -1.0)

    def _T_times(self, weights_by_var: np.ndarray) -> np.ndarray:
        """``T @ x`` for structural ``x``, returned for all ``2m`` rows."""
        m = self.m
        z = weights_by_var[:m] - weights_by_var[m:]
        nz = np.flatnonzero(z)
        g = self.G[:, nz] @ z[nz] if nz.size else np.zeros(m)
        return np.concatenate([g, -g])

    def evaluate(self):
        m, k = self.m, len(self.cols)
        x = np.zeros(2 * m)
        y = np.zeros(2 * m)
        lu = None
        if k:
            ci, cs = self._signed(self.cols)
            ri, rs = self._signed(self.rows)
            Bk = rs[:, None] * cs[None, :] * self.G[np.ix_(ri, ci)]
            lu = lu_factor(Bk, check_finite=False)
            x[self.cols] = lu_solve(lu, self.b[self.rows], check_finite=False)
            y[self.rows] = lu_solve(lu, np.ones(k), trans=1, check_finite=False)
        slack = self.b - self._T_times(x)
        d_struct = 1.0 - self._T_times(y)[: 2 * m] if k else np.ones(2 * m)
        # T is symmetric, so the same product gives T' y
        return x, slack, y, d_struct, lu

    def tableau_row(self, leaving: int, lu) -> np.ndarray:
        """Row ``e_r' B^-1 [T I]`` for the basic variable ``leaving``."""
        m = self.m
        rho = np.zeros(2 * m)
        if leaving < 2 * m:
            p = self.cols.index(leaving)
            e = np.zeros(len(self.cols))
            e[p] = 1.0
            rho[self.rows] = lu_solve(lu, e, trans=1, check_finite=False)
        else:
            i = leaving - 2 * m
            if self.cols:
                ci, cs = self._signed(self.cols)
                ii, isg = self._signed([i])
                t_row = isg[0] * cs * self.G[ii[0], ci]
                rho[self.rows] = -lu_solve(lu, t_row, trans=1, check_finite=False)
            rho[i] = 1.0
        return np.concatenate([self._T_times(rho), rho])


def _revised_dual_simplex(st: _RevisedState, tol: Tolerances, max_iter: int):
    m2 = 2 * st.m
    bland = False
    stall = 0
    last_obj = -np.inf
    it = 0
    while True:
        x, slack, y, d_struct, lu = st.evaluate()
        basic_vals = np.concatenate([x, slack])
        basic_mask = np.zeros(2 * m2, dtype=bool)
        basic_mask[st.cols] = True
        basic_mask[m2:] = True
        basic_mask[[m2 + r for r in st.rows]] = False
        vals = np.where(basic_mask, basic_vals, 0.0)
        infeasible = np.flatnonzero(basic_mask & (vals < -tol.feasibility))
        if infeasible.size == 0:
            return "optimal", it, x
        if it >= max_iter:
            return "iteration-limit", it, x
        leave = int(infeasible[0] if bland else infeasible[np.argmin(vals[infeasible])])
        alpha = st.tableau_row(leave, lu)
        d = np.concatenate([d_struct, -y])
        cand = np.flatnonzero(~basic_mask & (alpha < -tol.pivot))
        if cand.size == 0:
            return "infeasible", it, x
        dc = np.maximum(d[cand], 0.0)
        step = -alpha[cand]
        ratios = dc / step
        if bland:
            ties = cand[ratios <= ratios.min() + tol.optimality]
            enter = int(ties[0])
        else:
            bound = ((dc + tol.optimality) / step).min()
            ok = ratios <= bound
            enter = int(cand[ok][np.argmax(step[ok])])

        if leave < m2:
            p = st.cols.index(leave)
            if enter < m2:
                st.cols[p] = enter
            else:
                q = st.rows.index(enter - m2)
                del st.cols[p], st.rows[q]
        else:
            if enter < m2:
                st.cols.append(enter)
                st.rows.append(leave - m2)
            else:
                st.rows[st.rows.index(enter - m2)] = leave - m2
        it += 1
        obj = float(np.sum(x))
        if obj > last_obj + 1e-13 * max(1.0, abs(obj)):
            stall, last_obj = 0, obj
        else:
            stall += 1
            bland = bland or stall >= tol.stall_limit


def solve_dantzig(
    problem: DantzigProblem,
    tol: Tolerances | None = None,
    gram: np.ndarray | None = None,
    method: str = "revised",
) -> LpSolution:
    """Solve the Dantzig selector LP exactly (to tolerance) by dual simplex.

    ``gram`` may carry a precomputed ``A'A`` when the same matrix is reused.
    ``method="tableau"`` runs the same pivoting rules on a dense tableau,
    which is slower and kept as an independent implementation.  The
    returned status is ``"optimal"``, ``"infeasible"`` (numerical breakdown,
    since the LP itself is always feasible) or ``"iteration-limit"``.
    """
    tol = tol or Tolerances()
    A = np.asarray(problem.A, dtype=float)
    y = np.asarray(problem.y, dtype=float)
    lam = float(problem.lam)
    m = A.shape[1]
    G = A.T @ A if gram is None else gram
    c = A.T @ y
    max_iter = tol.max_iterations or 50 * 2 * m

    if np.max(np.abs(c), initial=0.0) <= lam:
        return LpSolution(np.zeros(m), 0.0, "optimal", 0, np.arange(2 * m, 4 * m))

    if method == "revised":
        st = _RevisedState(G, c, lam)
        status, iters, x = _revised_dual_simplex(st, tol, max_iter)
        basis = np.array(st.cols + [2 * m + i for i in range(2 * m) if i not in set(st.rows)])
    elif method == "tableau":
        status, iters, x, basis = _solve_tableau(G, c, lam, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    zeta = x[:m] - x[m : 2 * m]
    if status == "optimal":
        zeta[np.abs(zeta) < 1e-15] = 0.0
    return LpSolution(zeta, float(np.abs(zeta).sum()), status, iters, basis)


def _solve_tableau(G, c, lam, tol, max_iter):
    m = G.shape[0]
    T = np.block([[G, -G], [-G, G]])
    b = np.concatenate([c + lam, lam - c])
    tab = _Tableau(T, b, np.ones(2 * m))
    status, iters = _dual_simplex(tab, tol, max_iter)
    # Recompute from the original data to shed accumulated pivot error; a
    # couple of extra rounds are allowed if that exposes an infeasibility.
    for _ in range(3):
        if status != "optimal":
            break
        tab.refactor()
        if np.all(tab.beta >= -tol.feasibility):
            break
        status, more = _dual_simplex(tab, tol, max_iter - iters)
        iters += more
    x = np.zeros(4 * m)
    x[tab.basic] = tab.beta
    return status, iters, x[: 2 * m], tab.basic.copy()


def condition_number(B: np.ndarray) -> float:
    if B.size == 0:
        return 1.0
    sv = np.linalg.svd(B, compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def repair_support(
    A: np.ndarray,
    support,
    priority: np.ndarray,
    protected=(),
    cond_limit: float = COND_LIMIT,
) -> np.ndarray:
    """Drop entries of ``support`` until ``A[:, support]`` has full column rank.

    Entries are removed smallest ``|priority|`` first; indices listed in
    ``protected`` go only after every unprotected one is gone.  A matrix
    counts as rank deficient once its condition number exceeds
    ``cond_limit``.
    """
    T = np.sort(np.asarray(support, dtype=np.intp))
    if T.size == 0:
        return T
    prot = np.isin(T, np.asarray(protected, dtype=np.intp))
    order_key = np.abs(np.asarray(priority, dtype=float)[T])
    keep = np.ones(T.size, dtype=bool)
    # removal order: unprotected by ascending magnitude, then protected
    removal = np.lexsort((T, order_key, prot))
    k = 0
    while keep.any() and (keep.sum() > A.shape[0] or condition_number(A[:, T[keep]]) > cond_limit):
        keep[removal[k]] = False
        k += 1
    return T[keep]


def least_squares_on_support(
    A: np.ndarray,
    y: np.ndarray,
    support,
    priority: np.ndarray | None = None,
) -> np.ndarray:
    """Least squares restricted to ``support``, zero elsewhere.

    If the selected columns are rank deficient, the smallest-``|priority|``
    indices are dropped first (by default the minimum-norm LS values).
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    m = A.shape[1]
    T = np.sort(np.asarray(support, dtype=np.intp))
    x = np.zeros(m)
    if T.size == 0:
        return x
    if priority is None:
        priority = np.zeros(m)
        priority[T] = np.linalg.lstsq(A[:, T], y, rcond=None)[0]
    T = repair_support(A, T, priority)
    if T.size:
        x[T] = np.linalg.lstsq(A[:, T], y, rcond=None)[0]
    return x


def gauss_dantzig(
    problem: DantzigProblem,
    support_threshold: float,
    tol: Tolerances | None = None,
    gram: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dantzig selector, threshold ``|zeta| > support_threshold``, then LS.

    Returns the LS estimate and its (rank-repaired) support.
    """
    sol = solve_dantzig(problem, tol, gram)
    if not sol.ok:
        raise SolverError(f"Dantzig LP ended with status {sol.status!r}")
    support = np.flatnonzero(np.abs(sol.zeta) > support_threshold)
    support = repair_support(problem.A, support, sol.zeta)
    xhat = np.zeros(problem.A.shape[1])
    if support.size:
        xhat[support] = np.linalg.lstsq(problem.A[:, support], problem.y, rcond=None)[0]
    return xhat, support
