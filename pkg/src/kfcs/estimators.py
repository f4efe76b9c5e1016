"""Recursive sparse estimators: KF-CS, LS-CS, the genie-aided references and
per-step simple CS.

KF-CS keeps a Kalman filter running on the current support estimate only.
Each step it

1. predicts and updates the filter on the support (``x_init``),
2. runs the Dantzig selector on the filter residual and adds the result back
   (``x_csres``),
3. adds off-support indices whose ``x_csres`` clears ``alpha`` and refits by
   least squares, then drops refitted entries below ``alpha_del``,
4. if the support changed, replaces the estimate with least squares on the
   new support and resets the covariance to ``(A_T' A_T)^-1 sigma2``.

LS-CS is the same loop with plain least squares on the support in place of
the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dantzig import (
    COND_LIMIT,
    DantzigProblem,
    SolverError,
    Tolerances,
    condition_number,
    gauss_dantzig,
    repair_support,
    solve_dantzig,
)

EMPTY = np.zeros(0, dtype=np.intp)


class IllConditionedError(RuntimeError):
    """A matrix that must be inverted has condition number above the limit."""


@dataclass(frozen=True)
class AlgorithmConfig:
    lam: float
    alpha: float
    alpha_del: float
    sigma_sys2: float
    sigma2: float
    gamma: float = 1.0
    n0: int | None = None
    max_additions: int | None = None  # overrides the gamma-based cap when set
    sigma_init2: float | None = None  # genie prior variance at t = 0

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0 or self.alpha_del < 0:
            raise ValueError("lam, alpha and alpha_del must be nonnegative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.sigma_sys2 < 0:
            raise ValueError("sigma_sys2 must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def addition_cap(self, n: int, m: int) -> int:
        if self.max_additions is not None:
            return self.max_additions
        return int(math.floor(self.gamma * n / math.log2(m)))


@dataclass
class KfcsState:
    """Estimate and covariance, the latter stored as the support block only.

    ``P`` is ``None`` for estimators that carry no covariance (LS-CS).
    """

    xhat: np.ndarray
    P: np.ndarray | None
    support: np.ndarray
    t: int = 0

    def full_covariance(self) -> np.ndarray:
        m = self.xhat.size
        out = np.zeros((m, m))
        if self.P is not None and self.support.size:
            out[np.ix_(self.support, self.support)] = self.P
        return out


@dataclass
class StepOutput:
    xhat: np.ndarray
    x_csres: np.ndarray | None = None
    x_init: np.ndarray | None = None
    residual: np.ndarray | None = None
    detected: np.ndarray = field(default_factory=lambda: EMPTY)
    deleted: np.ndarray = field(default_factory=lambda: EMPTY)
    support: np.ndarray = field(default_factory=lambda: EMPTY)


def _ls(A: np.ndarray, y: np.ndarray, T: np.ndarray) -> np.ndarray:
    x = np.zeros(A.shape[1])
    if T.size:
        x[T] = np.linalg.lstsq(A[:, T], y, rcond=None)[0]
    return x


def _reset_covariance(A: np.ndarray, T: np.ndarray, sigma2: float) -> np.ndarray:
    if T.size == 0:
        return np.zeros((0, 0))
    AT = A[:, T]
    M = AT.T @ AT
    if condition_number(M) > COND_LIMIT:
        raise IllConditionedError(f"A_T'A_T is singular to working precision for |T|={T.size}")
    P = np.linalg.inv(M) * sigma2
    return 0.5 * (P + P.T)


def _kf_update(x_T, P_pred, y, A_T, sigma2):
    """Measurement update; Joseph form keeps the covariance symmetric PSD.

    Returns ``(x_new, P_new, K)``.
    """
    n = A_T.shape[0]
    S = A_T @ P_pred @ A_T.T + sigma2 * np.eye(n)
    if condition_number(S) > COND_LIMIT:
        raise IllConditionedError("innovation covariance is singular to working precision")
    try:
        factor = cho_factor(S)
    except LinAlgError as exc:
        raise IllConditionedError("innovation covariance is not positive definite") from exc
    K = cho_solve(factor, A_T @ P_pred).T
    x_new = x_T + K @ (y - A_T @ x_T)
    IKA = np.eye(P_pred.shape[0]) - K @ A_T
    P_new = IKA @ P_pred @ IKA.T + sigma2 * (K @ K.T)
    return x_new, 0.5 * (P_new + P_new.T), K


class KfUpdate(NamedTuple):
    """Filter quantities for one step; matrices are support blocks, ``K`` is ``|T| x n``."""

    x_init: np.ndarray
    P_pred: np.ndarray
    P_upd: np.ndarray
    K: np.ndarray
    residual: np.ndarray


def kf_predict_update(state: KfcsState, y: np.ndarray, A: np.ndarray, cfg: AlgorithmConfig) -> KfUpdate:
    """Random-walk prediction and Kalman update restricted to ``state.support``."""
    T = state.support
    x_init = np.zeros_like(state.xhat)
    if T.size == 0:
        empty = np.zeros((0, 0))
        return KfUpdate(x_init, empty, empty, np.zeros((0, A.shape[0])), y.copy())
    P_pred = state.P + cfg.sigma_sys2 * np.eye(T.size)
    x_init[T], P, K = _kf_update(state.xhat[T], P_pred, y, A[:, T], cfg.sigma2)
    return KfUpdate(x_init, P_pred, P, K, y - A @ x_init)


def _select_additions(x_csres: np.ndarray, T: np.ndarray, alpha: float, cap: int) -> np.ndarray:
    mask = np.abs(x_csres) > alpha
    mask[T] = False
    cand = np.flatnonzero(mask)
    if cand.size > cap:
        order = np.lexsort((cand, -np.abs(x_csres[cand])))
        cand = np.sort(cand[order[: max(cap, 0)]])
    return cand


def _cs_detect_delete(T, x_init, y, A, cfg, gram, tol):
    """Steps 2 and 3 shared by KF-CS and LS-CS."""
    residual = y - A @ x_init
    sol = solve_dantzig(DantzigProblem(A, residual, cfg.lam), tol, gram)
    if not sol.ok:
        raise SolverError(f"Dantzig LP ended with status {sol.status!r}")
    x_csres = x_init + sol.zeta
    cand = _select_additions(x_csres, T, cfg.alpha, cfg.addition_cap(*A.shape))
    if cand.size:
        T_det = repair_support(A, np.union1d(T, cand), x_csres, protected=T)
        x_det = _ls(A, y, T_det)
    else:
        T_det, x_det = T, x_init
    keep = np.abs(x_det[T_det]) >= cfg.alpha_del
    N_hat = T_det[keep]
    detected = np.setdiff1d(T_det, T)
    deleted = T_det[~keep]
    return residual, x_csres, N_hat, detected, deleted


def kfcs_init(
    A0: np.ndarray,
    y0: np.ndarray,
    cfg: AlgorithmConfig,
    tol: Tolerances | None = None,
    gram: np.ndarray | None = None,
) -> KfcsState:
    """Gauss-Dantzig on the initial measurement, then the LS covariance."""
    xhat, support = gauss_dantzig(DantzigProblem(A0, y0, cfg.lam), cfg.alpha, tol, gram)
    return KfcsState(xhat, _reset_covariance(A0, support, cfg.sigma2), support, 0)


def lscs_init(A0, y0, cfg: AlgorithmConfig, tol=None, gram=None) -> KfcsState:
    xhat, support = gauss_dantzig(DantzigProblem(A0, y0, cfg.lam), cfg.alpha, tol, gram)
    return KfcsState(xhat, None, support, 0)


def kfcs_step(
    state: KfcsState,
    y: np.ndarray,
    A: np.ndarray,
    cfg: AlgorithmConfig,
    tol: Tolerances | None = None,
    gram: np.ndarray | None = None,
) -> tuple[KfcsState, StepOutput]:
    T = state.support
    x_init, _, P, _, _ = kf_predict_update(state, y, A, cfg)
    residual, x_csres, N_hat, detected, deleted = _cs_detect_delete(T, x_init, y, A, cfg, gram, tol)
    if np.array_equal(N_hat, T):
        xhat = x_init
    else:
        xhat = _ls(A, y, N_hat)
        P = _reset_covariance(A, N_hat, cfg.sigma2)
    out = StepOutput(xhat, x_csres, x_init, residual, detected, deleted, N_hat)
    return KfcsState(xhat, P, N_hat, state.t + 1), out


def lscs_step(
    state: KfcsState,
    y: np.ndarray,
    A: np.ndarray,
    cfg: AlgorithmConfig,
    tol: Tolerances | None = None,
    gram: np.ndarray | None = None,
) -> tuple[KfcsState, StepOutput]:
    T = state.support
    x_init = _ls(A, y, T)
    residual, x_csres, N_hat, detected, deleted = _cs_detect_delete(T, x_init, y, A, cfg, gram, tol)
    xhat = x_init if np.array_equal(N_hat, T) else _ls(A, y, N_hat)
    out = StepOutput(xhat, x_csres, x_init, residual, detected, deleted, N_hat)
    return KfcsState(xhat, None, N_hat, state.t + 1), out


def genie_kf_init(A0, y0, support, cfg: AlgorithmConfig) -> KfcsState:
    """Kalman update of a zero-mean prior on the known initial support."""
    T = np.sort(np.asarray(support, dtype=np.intp))
    prior = cfg.sigma_init2 if cfg.sigma_init2 is not None else cfg.sigma_sys2
    xhat = np.zeros(A0.shape[1])
    xhat[T], P, _ = _kf_update(np.zeros(T.size), prior * np.eye(T.size), y0, A0[:, T], cfg.sigma2)
    return KfcsState(xhat, P, T, 0)


def genie_kf_step(state: KfcsState, y, A, cfg: AlgorithmConfig, support) -> tuple[KfcsState, StepOutput]:
    """Kalman filter on the true support.

    Entries that join start at zero with no prior covariance, so after
    prediction their variance is exactly ``sigma_sys2``.
    """
    N = np.sort(np.asarray(support, dtype=np.intp))
    old = state.support
    _, pos_old, pos_new = np.intersect1d(old, N, assume_unique=True, return_indices=True)
    P = np.zeros((N.size, N.size))
    P[np.ix_(pos_new, pos_new)] = state.P[np.ix_(pos_old, pos_old)]
    x = np.zeros_like(state.xhat)
    x[N[pos_new]] = state.xhat[N[pos_new]]
    x_init, _, P, _, _ = kf_predict_update(KfcsState(x, P, N, state.t), y, A, cfg)
    return KfcsState(x_init, P, N, state.t + 1), StepOutput(x_init, x_init=x_init, support=N)


def genie_ls_step(y, A, support) -> StepOutput:
    N = np.sort(np.asarray(support, dtype=np.intp))
    return StepOutput(_ls(A, y, N), support=N)


def simple_cs_step(y, A, cfg: AlgorithmConfig, tol=None, gram=None) -> StepOutput:
    """Gauss-Dantzig on the current measurement alone."""
    xhat, support = gauss_dantzig(DantzigProblem(A, y, cfg.lam), cfg.alpha, tol, gram)
    return StepOutput(xhat, support=support)
