"""Stability calculators: Gaussian tail, detection delay, error-bound
recursions, and an empirical filter-settling time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .estimators import AlgorithmConfig, KfcsState, genie_kf_init, genie_kf_step, kf_predict_update
from .sensing import RipOracle, generate_gaussian_matrix


def q_function(z):
    """Gaussian upper tail ``P(N(0,1) > z)``."""
    out = 0.5 * erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def q_inverse(p: float) -> float:
    """Solve ``q_function(z) = p`` for ``p`` in (0, 1) by bracketed root finding."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p > 0.5:
        return -q_inverse(1.0 - p)
    if p == 0.5:
        return 0.0
    hi = 1.0
    while q_function(hi) > p:
        hi *= 2.0
    return brentq(lambda z: q_function(z) - p, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def default_c1(delta_2s: float, theta_s_2s: float) -> float:
    """Dantzig error constant ``16 / (1 - delta_2S - theta_S,2S)^2``."""
    slack = 1.0 - delta_2s - theta_s_2s
    if slack <= 0:
        raise ValueError(f"delta + theta = {delta_2s + theta_s_2s:.4f} must be below 1")
    return 16.0 / slack**2


def bstar(smax: int, lam: float, c1: float) -> float:
    """Squared-error bound ``C1 * Smax * lam^2`` for the CS step."""
    if c1 <= 0 or smax < 1 or lam < 0:
        raise ValueError("need c1 > 0, smax >= 1, lam >= 0")
    return c1 * smax * lam**2


def detection_delay(eps: float, s: int, bstar_value: float, sigma_sys2: float) -> int:
    """Steps after an addition by which all ``s`` new entries clear the
    detection level ``4 B*`` with probability at least ``1 - eps``."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if s < 1 or bstar_value < 0 or sigma_sys2 <= 0:
        raise ValueError("need s >= 1, bstar >= 0, sigma_sys2 > 0")
    z = q_inverse((1.0 - eps) ** (1.0 / s) / 2.0)
    return max(0, math.ceil(4.0 * bstar_value / (sigma_sys2 * z * z)) - 1)


def _recip(x: float) -> float:
    return math.inf if x <= 0 else 1.0 / x


def a_recursion(deltas, changed, r: float, reset_deltas=None) -> np.ndarray:
    """Upper bounds on ``||M_t^-1||`` for a sequence of steps.

    ``changed[t]`` says the support differs from the previous step, so the
    previous covariance was reset from ``A_T'A_T``; ``reset_deltas`` gives the
    isometry constant of that reset (defaults to ``deltas``).
    """
    deltas = np.asarray(deltas, dtype=float)
    reset = deltas if reset_deltas is None else np.asarray(reset_deltas, dtype=float)
    out = np.empty(deltas.size)
    prev = math.nan
    for t, (d, ch) in enumerate(zip(deltas, changed)):
        prior = _recip(1.0 - reset[t]) if (ch or t == 0) else prev
        out[t] = prev = _recip(1.0 - d + _recip(prior + r))
    return out


def b_recursion(deltas, changed, r: float, reset_deltas=None) -> np.ndarray:
    """Lower bounds ``b_t`` with ``||P_pred^-1|| sigma2 <= 1 / b_t``.

    Alongside runs ``c_t = 1 / (1 + delta_t + 1 / b_t)``, a lower bound on
    the smallest eigenvalue of ``M_t^-1``.
    """
    deltas = np.asarray(deltas, dtype=float)
    reset = deltas if reset_deltas is None else np.asarray(reset_deltas, dtype=float)
    out = np.empty(deltas.size)
    c_prev = math.nan
    for t, (d, ch) in enumerate(zip(deltas, changed)):
        floor = 1.0 / (1.0 + reset[t]) if (ch or t == 0) else c_prev
        out[t] = floor + r
        c_prev = 1.0 / (1.0 + d + 1.0 / out[t])
    return out


@dataclass
class BoundTrace:
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    T1: np.ndarray
    beta_T_bound: np.ndarray
    beta_T_measured: np.ndarray

    COLUMNS = ("t", "a", "b", "delta", "theta", "T1", "beta_T_bound", "beta_T_measured")

    def rows(self):
        return zip(*(getattr(self, c) for c in self.COLUMNS))


def bound_trace(
    x: np.ndarray,
    supports,
    est_supports,
    xhat: np.ndarray,
    x_init: np.ndarray,
    noise,
    A: np.ndarray,
    cfg: AlgorithmConfig,
    oracle: RipOracle | None = None,
    A0: np.ndarray | None = None,
    oracle0: RipOracle | None = None,
) -> BoundTrace:
    """Per-step bound on ``||(x_t - x_init,t)_T||`` from a recorded KF-CS run.

    ``x``, ``xhat`` and ``x_init`` are ``(horizon + 1, m)`` arrays;
    ``est_supports[t]`` is the support estimate after step ``t`` and
    ``noise[t]`` the measurement noise.  ``A0`` (measurement matrix at
    ``t = 0``) matters only for the covariance used at ``t = 1``.
    """
    oracle = oracle or RipOracle(A)
    if A0 is None or A0 is A:
        oracle0 = oracle
    else:
        oracle0 = oracle0 or RipOracle(A0)
    r = cfg.sigma_sys2 / cfg.sigma2
    H = x.shape[0] - 1
    ts = np.arange(1, H + 1)
    delta, reset_delta, theta, T1_num = (np.zeros(H) for _ in range(4))
    drift, measured = np.zeros(H), np.zeros(H)
    changed = np.zeros(H, dtype=bool)
    for k, t in enumerate(ts):
        T = np.asarray(est_supports[t - 1], dtype=np.intp)
        N = np.asarray(supports[t], dtype=np.intp)
        changed[k] = t == 1 or not np.array_equal(T, est_supports[t - 2])
        Delta = np.setdiff1d(N, T)
        Delta_e = np.setdiff1d(T, N)
        common = np.intersect1d(T, N)
        delta[k] = oracle.delta(T.size)
        reset_delta[k] = (oracle0 if t == 1 else oracle).delta(T.size)
        theta[k] = oracle.theta(T.size, Delta.size)
        nu = np.max(np.abs(x[t, common] - x[t - 1, common]), initial=0.0)
        T1_num[k] = (
            np.linalg.norm(x[t - 1, common] - xhat[t - 1, common])
            + np.linalg.norm(xhat[t - 1, Delta_e])
            + math.sqrt(common.size) * nu
        )
        drift[k] = theta[k] * np.linalg.norm(x[t, Delta]) + np.linalg.norm(A[:, T].T @ noise[t])
        measured[k] = np.linalg.norm(x[t, T] - x_init[t, T])
    a = a_recursion(delta, changed, r, reset_delta)
    b = b_recursion(delta, changed, r, reset_delta)
    T1 = T1_num / b
    return BoundTrace(ts, a, b, delta, theta, T1, a * (T1 + drift), measured)


@dataclass(frozen=True)
class SettlingScenario:
    """Constant true support with correct support estimates from ``t_star`` on.

    ``start`` selects how KF-CS enters at ``t_star``: ``"ls"`` is the reset
    KF-CS performs after its support settles (LS estimate and covariance),
    ``"genie"`` copies the genie filter's state.
    """

    m: int = 64
    n: int = 32
    support_size: int = 8
    sigma_sys2: float = 1.0
    sigma2: float = 0.0256
    t_star: int = 5
    horizon: int = 60
    start: str = "ls"

    def __post_init__(self):
        if self.start not in ("ls", "genie"):
            raise ValueError(f"unknown start {self.start!r}")
        if not 1 <= self.t_star < self.horizon:
            raise ValueError("need 1 <= t_star < horizon")
        if not 0 < self.support_size <= self.n <= self.m:
            raise ValueError("need 0 < support_size <= n <= m")


def settling_errors(scenario: SettlingScenario, trials: int, seed) -> np.ndarray:
    """``||x_kfcs - x_genie||^2`` per trial for ``t = t_star .. horizon``."""
    sc = scenario
    cfg = AlgorithmConfig(lam=0.0, alpha=0.0, alpha_del=0.0, sigma_sys2=sc.sigma_sys2, sigma2=sc.sigma2)
    out = np.zeros((trials, sc.horizon - sc.t_star + 1))
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        rng = np.random.default_rng(ss)
        A = generate_gaussian_matrix(sc.n, sc.m, rng)
        N = np.sort(rng.choice(sc.m, sc.support_size, replace=False))
        sd, noise_sd = math.sqrt(sc.sigma_sys2), math.sqrt(sc.sigma2)
        x = np.zeros(sc.m)
        x[N] = sd * rng.standard_normal(N.size)
        genie = genie_kf_init(A, A @ x + noise_sd * rng.standard_normal(sc.n), N, cfg)
        kf = None
        for t in range(1, sc.horizon + 1):
            x[N] += sd * rng.standard_normal(N.size)
            y = A @ x + noise_sd * rng.standard_normal(sc.n)
            genie, _ = genie_kf_step(genie, y, A, cfg, N)
            if t == sc.t_star:
                if sc.start == "genie":
                    kf = KfcsState(genie.xhat.copy(), genie.P.copy(), N, t)
                else:
                    AN = A[:, N]
                    xh = np.zeros(sc.m)
                    xh[N] = np.linalg.lstsq(AN, y, rcond=None)[0]
                    kf = KfcsState(xh, np.linalg.inv(AN.T @ AN) * sc.sigma2, N, t)
            elif kf is not None:
                xh, _, P, _, _ = kf_predict_update(kf, y, A, cfg)
                kf = KfcsState(xh, P, N, t)
            if kf is not None:
                out[i, t - sc.t_star] = np.sum((kf.xhat - genie.xhat) ** 2)
    return out


def estimate_tau_kf(scenario: SettlingScenario, eps: float, eps_err: float, trials: int, seed) -> int:
    """Smallest delay after ``t_star`` past which more than a ``1 - eps``
    fraction of trials keep ``||x_kfcs - x_genie||^2 <= eps_err``.

    Returns ``scenario.horizon`` when no delay within the horizon qualifies.
    """
    if not 0.0 < eps < 1.0 or eps_err <= 0 or trials < 1:
        raise ValueError("need 0 < eps < 1, eps_err > 0, trials >= 1")
    err = settling_errors(scenario, trials, seed)
    ok = err <= eps_err
    # stays[i, k]: trial i is within tolerance at every step from k onward
    stays = np.flip(np.logical_and.accumulate(np.flip(ok, axis=1), axis=1), axis=1)
    frac = stays.mean(axis=0)
    hits = np.flatnonzero(frac > 1.0 - eps)
    return int(hits[0]) if hits.size else scenario.horizon
