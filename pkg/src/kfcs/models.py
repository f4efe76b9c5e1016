"""Time-varying sparse signal generators and the measurement model.

Three families are provided:

* ``simulate_random_walk``: support additions every ``d`` steps, optional
  removals of the smallest coefficients, Gaussian random walk on the support.
* ``simulate_no_removals``: the same walk with additions only, until the
  support reaches ``Smax``.
* ``simulate_bounded_power``: coefficients ramp up linearly to a plateau,
  hold, then ramp down to zero before removal, keeping signal power bounded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RandomWalkParams:
    m: int
    S0: int
    Sa: int
    Sr: int
    d: int
    Smax: int
    sigma_sys0: float
    sigma_sys: float
    horizon: int

    def __post_init__(self):
        if not 0 < self.S0 <= self.Smax <= self.m:
            raise ValueError(f"need 0 < S0 <= Smax <= m, got S0={self.S0} Smax={self.Smax} m={self.m}")
        if self.Sa < 0 or self.Sr < 0 or self.Sr > self.S0:
            raise ValueError(f"invalid Sa={self.Sa} / Sr={self.Sr}")
        if self.d < 2:
            raise ValueError(f"d must be at least 2, got {self.d}")
        if self.sigma_sys0 < 0 or self.sigma_sys < 0:
            raise ValueError("variances must be nonnegative")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")


@dataclass(frozen=True)
class BoundedPowerParams:
    m: int
    S0: int
    Sa: int
    ramp: float  # per-step magnitude change while growing
    plateau: float
    d: int
    r: int  # steps from the start of the decrease to removal
    horizon: int
    first_addition: int = 2

    def __post_init__(self):
        if self.S0 <= 0 or self.Sa < 0 or self.S0 + self.Sa > self.m:
            raise ValueError(f"invalid support sizes S0={self.S0} Sa={self.Sa} for m={self.m}")
        if self.ramp <= 0 or self.plateau <= 0:
            raise ValueError("ramp and plateau must be positive")
        if not 1 <= self.r < self.d:
            raise ValueError(f"need 1 <= r < d, got r={self.r} d={self.d}")
        if self.first_addition < 1:
            raise ValueError("first_addition must be at least 1")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str  # "gaussian" (scale = std dev) or "uniform" (scale = half width)
    scale: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    def variance(self) -> float:
        return self.scale**2 if self.kind == "gaussian" else self.scale**2 / 3.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal(n)
        return rng.uniform(-self.scale, self.scale, n)


@dataclass
class SparseTrajectory:
    x: np.ndarray  # (horizon + 1, m)
    supports: list[np.ndarray]
    addition_times: list[int] = field(default_factory=list)
    removal_times: list[int] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    @property
    def m(self) -> int:
        return self.x.shape[1]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _draw_new(rng, m: int, support: np.ndarray, k: int) -> np.ndarray:
    complement = np.setdiff1d(np.arange(m), support)
    return np.sort(rng.choice(complement, size=k, replace=False))


def simulate_random_walk(params: RandomWalkParams, seed) -> SparseTrajectory:
    """Random walk on a support that gains ``Sa`` entries at ``t = 1 + j d``.

    At ``t = (j + 1) d`` the ``Sr`` smallest-magnitude entries leave.  An
    addition is skipped once it would push the support past ``Smax``.
    """
    p = params
    rng = _rng(seed)
    x = np.zeros((p.horizon + 1, p.m))
    support = np.sort(rng.choice(p.m, size=p.S0, replace=False))
    x[0, support] = p.sigma_sys0 * rng.standard_normal(p.S0)
    supports = [support]
    additions, removals = [], []
    for t in range(1, p.horizon + 1):
        prev = x[t - 1]
        if p.Sr and t % p.d == 0:
            if support.size < p.Sr:
                raise ValueError(f"support of size {support.size} cannot lose {p.Sr} entries at t={t}")
            order = np.lexsort((support, np.abs(prev[support])))
            support = np.sort(np.delete(support, order[: p.Sr]))
            removals.append(t)
        if p.Sa and (t - 1) % p.d == 0 and support.size + p.Sa <= p.Smax:
            support = np.union1d(support, _draw_new(rng, p.m, support, p.Sa))
            additions.append(t)
        x[t, support] = prev[support] + p.sigma_sys * rng.standard_normal(support.size)
        supports.append(support)
    return SparseTrajectory(x, supports, additions, removals)


def simulate_no_removals(params: RandomWalkParams, seed) -> SparseTrajectory:
    """Additions only; exactly ``(Smax - S0) / Sa`` events if they fit the horizon."""
    p = params
    if (p.Sa == 0 and p.Smax != p.S0) or (p.Sa and (p.Smax - p.S0) % p.Sa):
        raise ValueError(f"Smax - S0 = {p.Smax - p.S0} must be a multiple of Sa = {p.Sa}")
    if p.Sr:
        raise ValueError("Sr must be zero for the no-removals model")
    return simulate_random_walk(p, seed)


def simulate_bounded_power(params: BoundedPowerParams, seed) -> SparseTrajectory:
    """Coefficients with a linear ramp up, a plateau, and a linear ramp down.

    ``S0`` entries start on the plateau with random signs.  At each addition
    time ``first_addition + j d`` ``Sa`` new entries appear at magnitude
    ``ramp`` and grow by ``ramp`` per step up to ``plateau``.  One step before
    the next addition ``Sa`` entries leave; they are drawn from the plateau
    entries ``r - 1`` steps earlier and shrink by ``plateau / r`` per step, so
    they reach zero exactly when removed.
    """
    p = params
    rng = _rng(seed)
    x = np.zeros((p.horizon + 1, p.m))
    support = np.sort(rng.choice(p.m, size=p.S0, replace=False))
    sign = np.zeros(p.m)
    sign[support] = rng.choice([-1.0, 1.0], size=p.S0)
    mag = np.zeros(p.m)
    mag[support] = p.plateau
    growing: set[int] = set()
    shrinking: dict[int, int] = {}  # index -> steps into the decrease
    add_times = [t for t in range(p.first_addition, p.horizon + 1, p.d)]
    removal_times = {t + p.d - 1 for t in add_times if t + p.d <= p.horizon}
    decrease_starts = {t - (p.r - 1) for t in removal_times}

    x[0] = sign * mag
    supports = [support]
    additions, removals = [], []
    for t in range(1, p.horizon + 1):
        for i in list(growing):
            mag[i] = min(p.plateau, mag[i] + p.ramp)
            if mag[i] >= p.plateau:
                growing.discard(i)
        for i in shrinking:
            shrinking[i] += 1
            mag[i] = p.plateau * (1.0 - shrinking[i] / p.r)
        if t in decrease_starts and p.Sa:
            plateau_idx = np.array(sorted(set(support.tolist()) - growing - set(shrinking)))
            if plateau_idx.size < p.Sa:
                raise ValueError(f"only {plateau_idx.size} plateau entries at t={t}, need {p.Sa}")
            for i in rng.choice(plateau_idx, size=p.Sa, replace=False):
                shrinking[int(i)] = 1
                mag[i] = p.plateau * (1.0 - 1.0 / p.r)
        if t in removal_times and p.Sa:
            gone = np.array(sorted(shrinking))
            mag[gone] = 0.0
            support = np.setdiff1d(support, gone)
            shrinking.clear()
            removals.append(t)
        if t in add_times and p.Sa:
            new = _draw_new(rng, p.m, support, p.Sa)
            sign[new] = rng.choice([-1.0, 1.0], size=p.Sa)
            mag[new] = p.ramp
            growing.update(int(i) for i in new)
            support = np.union1d(support, new)
            additions.append(t)
        x[t] = np.where(mag > 0, sign * mag, 0.0)
        supports.append(support)
    return SparseTrajectory(x, supports, additions, removals)


def measure(x: np.ndarray, A: np.ndarray, noise: NoiseSpec, seed) -> np.ndarray:
    """``y = A x + w`` with ``w`` drawn from ``noise``."""
    rng = _rng(seed)
    return A @ x + noise.sample(A.shape[0], rng)


def save_trajectory(traj: SparseTrajectory, path: str | Path) -> None:
    """Write ``(t, index, value)`` rows for the support entries plus a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "index", "value"])
        for t, support in enumerate(traj.supports):
            for i in support:
                w.writerow([t, int(i), repr(float(traj.x[t, i]))])
    meta = {
        "m": traj.m,
        "horizon": traj.horizon,
        "addition_times": list(traj.addition_times),
        "removal_times": list(traj.removal_times),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_trajectory(path: str | Path) -> SparseTrajectory:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    x = np.zeros((meta["horizon"] + 1, meta["m"]))
    members: list[list[int]] = [[] for _ in range(meta["horizon"] + 1)]
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            t, i = int(row["t"]), int(row["index"])
            x[t, i] = float(row["value"])
            members[t].append(i)
    supports = [np.array(sorted(s), dtype=np.intp) for s in members]
    return SparseTrajectory(x, supports, meta["addition_times"], meta["removal_times"])
