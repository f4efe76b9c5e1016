"""Monte Carlo comparison of the estimators on simulated sparse sequences.

Every trial draws its own signal and noise from a seed stream derived from
``(master_seed, trial_index)`` alone, and all estimators see the same
measurements.  Per-trial results are kept so runs over disjoint trial
ranges can be merged; aggregates use ``math.fsum`` and therefore do not
depend on trial order.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dantzig import SolverError
from .estimators import (
    AlgorithmConfig,
    IllConditionedError,
    genie_kf_init,
    genie_kf_step,
    genie_ls_step,
    kfcs_init,
    kfcs_step,
    lscs_init,
    lscs_step,
    simple_cs_step,
)
from .models import (
    BoundedPowerParams,
    NoiseSpec,
    RandomWalkParams,
    SparseTrajectory,
    simulate_bounded_power,
    simulate_no_removals,
    simulate_random_walk,
)
from .sensing import generate_gaussian_matrix

ESTIMATORS = ("kfcs", "lscs", "genie_kf", "genie_ls", "cs")  # cs: Gauss-Dantzig per step
CSV_HEADER = ("t", "estimator", "nmse", "misses", "extras", "diff2", "divergences")
_ALGO_FIELDS = tuple(f.name for f in dataclasses.fields(AlgorithmConfig))

# seed-stream tags; trials use (TAG_TRIAL, index)
TAG_TRIAL, TAG_MATRIX, TAG_INIT_MATRIX = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "random_walk"  # random_walk, no_removals or bounded_power
    m: int = 256
    n: int = 72
    n0: int | None = None
    horizon: int = 100
    # random-walk models
    S0: int = 8
    Sa: int = 2
    Sr: int = 0
    d: int = 5
    Smax: int = 26
    sigma_sys0: float = 1.0
    sigma_sys: float = 1.0
    # bounded-power model
    ramp: float = 0.2
    plateau: float = 1.0
    r: int = 3
    first_addition: int = 2
    # measurement noise
    noise_kind: str = "gaussian"
    noise_scale: float = 0.16
    # algorithm parameters shared by all estimators ...
    lam: float = 0.64
    alpha: float = 0.23
    alpha_del: float = 0.0
    sigma_sys2: float | None = None  # defaults to sigma_sys**2
    sigma2: float | None = None  # defaults to the noise variance
    gamma: float = 1.0
    max_additions: int | None = None
    sigma_init2: float | None = None  # defaults to sigma_sys0**2
    # ... and per-estimator overrides, e.g. {"lscs": {"alpha": 0.1}}
    overrides: dict = field(default_factory=dict)
    estimators: tuple = ESTIMATORS
    trials: int = 100
    seed: int = 0
    matrix_policy: str = "shared"  # or "per_trial"
    divergence_ratio: float = 1.0
    workers: int = 1
    out: str | None = None  # directory for metrics.csv and manifest.json

    def __post_init__(self):
        if self.model not in ("random_walk", "no_removals", "bounded_power"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.matrix_policy not in ("shared", "per_trial"):
            raise ConfigError(f"unknown matrix_policy {self.matrix_policy!r}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        for name, over in self.overrides.items():
            if name not in ESTIMATORS:
                raise ConfigError(f"override for unknown estimator {name!r}")
            bad = set(over) - set(_ALGO_FIELDS)
            if bad:
                raise ConfigError(f"unknown algorithm fields {sorted(bad)} for {name}")
        if self.trials < 1 or self.horizon < 2:
            raise ConfigError("need trials >= 1 and horizon >= 2")
        if not 0 < self.n <= self.m or not 0 < self.init_rows <= self.m:
            raise ConfigError(f"need 0 < n, n0 <= m (n={self.n}, n0={self.n0}, m={self.m})")
        try:
            self.noise()
            self.model_params()
            for name in self.estimators:
                if name != "genie_ls":  # least squares needs no parameters
                    self.algorithm(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def init_rows(self) -> int:
        return self.n if self.n0 is None else self.n0

    def noise(self) -> NoiseSpec:
        return NoiseSpec(self.noise_kind, self.noise_scale)

    def model_params(self):
        if self.model == "bounded_power":
            return BoundedPowerParams(
                self.m, self.S0, self.Sa, self.ramp, self.plateau, self.d, self.r, self.horizon, self.first_addition
            )
        return RandomWalkParams(
            self.m, self.S0, self.Sa, self.Sr, self.d, self.Smax, self.sigma_sys0, self.sigma_sys, self.horizon
        )

    def algorithm(self, estimator: str) -> AlgorithmConfig:
        base = {
            "lam": self.lam,
            "alpha": self.alpha,
            "alpha_del": self.alpha_del,
            "sigma_sys2": self.sigma_sys**2 if self.sigma_sys2 is None else self.sigma_sys2,
            "sigma2": self.noise().variance() if self.sigma2 is None else self.sigma2,
            "gamma": self.gamma,
            "n0": self.init_rows,
            "max_additions": self.max_additions,
            "sigma_init2": self.sigma_sys0**2 if self.sigma_init2 is None else self.sigma_init2,
        }
        base.update(self.overrides.get(estimator, {}))
        return AlgorithmConfig(**base)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["estimators"] = list(self.estimators)
        return out


def _coerce(name: str, raw: str):
    """Parse a config string according to the ExperimentConfig field type."""
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}.get(name)
    if ftype is None and name in _ALGO_FIELDS:
        ftype = {f.name: f.type for f in dataclasses.fields(AlgorithmConfig)}[name]
    if ftype is None:
        raise ConfigError(f"unknown config key {name!r}")
    raw = raw.strip()
    if "None" in ftype and raw.lower() in ("", "none"):
        return None
    try:
        if ftype.startswith("int"):
            return int(raw)
        if ftype.startswith("float"):
            return float(raw)
        if ftype == "tuple":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {name}") from exc


def parse_config_text(text: str, **cli_overrides) -> ExperimentConfig:
    """Read flat ``key = value`` lines; ``estimator.field`` keys set overrides.

    A leading ``[section]`` header is optional.  Keyword arguments that are
    not ``None`` replace values from the text.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    body = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith(("#", ";"))]
    if not body or not body[0].startswith("["):
        text = "[experiment]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict = {}
    overrides: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if "." in key:
                est, fname = key.split(".", 1)
                overrides.setdefault(est, {})[fname] = _coerce(fname, raw)
            else:
                values[key] = _coerce(key, raw)
    values.update({k: v for k, v in cli_overrides.items() if v is not None})
    if overrides:
        values["overrides"] = overrides
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, **cli_overrides) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), **cli_overrides)


# ---------------------------------------------------------------------------
# per-trial simulation


@dataclass
class TrialRecord:
    """Per-time-step results of one trial, arrays of length ``horizon + 1``."""

    index: int
    energy: np.ndarray
    sqerr: dict
    misses: dict
    extras: dict
    diverged: dict
    diff2: np.ndarray | None = None


def support_errors(true_support, est_support) -> tuple[int, int]:
    """Return ``(misses, extras)``: true indices missed and false indices kept."""
    true_support = np.asarray(true_support, dtype=np.intp)
    est_support = np.asarray(est_support, dtype=np.intp)
    misses = np.setdiff1d(true_support, est_support).size
    extras = np.setdiff1d(est_support, true_support).size
    return int(misses), int(extras)


def _seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=key)


def shared_matrices(cfg: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    A = generate_gaussian_matrix(cfg.n, cfg.m, np.random.default_rng(_seed(cfg.seed, TAG_MATRIX)))
    if cfg.init_rows == cfg.n:
        return A, A
    A0 = generate_gaussian_matrix(cfg.init_rows, cfg.m, np.random.default_rng(_seed(cfg.seed, TAG_INIT_MATRIX)))
    return A, A0


def simulate_trial_data(cfg: ExperimentConfig, index: int, A=None, A0=None):
    """Trajectory, measurements and matrices for one trial.

    Returns ``(traj, ys, noise, A, A0)`` where ``ys[0]`` is measured with
    ``A0`` and the rest with ``A``.
    """
    signal_ss, noise_ss, matrix_ss = _seed(cfg.seed, TAG_TRIAL, index).spawn(3)
    if A is None:
        if cfg.matrix_policy == "shared":
            A, A0 = shared_matrices(cfg)
        else:
            rng = np.random.default_rng(matrix_ss)
            A = generate_gaussian_matrix(cfg.n, cfg.m, rng)
            A0 = A if cfg.init_rows == cfg.n else generate_gaussian_matrix(cfg.init_rows, cfg.m, rng)
    params = cfg.model_params()
    if cfg.model == "bounded_power":
        traj = simulate_bounded_power(params, np.random.default_rng(signal_ss))
    elif cfg.model == "no_removals":
        traj = simulate_no_removals(params, np.random.default_rng(signal_ss))
    else:
        traj = simulate_random_walk(params, np.random.default_rng(signal_ss))
    rng = np.random.default_rng(noise_ss)
    spec = cfg.noise()
    noise = [spec.sample(A0.shape[0], rng)] + [spec.sample(A.shape[0], rng) for _ in range(traj.horizon)]
    ys = [A0 @ traj.x[0] + noise[0]] + [A @ traj.x[t] + noise[t] for t in range(1, traj.horizon + 1)]
    return traj, ys, noise, A, A0


class _Runner:
    """Drives one estimator through a trial, turning numerical failures into
    recorded divergence events followed by a fresh initialization."""

    def __init__(self, name, cfg: AlgorithmConfig, traj: SparseTrajectory, A, A0, gram, gram0):
        self.name, self.cfg, self.traj = name, cfg, traj
        self.A, self.A0, self.gram, self.gram0 = A, A0, gram, gram0
        self.state = None

    def init(self, y0):
        c = self.cfg
        if self.name == "kfcs":
            self.state = kfcs_init(self.A0, y0, c, gram=self.gram0)
        elif self.name == "lscs":
            self.state = lscs_init(self.A0, y0, c, gram=self.gram0)
        elif self.name == "genie_kf":
            self.state = genie_kf_init(self.A0, y0, self.traj.supports[0], c)
        elif self.name == "genie_ls":
            return genie_ls_step(y0, self.A0, self.traj.supports[0])
        else:
            return simple_cs_step(y0, self.A0, c, gram=self.gram0)
        return self.state

    def step(self, t, y):
        c, A = self.cfg, self.A
        if self.name == "kfcs":
            self.state, _ = kfcs_step(self.state, y, A, c, gram=self.gram)
        elif self.name == "lscs":
            self.state, _ = lscs_step(self.state, y, A, c, gram=self.gram)
        elif self.name == "genie_kf":
            self.state, _ = genie_kf_step(self.state, y, A, c, self.traj.supports[t])
        elif self.name == "genie_ls":
            return genie_ls_step(y, A, self.traj.supports[t])
        else:
            return simple_cs_step(y, A, c, gram=self.gram)
        return self.state

    def recover(self, y):
        """Restart from the current measurement after a numerical failure."""
        c = self.cfg
        if self.name == "kfcs":
            self.state = kfcs_init(self.A, y, c, gram=self.gram)
        elif self.name == "lscs":
            self.state = lscs_init(self.A, y, c, gram=self.gram)
        else:
            raise RuntimeError(f"{self.name} has no recovery path")
        return self.state


def run_trial(cfg: ExperimentConfig, index: int, A=None, A0=None) -> TrialRecord:
    traj, ys, _, A, A0 = simulate_trial_data(cfg, index, A, A0)
    gram = A.T @ A
    gram0 = gram if A0 is A else A0.T @ A0
    H = traj.horizon + 1
    energy = np.sum(traj.x**2, axis=1)
    rec = TrialRecord(
        index,
        energy,
        {e: np.zeros(H) for e in cfg.estimators},
        {e: np.zeros(H, dtype=int) for e in cfg.estimators},
        {e: np.zeros(H, dtype=int) for e in cfg.estimators},
        {e: np.zeros(H, dtype=int) for e in cfg.estimators},
    )
    estimates = {}
    for name in cfg.estimators:
        algo = None if name == "genie_ls" else cfg.algorithm(name)
        run = _Runner(name, algo, traj, A, A0, gram, gram0)
        xs = np.zeros_like(traj.x)
        for t in range(H):
            try:
                out = run.init(ys[0]) if t == 0 else run.step(t, ys[t])
                failed = False
            except (IllConditionedError, SolverError):
                if t == 0 or name not in ("kfcs", "lscs"):
                    raise
                out = run.recover(ys[t])
                failed = True
            xs[t], support = out.xhat, out.support
            err = float(np.sum((traj.x[t] - xs[t]) ** 2))
            rec.sqerr[name][t] = err
            rec.misses[name][t], rec.extras[name][t] = support_errors(traj.supports[t], support)
            rec.diverged[name][t] = int(failed or err > cfg.divergence_ratio * max(energy[t], 1e-300))
        estimates[name] = xs
    if "kfcs" in estimates and "genie_kf" in estimates:
        rec.diff2 = np.sum((estimates["kfcs"] - estimates["genie_kf"]) ** 2, axis=1)
    return rec


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class RunMetrics:
    config: ExperimentConfig
    records: dict  # trial index -> TrialRecord

    @property
    def horizon(self) -> int:
        return len(next(iter(self.records.values())).energy) - 1

    @property
    def trials(self) -> int:
        return len(self.records)

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        overlap = set(self.records) & set(other.records)
        if overlap:
            raise ValueError(f"trial indices overlap: {sorted(overlap)[:5]}")
        return RunMetrics(self.config, {**self.records, **other.records})

    def _sum(self, get) -> np.ndarray:
        recs = [self.records[k] for k in sorted(self.records)]
        cols = np.array([get(r) for r in recs], dtype=float)
        return np.array([math.fsum(cols[:, t]) for t in range(cols.shape[1])])

    def nmse(self, estimator: str) -> np.ndarray:
        num = self._sum(lambda r: r.sqerr[estimator])
        den = self._sum(lambda r: r.energy)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))

    def mean_misses(self, estimator: str) -> np.ndarray:
        return self._sum(lambda r: r.misses[estimator]) / self.trials

    def mean_extras(self, estimator: str) -> np.ndarray:
        return self._sum(lambda r: r.extras[estimator]) / self.trials

    def divergences(self, estimator: str) -> np.ndarray:
        return self._sum(lambda r: r.diverged[estimator]).astype(int)

    def mean_diff2(self) -> np.ndarray | None:
        if any(r.diff2 is None for r in self.records.values()):
            return None
        return self._sum(lambda r: r.diff2) / self.trials

    def rows(self):
        diff2 = self.mean_diff2()
        stats = {
            e: (self.nmse(e), self.mean_misses(e), self.mean_extras(e), self.divergences(e))
            for e in self.config.estimators
        }
        for t in range(self.horizon + 1):
            for e in self.config.estimators:
                nmse, mis, ext, div = stats[e]
                d2 = diff2[t] if (diff2 is not None and e == "kfcs") else None
                yield t, e, nmse[t], mis[t], ext[t], d2, int(div[t])


def _fmt(v) -> str:
    return "" if v is None else f"{float(v):.10g}"


def emit_csv(metrics: RunMetrics, out_dir: str | Path | None = None) -> str:
    """Render the metrics table; with ``out_dir`` also write it plus a manifest.

    ``diff2`` (KF-CS versus genie KF) is filled only on the ``kfcs`` rows.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t, e, nmse, mis, ext, d2, div in metrics.rows():
        w.writerow([t, e, _fmt(nmse), _fmt(mis), _fmt(ext), _fmt(d2), div])
    text = buf.getvalue()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(text, encoding="utf-8")
        manifest = {
            "version": __version__,
            "master_seed": metrics.config.seed,
            "trials": sorted(int(k) for k in metrics.records),
            "config": metrics.config.to_dict(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return text


def read_csv(path_or_text: str | Path) -> list[dict]:
    text = Path(path_or_text).read_text(encoding="utf-8") if isinstance(path_or_text, Path) else path_or_text
    return list(csv.DictReader(io.StringIO(text)))


def _run_one(args):
    cfg, index = args
    A, A0 = shared_matrices(cfg) if cfg.matrix_policy == "shared" else (None, None)
    return run_trial(cfg, index, A, A0)


def run_experiment(cfg: ExperimentConfig, trial_indices=None, workers: int | None = None) -> RunMetrics:
    """Run the configured trials (``range(cfg.trials)`` by default)."""
    indices = list(range(cfg.trials) if trial_indices is None else trial_indices)
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_one, [(cfg, i) for i in indices]))
    else:
        A, A0 = shared_matrices(cfg) if cfg.matrix_policy == "shared" else (None, None)
        records = [run_trial(cfg, i, A, A0) for i in indices]
    return RunMetrics(cfg, {r.index: r for r in records})


@dataclass
class KfcsRecording:
    """Everything needed to evaluate error bounds along one KF-CS run."""

    traj: SparseTrajectory
    noise: list
    A: np.ndarray
    A0: np.ndarray
    xhat: np.ndarray
    x_init: np.ndarray
    est_supports: list


def record_kfcs_trial(cfg: ExperimentConfig, index: int = 0) -> KfcsRecording:
    traj, ys, noise, A, A0 = simulate_trial_data(cfg, index)
    c = cfg.algorithm("kfcs")
    state = kfcs_init(A0, ys[0], c)
    xhat = np.zeros_like(traj.x)
    x_init = np.zeros_like(traj.x)
    xhat[0] = state.xhat
    supports = [state.support]
    for t in range(1, traj.horizon + 1):
        state, out = kfcs_step(state, ys[t], A, c)
        xhat[t], x_init[t] = out.xhat, out.x_init
        supports.append(state.support)
    return KfcsRecording(traj, noise, A, A0, xhat, x_init, supports)
