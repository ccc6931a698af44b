"""Configuration-driven experiments: learning curves, the log-log slope study and
nonlinear-utility runs.  CSV is the only output contract; nothing is plotted.

A config is one YAML document::

    experiment: curve            # curve | slope | nonlinear
    environment: frozenlake8x8   # built-in name or path to an MDP file
    algorithm: tsivr_pg          # tsivr_pg | reinforce
    utility: {kind: linear}      # linear | log_barrier | entropy | set_distance
    tsivr_pg: {n_large: 100, n_small: 10, epoch_length: 10, ...}
    reinforce: {batch_size: 100, step_size: 0.05, ...}
    runs: {num_runs: 10, seed_base: 0}
    output: {dir: out, window: 50, returns: undiscounted}
    slope: {n_values: [16, 64, 256], epochs: 20, last_episodes: 50, gap: exact}
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .baselines import BaselineConfig, run_reinforce
from .envs import BUILTIN, make_env
from .mdp import MdpModel, exact_occupancy, load_mdp, value_iteration
from .policy import TabularFeatures, policy_matrix
from .tsivr import AlgoConfig, RunTrace, run
from .utilities import (EntropyUtility, LinearUtility, LogBarrierUtility, SetDistanceUtility,
                        Utility)

OUTPUT_ENV_VAR = "TSIVRPG_OUT"
CURVE_COLUMNS = ("episodes", "median", "q25", "q75")
EXPERIMENTS = ("curve", "slope", "nonlinear")
ALGORITHMS = ("tsivr_pg", "reinforce")

_TSIVR_KEYS = {"n_large": int, "n_small": int, "epoch_length": int, "horizon": int,
               "step_size": float, "radius": float, "n_epochs": int, "truncation": bool,
               "init_scale": float}
_REINFORCE_KEYS = {"batch_size": int, "horizon": int, "step_size": float, "n_iterations": int,
                   "init_scale": float}
# defaults follow the FrozenLake settings used for the reference experiments
_TSIVR_DEFAULTS = {"n_large": 100, "n_small": 10, "epoch_length": 10, "horizon": 200,
                   "step_size": 0.1, "radius": 0.01, "n_epochs": 10, "truncation": True,
                   "init_scale": 0.0}
_REINFORCE_DEFAULTS = {"batch_size": 100, "horizon": 200, "step_size": 0.05,
                       "n_iterations": 100, "init_scale": 0.0}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class DegenerateFitError(ValueError):
    """A line cannot be fitted because the points do not span two distinct x values."""


@dataclass
class ExperimentConfig:
    experiment: str = "curve"
    environment: str = "frozenlake8x8"
    discount: float | None = None
    algorithm: str = "tsivr_pg"
    utility: dict = field(default_factory=lambda: {"kind": "linear"})
    tsivr_pg: dict = field(default_factory=lambda: dict(_TSIVR_DEFAULTS))
    reinforce: dict = field(default_factory=lambda: dict(_REINFORCE_DEFAULTS))
    num_runs: int = 10
    seed_base: int = 0
    out_dir: str = "out"
    window: int = 50
    returns: str = "undiscounted"
    track_exact: bool = True
    n_values: list = field(default_factory=list)
    slope_epochs: int = 20
    last_episodes: int = 50
    gap: str = "returns"
    base_dir: str = "."

    def seeds(self) -> list[int]:
        return [self.seed_base + k for k in range(self.num_runs)]

    def output_dir(self) -> Path:
        override = os.environ.get(OUTPUT_ENV_VAR)
        return Path(override) if override else Path(self.out_dir)


def _section(doc: dict, key: str) -> dict:
    value = doc.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, "must be a mapping")
    return value


def _typed(section: dict, schema: dict, defaults: dict, prefix: str) -> dict:
    out = dict(defaults)
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"{prefix}.{key}", f"unknown field; expected one of {sorted(schema)}")
        kind = schema[key]
        path = f"{prefix}.{key}"
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(path, "must be true or false")
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(path, "must be a positive integer")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigError(path, "must be a finite number")
            if key != "init_scale" and value <= 0:
                raise ConfigError(path, "must be positive")
            if key == "init_scale" and value < 0:
                raise ConfigError(path, "must be nonnegative")
            value = float(value)
        out[key] = value
    return out


def config_from_dict(doc: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Validate a parsed config document; errors carry the field path."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    known = {"experiment", "environment", "discount", "algorithm", "utility", "tsivr_pg",
             "reinforce", "runs", "output", "slope", "track_exact"}
    for key in doc:
        if key not in known:
            raise ConfigError(str(key), f"unknown field; expected one of {sorted(known)}")
    cfg = ExperimentConfig(base_dir=str(base_dir))
    cfg.experiment = doc.get("experiment", cfg.experiment)
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENTS}")
    env = doc.get("environment", cfg.environment)
    if not isinstance(env, str) or not env:
        raise ConfigError("environment", "must be a built-in name or a file path")
    if env not in BUILTIN and not (Path(base_dir) / env).is_file() and not Path(env).is_file():
        raise ConfigError("environment", f"{env!r} is neither a built-in ({sorted(BUILTIN)}) nor a file")
    cfg.environment = env
    if "discount" in doc and doc["discount"] is not None:
        d = doc["discount"]
        if isinstance(d, bool) or not isinstance(d, (int, float)) or not 0 < d < 1:
            raise ConfigError("discount", "must lie in (0, 1)")
        cfg.discount = float(d)
    cfg.algorithm = doc.get("algorithm", cfg.algorithm)
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {ALGORITHMS}")
    cfg.utility = _section(doc, "utility") or {"kind": "linear"}
    _check_utility_spec(cfg.utility)
    cfg.tsivr_pg = _typed(_section(doc, "tsivr_pg"), _TSIVR_KEYS, _TSIVR_DEFAULTS, "tsivr_pg")
    cfg.reinforce = _typed(_section(doc, "reinforce"), _REINFORCE_KEYS, _REINFORCE_DEFAULTS, "reinforce")
    if "track_exact" in doc:
        if not isinstance(doc["track_exact"], bool):
            raise ConfigError("track_exact", "must be true or false")
        cfg.track_exact = doc["track_exact"]

    runs = _section(doc, "runs")
    for key in runs:
        if key not in ("num_runs", "seed_base"):
            raise ConfigError(f"runs.{key}", "unknown field; expected num_runs or seed_base")
    cfg.num_runs = runs.get("num_runs", cfg.num_runs)
    if isinstance(cfg.num_runs, bool) or not isinstance(cfg.num_runs, int) or cfg.num_runs < 1:
        raise ConfigError("runs.num_runs", "must be an integer >= 1")
    cfg.seed_base = runs.get("seed_base", cfg.seed_base)
    if isinstance(cfg.seed_base, bool) or not isinstance(cfg.seed_base, int) or cfg.seed_base < 0:
        raise ConfigError("runs.seed_base", "must be a nonnegative integer")

    out = _section(doc, "output")
    for key in out:
        if key not in ("dir", "window", "returns"):
            raise ConfigError(f"output.{key}", "unknown field; expected dir, window or returns")
    cfg.out_dir = str(out.get("dir", cfg.out_dir))
    cfg.window = out.get("window", cfg.window)
    if isinstance(cfg.window, bool) or not isinstance(cfg.window, int) or cfg.window < 1:
        raise ConfigError("output.window", "must be an integer >= 1")
    cfg.returns = out.get("returns", cfg.returns)
    if cfg.returns not in ("undiscounted", "discounted"):
        raise ConfigError("output.returns", "must be 'undiscounted' or 'discounted'")

    slope = _section(doc, "slope")
    for key in slope:
        if key not in ("n_values", "epochs", "last_episodes", "gap"):
            raise ConfigError(f"slope.{key}", "unknown field; expected n_values, epochs, last_episodes or gap")
    cfg.n_values = list(slope.get("n_values", []))
    for i, n in enumerate(cfg.n_values):
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"slope.n_values[{i}]", "must be a positive integer")
    cfg.slope_epochs = slope.get("epochs", cfg.slope_epochs)
    if isinstance(cfg.slope_epochs, bool) or not isinstance(cfg.slope_epochs, int) or cfg.slope_epochs < 1:
        raise ConfigError("slope.epochs", "must be a positive integer")
    cfg.last_episodes = slope.get("last_episodes", cfg.last_episodes)
    if isinstance(cfg.last_episodes, bool) or not isinstance(cfg.last_episodes, int) or cfg.last_episodes < 1:
        raise ConfigError("slope.last_episodes", "must be a positive integer")
    cfg.gap = slope.get("gap", cfg.gap)
    if cfg.gap not in ("exact", "returns"):
        raise ConfigError("slope.gap", "must be 'exact' or 'returns'")
    if cfg.experiment == "slope":
        if len(set(cfg.n_values)) < 2:
            raise ConfigError("slope.n_values", "need at least two distinct values")
        if cfg.algorithm != "tsivr_pg":
            raise ConfigError("algorithm", "the slope study runs tsivr_pg only")
        if cfg.utility.get("kind") != "linear":
            raise ConfigError("utility.kind", "the slope study needs a linear utility")
    return cfg


def _check_utility_spec(spec: dict) -> None:
    kind = spec.get("kind")
    allowed = {"linear": {"reward"}, "log_barrier": {"sigma"}, "entropy": {"floor"},
               "set_distance": {"M", "lower", "upper", "center", "radius"}}
    if kind not in allowed:
        raise ConfigError("utility.kind", f"must be one of {sorted(allowed)}")
    for key in spec:
        if key != "kind" and key not in allowed[kind]:
            raise ConfigError(f"utility.{key}", f"not a parameter of the {kind} utility")
    for key in ("sigma", "floor"):
        if key in spec:
            v = spec[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"utility.{key}", "must be a positive number")
    if kind == "set_distance" and "M" not in spec:
        raise ConfigError("utility.M", "required for the set_distance utility")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such config file: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(doc or {}, path.parent)


def build_environment(cfg: ExperimentConfig) -> MdpModel:
    if cfg.environment in BUILTIN:
        return make_env(cfg.environment, cfg.discount)
    path = Path(cfg.environment)
    if not path.is_absolute() and not path.is_file():
        path = Path(cfg.base_dir) / path
    env = load_mdp(path)
    return env if cfg.discount is None else env.with_discount(cfg.discount)


def _resolve_array(value, cfg: ExperimentConfig, field_path: str) -> np.ndarray:
    # arrays may be inline lists or paths to whitespace-separated text files
    if isinstance(value, str):
        path = Path(value)
        if not path.is_file():
            path = Path(cfg.base_dir) / value
        try:
            return np.loadtxt(path, ndmin=1)
        except OSError as exc:
            raise ConfigError(field_path, f"cannot read {value!r}: {exc}") from None
    try:
        return np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(field_path, "must be numeric") from None


def build_utility(cfg: ExperimentConfig, env: MdpModel) -> Utility:
    spec = cfg.utility
    kind = spec["kind"]
    if kind == "linear":
        if "reward" in spec:
            r = _resolve_array(spec["reward"], cfg, "utility.reward").ravel()
            if r.size != env.num_pairs:
                raise ConfigError("utility.reward", f"needs {env.num_pairs} entries, got {r.size}")
            return LinearUtility(r)
        if env.reward is None:
            raise ConfigError("utility.reward", "environment has no reward table; give one here")
        return LinearUtility(env.reward_vector())
    if kind == "log_barrier":
        return LogBarrierUtility(env.num_actions, float(spec.get("sigma", 0.125)))
    if kind == "entropy":
        return EntropyUtility(env.discount, env.num_actions, float(spec.get("floor", 1e-8)))
    M = _resolve_array(spec["M"], cfg, "utility.M")
    M = np.atleast_2d(M)
    if M.shape[1] != env.num_pairs:
        raise ConfigError("utility.M", f"needs {env.num_pairs} columns, got {M.shape[1]}")
    region = {k: spec[k] for k in ("lower", "upper", "center", "radius") if k in spec}
    try:
        return SetDistanceUtility(M, gamma=env.discount, **region)
    except ValueError as exc:
        raise ConfigError("utility", str(exc)) from None


# ---------------------------------------------------------------- summaries

@dataclass
class CurveSummary:
    episodes: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray

    def to_csv(self, path) -> None:
        write_rows(path, CURVE_COLUMNS, zip(self.episodes, self.median, self.q25, self.q75))


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.10g" % float(x)


def write_rows(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def moving_average(x, window: int) -> np.ndarray:
    """Mean of the most recent ``window`` values (fewer at the start)."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def summarize(curves, episodes) -> CurveSummary:
    """Cross-run median and quartiles at each checkpoint."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    q25, med, q75 = np.quantile(curves, [0.25, 0.5, 0.75], axis=0)
    return CurveSummary(np.asarray(episodes), med, q25, q75)


# ---------------------------------------------------------------- runs

def run_single(cfg: ExperimentConfig, env: MdpModel, utility: Utility, seed: int,
               algorithm: str | None = None, overrides: dict | None = None) -> tuple[np.ndarray, RunTrace]:
    algorithm = algorithm or cfg.algorithm
    fm = TabularFeatures(env.num_states, env.num_actions)
    if algorithm == "tsivr_pg":
        p = {**cfg.tsivr_pg, **(overrides or {})}
        init_scale = p.pop("init_scale")
        algo = AlgoConfig(gamma=env.discount, seed=seed, track_exact=cfg.track_exact, **p)
        return run(env, fm, utility, algo, _initial_theta(fm.dim, init_scale, seed))
    p = {**cfg.reinforce, **(overrides or {})}
    init_scale = p.pop("init_scale")
    algo = BaselineConfig(gamma=env.discount, seed=seed, track_exact=cfg.track_exact, **p)
    return run_reinforce(env, fm, utility, algo, _initial_theta(fm.dim, init_scale, seed))


def _initial_theta(dim: int, scale: float, seed: int) -> np.ndarray:
    if scale <= 0:
        return np.zeros(dim)
    # a stream disjoint from every trajectory stream of the same seed
    rng = np.random.default_rng([seed, 2**31 - 1])
    return scale * rng.standard_normal(dim)


def _checkpoint_curve(trace: RunTrace, window: int, discounted: bool) -> tuple[np.ndarray, np.ndarray]:
    smooth = moving_average(trace.returns(discounted), window)
    episodes = trace.column("episodes").astype(int)
    return episodes, smooth[episodes - 1]


@dataclass
class ExperimentResult:
    summary: CurveSummary
    traces: list
    out_dir: Path
    extra: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Learning curves: per-run traces, 50-episode moving average, cross-run quartiles.

    Writes ``curve.csv`` and ``run_<seed>.csv`` per run.  If a run fails, the
    runs finished so far are flushed before the error propagates.
    """
    env = build_environment(cfg)
    utility = build_utility(cfg, env)
    out = cfg.output_dir()
    if write:
        out.mkdir(parents=True, exist_ok=True)
    traces, curves, episodes = [], [], None
    try:
        for seed in cfg.seeds():
            _, trace = run_single(cfg, env, utility, seed)
            traces.append(trace)
            ep, curve = _checkpoint_curve(trace, cfg.window, cfg.returns == "discounted")
            episodes = ep
            curves.append(curve)
            if write:
                trace.to_csv(out / f"run_{seed}.csv")
    finally:
        if curves:
            summary = summarize(curves, episodes)
            if write:
                summary.to_csv(out / "curve.csv")
    return ExperimentResult(summary, traces, out)


def uniform_policy_value(env: MdpModel, utility: Utility) -> float:
    pi = np.full((env.num_states, env.num_actions), 1.0 / env.num_actions)
    return utility.value(exact_occupancy(env, pi).entries)


def nonlinear_run(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Track ``F`` of the running occupancy estimate and of the exact occupancy.

    Writes ``exact_curve.csv`` and ``estimate_curve.csv`` (same schema as
    ``curve.csv``), per-run traces, and ``baseline.csv`` with the uniform-policy value.
    """
    if not cfg.track_exact:
        raise ConfigError("track_exact", "the nonlinear run needs the exact-occupancy track")
    env = build_environment(cfg)
    utility = build_utility(cfg, env)
    out = cfg.output_dir()
    if write:
        out.mkdir(parents=True, exist_ok=True)
    baseline = uniform_policy_value(env, utility)
    traces, exact, estimate = [], [], []
    episodes = None

    def flush():
        if not exact:
            return None
        s_exact = summarize(exact, episodes)
        if write:
            s_exact.to_csv(out / "exact_curve.csv")
            summarize(estimate, episodes).to_csv(out / "estimate_curve.csv")
            write_rows(out / "baseline.csv", ("uniform_value",), [(baseline,)])
        return s_exact

    try:
        for seed in cfg.seeds():
            theta, trace = run_single(cfg, env, utility, seed)
            traces.append(trace)
            episodes = trace.column("episodes").astype(int)
            fm = TabularFeatures(env.num_states, env.num_actions)
            final = utility.value(exact_occupancy(env, policy_matrix(fm, theta)).entries)
            # exact value after each update: drop the pre-update value, append the final one
            exact.append(np.append(trace.column("exact_objective")[1:], final))
            estimate.append(trace.column("estimate_objective"))
            if write:
                trace.to_csv(out / f"run_{seed}.csv")
    finally:
        summary = flush()
    finals = np.array([e[-1] for e in exact])
    return ExperimentResult(summary, traces, out, {
        "baseline": baseline, "final_values": finals,
        "median_improvement": float(np.median(finals) - baseline),
    })


@dataclass
class SlopeResult:
    slope: float
    intercept: float
    n_values: list
    log_episodes: np.ndarray
    log_gap: np.ndarray
    log_gap_std: np.ndarray
    gaps: np.ndarray
    kept: np.ndarray


def fit_line(x, y) -> tuple[float, float]:
    """Least-squares ``y = slope x + intercept``; rejects rank-deficient data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateFitError("need at least two distinct x values to fit a line")
    X = np.column_stack([x, np.ones_like(x)])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 2:
        raise DegenerateFitError("design matrix is rank deficient")
    return float(coef[0]), float(coef[1])


def slope_episodes(n: int, epochs: int) -> tuple[int, int]:
    """``B = m = ceil(sqrt(N))``; the x-axis counts ``E (N + B m)`` episodes per run."""
    b = math.isqrt(n)
    b = b if b * b == n else b + 1
    return b, epochs * (n + b * b)


def slope_study(cfg: ExperimentConfig, write: bool = True) -> SlopeResult:
    """Gap to the optimum after ``E`` epochs for several anchor sizes ``N``.

    ``gap='exact'`` measures ``V* - <r, lambda(theta_final)>``; ``gap='returns'``
    uses the mean discounted return of the last ``last_episodes`` episodes.
    Points whose gap is not positive are dropped with a warning.
    """
    env = build_environment(cfg)
    utility = build_utility(cfg, env)
    if not isinstance(utility, LinearUtility):
        raise ConfigError("utility.kind", "the slope study needs a linear utility")
    v_star = value_iteration(env, utility.reward.reshape(env.num_states, env.num_actions)).optimal_value
    fm = TabularFeatures(env.num_states, env.num_actions)
    rows, log_eps, log_gap, log_std, gaps, kept = [], [], [], [], [], []
    for n in sorted(set(cfg.n_values)):
        b, total = slope_episodes(n, cfg.slope_epochs)
        per_run = []
        for seed in cfg.seeds():
            theta, trace = run_single(cfg, env, utility, seed, "tsivr_pg", {
                "n_large": n, "n_small": b, "epoch_length": b, "n_epochs": cfg.slope_epochs})
            if cfg.gap == "exact":
                value = utility.value(exact_occupancy(env, policy_matrix(fm, theta)).entries)
            else:
                value = float(trace.returns(True)[-cfg.last_episodes:].mean())
            per_run.append(v_star - value)
        per_run = np.array(per_run)
        gap = float(per_run.mean())
        ok = gap > 0
        if not ok:
            warnings.warn(f"N={n}: nonpositive gap {gap:.3g}, point dropped", RuntimeWarning)
        std = float(np.log(per_run[per_run > 0]).std()) if np.any(per_run > 0) else float("nan")
        rows.append((n, b, b, total, gap, math.log(total), math.log(gap) if ok else float("nan"), std))
        log_eps.append(math.log(total))
        log_gap.append(math.log(gap) if ok else float("nan"))
        log_std.append(std)
        gaps.append(gap)
        kept.append(ok)
    kept = np.array(kept)
    x, y = np.array(log_eps), np.array(log_gap)
    slope, intercept = fit_line(x[kept], y[kept])
    if write:
        out = cfg.output_dir()
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "slope_points.csv",
                   ("N", "B", "m", "episodes", "gap", "log_episodes", "log_gap", "log_gap_std"), rows)
        write_rows(out / "slope_fit.csv", ("slope", "intercept", "v_star"), [(slope, intercept, v_star)])
    return SlopeResult(slope, intercept, sorted(set(cfg.n_values)), x, y, np.array(log_std),
                       np.array(gaps), kept)


def execute(cfg: ExperimentConfig, write: bool = True):
    """Dispatch on ``cfg.experiment``."""
    if cfg.experiment == "slope":
        return slope_study(cfg, write)
    if cfg.experiment == "nonlinear":
        return nonlinear_run(cfg, write)
    return run_experiment(cfg, write)
