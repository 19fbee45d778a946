"""Experiment runner: config parsing, seeded replication, CSV traces, rate fits and validation suites."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, oracle
from .actor_critic import OracleProbe, derive_hyperparameters, mlmc_nac, refresher, smoothness_estimate
from .backend import resolve
from .errors import ConfigError, DataError, DivergenceError
from .linrec import (RecursionSpec, bias_floor_probe, reference_system, run_recursion,
                     second_moment_curve, theorem2_step_size)
from .mdp import (FeatureMap, TabularMdp, empty_features, fourier_features, generate_random_ergodic,
                  load_mdp, make_rng, reduced_one_hot_features)
from .mlmc import check_t_max, expected_cost, policy_cdf
from .policy import TABULAR, PolicyClass

CSV_COLUMNS = ("k", "cum_T", "J_theta", "gap", "xi_err", "omega_err", "epoch_transitions", "wall_ms")
THREADS_VAR = "RL_THREADS"


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    mdp: dict
    policy: dict = field(default_factory=lambda: {"class": "tabular", "theta0": "zeros"})
    features: object = "reduced_one_hot"
    T_budget: int | None = None
    K: int | None = None
    H: int | None = None
    overrides: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    probe_every: int = 1
    output: str = "runs"
    warm_start: bool = False
    refresh_constants: bool = False
    record_wall_time: bool = False
    backend: str | None = None
    base_dir: str = "."

    def __post_init__(self):
        if (self.T_budget is None) == (self.K is None or self.H is None):
            if self.T_budget is not None:
                raise ConfigError("T_budget: give either T_budget or (K, H), not both")
            raise ConfigError("T_budget: need T_budget or both K and H")
        if self.T_budget is not None and (not isinstance(self.T_budget, int) or self.T_budget < 3):
            raise ConfigError("T_budget: must be an integer >= 3")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: must be a non-empty list of integers")
        if not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds: entries must be non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: entries must be distinct")
        if not isinstance(self.probe_every, int) or self.probe_every < 1:
            raise ConfigError("probe_every: must be a positive integer")
        if self.backend is not None and self.backend not in ("numba", "numpy"):
            raise ConfigError("backend: must be 'numba' or 'numpy'")
        if not isinstance(self.overrides, dict):
            raise ConfigError("overrides: must be an object")

    def resolve_path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def config_from_dict(data: dict, base_dir=".") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
    if "mdp" not in data:
        raise ConfigError("mdp: missing required field")
    return ExperimentConfig(**data, base_dir=str(base_dir))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data, path.parent)


def reference_mdp() -> TabularMdp:
    """Fixed 3-state 2-action instance used by the estimator checks."""
    P = np.array([
        [[0.6, 0.3, 0.1], [0.1, 0.2, 0.7]],
        [[0.2, 0.5, 0.3], [0.5, 0.1, 0.4]],
        [[0.3, 0.3, 0.4], [0.1, 0.6, 0.3]],
    ])
    r = np.array([[1.0, 0.2], [0.0, 0.7], [0.4, 0.9]])
    return TabularMdp(3, 2, r, P, np.full(3, 1 / 3))


def build_mdp(cfg: ExperimentConfig) -> TabularMdp:
    spec = cfg.mdp
    if spec == "reference":
        return reference_mdp()
    if not isinstance(spec, dict):
        raise ConfigError("mdp: expected 'reference', {'path': ...} or {'generator': {...}}")
    if "path" in spec:
        return load_mdp(cfg.resolve_path(spec["path"]))
    if "generator" in spec:
        g = spec["generator"]
        try:
            return generate_random_ergodic(int(g["states"]), int(g["actions"]),
                                           float(g.get("self_loop_min", 0.1)), int(g.get("seed", 0)))
        except KeyError as exc:
            raise ConfigError(f"mdp.generator.{exc.args[0]}: missing required field") from None
    raise ConfigError("mdp: expected a 'path' or 'generator' entry")


def build_features(spec, n_states: int, cfg: ExperimentConfig | None = None) -> FeatureMap:
    if spec == "reduced_one_hot":
        return reduced_one_hot_features(n_states)
    if spec == "fourier":
        return fourier_features(n_states)
    if spec == "empty":
        return empty_features(n_states)
    if isinstance(spec, dict) and "path" in spec:
        p = cfg.resolve_path(spec["path"]) if cfg else Path(spec["path"])
        return FeatureMap(np.asarray(json.loads(Path(p).read_text(encoding="utf-8")), dtype=float))
    if isinstance(spec, list):
        return FeatureMap(np.asarray(spec, dtype=float))
    raise ConfigError("features: expected 'reduced_one_hot', 'fourier', 'empty', a table or {'path': ...}")


def build_policy(cfg: ExperimentConfig, mdp: TabularMdp):
    spec = cfg.policy
    kind = spec.get("class", "tabular")
    if kind == "tabular":
        pclass = PolicyClass.tabular(mdp.n_states, mdp.n_actions)
    elif kind == "log_linear":
        table = spec.get("features")
        if isinstance(table, dict) and "path" in table:
            table = json.loads(cfg.resolve_path(table["path"]).read_text(encoding="utf-8"))
        if table is None:
            raise ConfigError("policy.features: required for the log_linear class")
        pclass = PolicyClass.log_linear(np.asarray(table, dtype=float))
    else:
        raise ConfigError(f"policy.class: unknown policy class {kind!r}")
    theta0 = spec.get("theta0", "zeros")
    if theta0 == "zeros":
        theta0 = np.zeros(pclass.dim)
    elif isinstance(theta0, dict) and "path" in theta0:
        theta0 = np.asarray(json.loads(cfg.resolve_path(theta0["path"]).read_text(encoding="utf-8")), dtype=float)
    else:
        theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (pclass.dim,):
        raise ConfigError(f"policy.theta0: expected {pclass.dim} entries, got shape {theta0.shape}")
    return pclass, theta0


# ---------------------------------------------------------------------------
# running

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_trace_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def write_theta_log(path, thetas, final_theta, probe_every) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, th in enumerate(thetas):
            if k % probe_every == 0:
                fh.write(json.dumps({"k": k, "theta": [float(x) for x in th]}) + "\n")
        if final_theta is not None:
            fh.write(json.dumps({"k": len(thetas), "theta": [float(x) for x in final_theta], "final": True}) + "\n")


def prepare(cfg: ExperimentConfig):
    """Build the instance, oracle report and hyperparameters shared by every seed."""
    mdp = build_mdp(cfg)
    features = build_features(cfg.features, mdp.n_states, cfg)
    if features.n_states != mdp.n_states:
        raise ConfigError(f"features: table has {features.n_states} rows for {mdp.n_states} states")
    pclass, theta0 = build_policy(cfg, mdp)
    report = oracle.assumption_report(mdp, theta0, features, pclass)
    hp = derive_hyperparameters(cfg.T_budget, report, cfg.overrides, k_outer=cfg.K, h_inner=cfg.H,
                                smoothness=lambda: smoothness_estimate(mdp, pclass, theta0))
    return mdp, features, pclass, theta0, report, hp


def _run_seed(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict:
    mdp, features, pclass, theta0, report, hp = prepare(cfg)
    probes = OracleProbe(mdp, pclass, features, hp.c_beta)
    refresh = refresher(mdp, pclass, features, cfg.overrides) if cfg.refresh_constants else None
    out = Path(out_dir)
    status, error = "completed", None
    try:
        trace = mlmc_nac(mdp, pclass, theta0, features, hp, make_rng(seed), probes,
                         probe_every=cfg.probe_every, warm_start=cfg.warm_start, refresh=refresh,
                         backend=cfg.backend, record_wall_time=cfg.record_wall_time)
    except DivergenceError as exc:
        trace, status, error = exc.trace, "diverged", str(exc)
    write_trace_csv(out / f"trace_seed{seed}.csv", trace.records)
    write_theta_log(out / f"theta_seed{seed}.jsonl", trace.thetas, trace.final_theta, cfg.probe_every)
    final_gap = probes.J_star - oracle.gain(mdp, trace.final_theta, pclass)
    gaps = trace.column("gap")
    return {
        "seed": seed,
        "status": status,
        "error": error,
        "epochs": len(trace.records),
        "total_transitions": int(trace.records[-1].cum_T) if trace.records else 0,
        "initial_gap": float(gaps[0]) if gaps.size else float("nan"),
        "final_gap": float(final_gap),
        "mean_gap": float(np.nanmean(gaps)) if gaps.size and not np.all(np.isnan(gaps)) else float("nan"),
    }


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_VAR)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{THREADS_VAR} must be a positive integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every seed, write per-seed CSV + theta logs and a summary JSON; return the summary."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve_path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    mdp, features, pclass, theta0, report, hp = prepare(cfg)
    J_star, _ = oracle.optimal_gain(mdp)
    workers = _worker_count(len(cfg.seeds))
    if workers == 1:
        per_seed = [_run_seed(cfg, s, str(out)) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_run_seed, [cfg] * len(cfg.seeds), cfg.seeds, [str(out)] * len(cfg.seeds)))
    summary = summarize(per_seed)
    summary.update({
        "J_star": J_star,
        # the complete softmax class has no expressivity gap; for feature classes it is not computable
        "eps_bias": 0.0 if pclass.kind == TABULAR else None,
        "oracle": report.as_dict(),
        "hyperparameters": asdict(hp),
        "config": cfg.echo(),
        "seeds": per_seed,
    })
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def summarize(per_seed) -> dict:
    """Medians over seeds; pure post-processing of the per-seed results."""
    def med(key):
        vals = [s[key] for s in per_seed if not math.isnan(s[key])]
        return float(np.median(vals)) if vals else float("nan")

    return {
        "median_final_gap": med("final_gap"),
        "median_initial_gap": med("initial_gap"),
        "median_mean_gap": med("mean_gap"),
        "n_completed": sum(s["status"] == "completed" for s in per_seed),
        "n_diverged": sum(s["status"] == "diverged" for s in per_seed),
    }


# ---------------------------------------------------------------------------
# rate fitting

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple


def fit_power_law(x, y, floor_subtract=None) -> RateFit:
    """OLS of ln(y - floor) on ln(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if floor_subtract is not None:
        y = y - float(floor_subtract)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-d arrays of equal length")
    if x.size < 3:
        raise DataError(f"need at least 3 points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DataError("rate fit needs strictly positive x and y (after floor subtraction)")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-24:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(float(slope), float(intercept), r2, tuple(zip(lx.tolist(), ly.tolist())))


def rate_fit(csv_paths, x_col: str, y_col: str, floor_subtract=None) -> RateFit:
    """Fit across one or more trace CSVs; rows sharing an x value are reduced to their median y."""
    if isinstance(csv_paths, (str, os.PathLike)):
        csv_paths = [csv_paths]
    groups: dict = {}
    for p in csv_paths:
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for col in (x_col, y_col):
                if reader.fieldnames is None or col not in reader.fieldnames:
                    raise DataError(f"{p}: no column named {col!r}")
            for row in reader:
                try:
                    xv, yv = float(row[x_col]), float(row[y_col])
                except ValueError:
                    raise DataError(f"{p}: non-numeric value in row {reader.line_num}") from None
                if math.isnan(xv) or math.isnan(yv):
                    continue
                groups.setdefault(xv, []).append(yv)
    xs = np.array(sorted(groups))
    ys = np.array([np.median(groups[x]) for x in xs])
    return fit_power_law(xs, ys, floor_subtract)


# ---------------------------------------------------------------------------
# validation suites

@dataclass
class Check:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: measured={self.measured:.6g} expected={self.expected:.6g} tol={self.tolerance:.3g}"


def _kernel(fn, backend):
    return fn if resolve(backend) == "numba" else getattr(fn, "py_func", fn)


def mlmc_vs_batch(mdp: TabularMdp, t_max: int, reps: int, rng, mode=kernels.CRITIC_B_TERM,
                  theta=None, xi=None, x=None, features=None, c_beta=1.0, s0=0, backend=None):
    """Replicated (MLMC estimate, plain 2^levels average, MLMC length) triples from a fixed start."""
    levels = check_t_max(t_max)
    pclass = PolicyClass.tabular(mdp.n_states, mdp.n_actions)
    theta = np.zeros(pclass.dim) if theta is None else np.asarray(theta, dtype=float)
    features = features or reduced_one_hot_features(mdp.n_states)
    m = features.dim
    score = np.ascontiguousarray(pclass.score_table(theta))
    xi = np.zeros(m + 1) if xi is None else np.asarray(xi, dtype=float)
    dim = pclass.dim if mode in (kernels.NPG_DIRECTION, kernels.NPG_B_TERM) else m + 1
    x = np.zeros(dim) if x is None else np.asarray(x, dtype=float)
    out_mlmc = np.empty((reps, dim))
    out_batch = np.empty((reps, dim))
    out_len = np.empty(reps, dtype=np.int64)
    _kernel(kernels.mlmc_vs_batch, backend)(
        mode, policy_cdf(pclass, theta), mdp.transition_cdf, mdp.reward,
        np.ascontiguousarray(features.table), score, xi, x, float(c_beta), levels, int(s0), reps, rng,
        out_mlmc, out_batch, out_len)
    return out_mlmc, out_batch, out_len


def telescoping_check(mdp, t_max, reps, rng, backend=None, sigmas=3.0, **kw) -> list:
    est, batch, _ = mlmc_vs_batch(mdp, t_max, reps, rng, backend=backend, **kw)
    checks = []
    for i in range(est.shape[1]):
        diff = est[:, i].mean() - batch[:, i].mean()
        se = math.sqrt(est[:, i].var(ddof=1) / reps + batch[:, i].var(ddof=1) / reps)
        checks.append(Check(f"telescoping T_max={t_max} component {i}", float(diff), 0.0,
                            sigmas * se, abs(diff) <= sigmas * se + 1e-12))
    return checks


def sample_cost_check(t_max, draws, rng, rel_tol=0.02) -> Check:
    levels = check_t_max(t_max)
    q = rng.geometric(0.5, size=draws)
    lengths = np.where(q > levels, 1, np.left_shift(1, np.minimum(q, levels)))
    measured = float(lengths.mean())
    expected = expected_cost(t_max)
    return Check(f"sample cost T_max={t_max}", measured, expected, rel_tol * expected,
                 abs(measured - expected) <= rel_tol * expected)


def constant_reward_check(t_max, reps, rng, value=0.37, backend=None) -> Check:
    P = reference_mdp().transition
    mdp = TabularMdp(3, 2, np.full((3, 2), value), P, np.full(3, 1 / 3))
    est, _, _ = mlmc_vs_batch(mdp, t_max, reps, rng, backend=backend)
    vals = est[:, 0]
    se = float(vals.std(ddof=1) / math.sqrt(reps))
    diff = float(vals.mean() - value)
    return Check(f"constant reward T_max={t_max}", float(vals.mean()), value, 3 * se + 1e-12,
                 abs(diff) <= 3 * se + 1e-12)


def validate_mlmc(t_max_list=(8, 16, 32), reps=100_000, draws=1_000_000, seed=0, backend=None) -> list:
    """Telescoping identity, sample cost and constant-statistic checks on the reference MDP."""
    rng = make_rng(seed)
    mdp = reference_mdp()
    theta = np.array([0.3, -0.2, 0.5])
    checks = []
    for t in t_max_list:
        checks += telescoping_check(mdp, t, reps, rng, backend=backend, theta=theta)
    for t in t_max_list:
        checks.append(sample_cost_check(t, draws, rng))
    checks.append(constant_reward_check(t_max_list[0], min(reps, 10_000), rng, backend=backend))
    return checks


def noiseless_contraction_check(P=None, q=None, H=64) -> Check:
    """Per-step ||x_{h+1} - x*|| <= (1 - beta lambda) ||x_h - x*|| without noise."""
    if P is None:
        P, q = reference_system()
    lam = float(np.linalg.eigvalsh(P).min())
    beta = theorem2_step_size(H, lam)
    diag = run_recursion(RecursionSpec(H, beta, lambda h: (P, q), np.zeros(len(q))), reference=(P, q))
    dist = np.sqrt(diag.trajectory_norms)
    ratios = dist[1:] / dist[:-1]
    worst = float(ratios.max())
    bound = 1.0 - beta * lam
    return Check("noiseless contraction (worst per-step ratio)", worst, bound, 1e-12, worst <= bound + 1e-12)


def validate_linrec(seed=0, replicas=200, h_grid=None, slope_max=-0.8, floor_rel_tol=0.10) -> list:
    """Noiseless contraction, unbiased-noise decay slope and the injected q-bias floor."""
    h_grid = h_grid or [2**j for j in range(6, 13)]
    P, q = reference_system()
    rng = make_rng(seed)
    checks = [noiseless_contraction_check(P, q)]
    curve = second_moment_curve(P, q, h_grid, replicas, rng)
    fit = fit_power_law(h_grid, curve)
    checks.append(Check("unbiased-noise second-moment slope", fit.slope, slope_max, 0.0, fit.slope <= slope_max))
    delta = np.array([0.1, -0.05, 0.08, 0.02])
    measured, analytic = bias_floor_probe(P, q, delta, h_grid[-1], replicas, rng)
    rel = abs(measured - analytic) / analytic
    checks.append(Check("q-bias floor vs ||P^-1 delta||^2", measured, analytic, floor_rel_tol * analytic,
                        rel <= floor_rel_tol))
    return checks
