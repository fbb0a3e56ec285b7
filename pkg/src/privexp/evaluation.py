"""Calibration and utility experiments.

Calibration follows the simulate-then-infer recipe: draw theta from the
prior, data from the model, release, run inference, and record where the true
theta falls among the posterior samples. Under correct inference that quantile
is uniform, which a Kolmogorov-Smirnov test checks. Utility compares private
posterior samples to the non-private ones with an unbiased MMD estimate.

Only :func:`_simulate` touches raw data; inference methods receive the
:class:`~privexp.mechanisms.NoisyRelease` (the non-private reference and the
OPS baseline being the deliberate exceptions).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from . import rng as rngmod
from .errors import ConfigError, PrivexpError
from .expfam import Dataset, Family, HyperParams, nonprivate_posterior, posterior_draws, prior_from_dict, sample_prior
from .inference import Chain, naive_posterior, naive_update, run_gibbs
from .mechanisms import NoisyRelease, laplace_release, ops_release, release
from .truncation import Interval

log = logging.getLogger(__name__)

METHODS = ("gibbs", "naive", "ops", "nonprivate")
# substream index of each method inside a trial; data generation uses 0
_METHOD_STREAM = {"gibbs": 1, "naive": 2, "ops": 3, "nonprivate": 4}
_TASK_STREAM = {"calibration": 0, "utility": 1, "trace": 2}


# -- statistics --------------------------------------------------------------


def empirical_quantile(theta_true: float, samples) -> float:
    """Mid-rank position of ``theta_true`` among the samples, in (0, 1)."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2:
        raise ValueError("need at least two posterior samples")
    below = np.count_nonzero(samples < theta_true)
    ties = np.count_nonzero(samples == theta_true)
    return (below + 0.5 * ties + 0.5) / (samples.size + 1)


def ks_uniform(u_values) -> tuple[float, float]:
    """One-sample KS statistic against U(0, 1) and its asymptotic p-value."""
    u = np.sort(np.asarray(u_values, dtype=float).reshape(-1))
    m = u.size
    if m < 1:
        raise ValueError("need at least one value")
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("quantiles must lie in [0, 1]")
    i = np.arange(1, m + 1)
    d = float(max(np.max(i / m - u), np.max(u - (i - 1) / m)))
    p = float(special.kolmogorov(math.sqrt(m) * d))
    return d, p


def mmd2_unbiased(p_samples, q_samples, bandwidth: float = 1.0) -> float:
    """Unbiased MMD^2 with the Gaussian kernel exp(-(a - b)^2 / (2 h^2)).

    Diagonal terms are left out of every double sum, so identical inputs give
    a small negative value.
    """
    p = np.asarray(p_samples, dtype=float).reshape(-1)
    q = np.asarray(q_samples, dtype=float).reshape(-1)
    m = p.size
    if q.size != m:
        raise ValueError(f"sample sizes differ: {m} vs {q.size}")
    if m < 2:
        raise ValueError("need at least two samples per distribution")

    def gram(a, b):
        return np.exp(-0.5 * ((a[:, None] - b[None, :]) / bandwidth) ** 2)

    kpp, kqq, kpq = gram(p, p), gram(q, q), gram(p, q)
    off = ~np.eye(m, dtype=bool)
    # sum over i != j of k(p_i,p_j) + k(q_i,q_j) - k(p_i,q_j) - k(p_j,q_i)
    total = kpp[off].sum() + kqq[off].sum() - kpq[off].sum() - kpq.T[off].sum()
    return float(total / (m * (m - 1)))


def ecdf_mass(u_values, lo: float, hi: float) -> float:
    """Fraction of quantiles inside [lo, hi]."""
    u = np.asarray(u_values, dtype=float)
    return float(np.mean((u >= lo) & (u <= hi)))


def extreme_mass(u_values, tail: float = 0.1) -> float:
    """Fraction of quantiles below ``tail`` or above ``1 - tail``."""
    u = np.asarray(u_values, dtype=float)
    return float(np.mean((u < tail) | (u > 1 - tail)))


# -- convergence ---------------------------------------------------------------


def stabilization_iteration(trace, burnin: int, window: int = 100, tol_sd: float = 1.0) -> int | None:
    """Iteration at which the chain first reaches its stationary region.

    The reference mean and sd come from the post-burn-in samples. The trace is
    cut into consecutive windows of ``window`` iterations; the result is the
    start of the first window whose mean lies within ``tol_sd`` reference sds
    of the reference mean, or None if no window does.
    """
    trace = np.asarray(trace, dtype=float).reshape(-1)
    post = trace[burnin:]
    if post.size < 2:
        raise ValueError("need post-burn-in samples")
    ref, sd = post.mean(), post.std(ddof=1)
    n_win = trace.size // window
    means = trace[: n_win * window].reshape(n_win, window).mean(axis=1)
    hits = np.flatnonzero(np.abs(means - ref) <= tol_sd * sd)
    return int(hits[0]) * window if hits.size else None


def running_mean_drift(samples, block: int = 1000) -> float:
    """|mean(last block) - mean(previous block)| in units of the sample sd."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2 * block:
        raise ValueError(f"need at least {2 * block} samples")
    last, prev = samples[-block:], samples[-2 * block : -block]
    return float(abs(last.mean() - prev.mean()) / samples.std(ddof=1))


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationRecord:
    trial: int
    method: str
    n: int
    epsilon: float
    theta_true: float
    u: float

    def __post_init__(self):
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"quantile {self.u} outside [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``bounds_policy`` applies to families that need truncation:
    ``"true_quantiles"`` clips at the true parameter's ``bounds_mass`` central
    interval (recomputed per trial); ``"fixed"`` uses ``bounds`` as given.
    """

    prior: HyperParams
    n_grid: tuple = (1000,)
    eps_grid: tuple = (0.01,)
    trials: int = 200
    iters: int = 7000
    burnin: int = 2000
    seed: int = 0
    methods: tuple = ("gibbs", "naive", "nonprivate")
    bounds_policy: str = "true_quantiles"
    bounds_mass: float = 0.95
    bounds: tuple | None = None
    posterior_samples: int = 5000
    ops_samples: int = 100
    ops_a0: float = 0.1
    repetitions: int = 20
    mmd_samples: int = 500
    center_draw: str = "conditional"
    theta_true: tuple | None = None
    trace_runs: int = 20

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "eps_grid", tuple(float(e) for e in self.eps_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.n_grid or not self.eps_grid:
            raise ConfigError("n and epsilon grids must be nonempty")
        if any(n < 1 for n in self.n_grid) or any(not e > 0 for e in self.eps_grid):
            raise ConfigError("grid values must be positive")
        if not self.iters > self.burnin >= 0:
            raise ConfigError("need iters > burnin >= 0")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if "ops" in self.methods and self.family.name != "bernoulli":
            raise ConfigError("the ops baseline is only available for the bernoulli family")
        if self.bounds_policy not in ("true_quantiles", "fixed"):
            raise ConfigError(f"unknown bounds_policy {self.bounds_policy!r}")
        if self.bounds_policy == "fixed" and not self.family.bounded and self.bounds is None:
            raise ConfigError("bounds_policy 'fixed' needs 'bounds'")
        if not 0 < self.bounds_mass < 1:
            raise ConfigError("bounds_mass must lie in (0, 1)")
        if self.trials < 1 or self.repetitions < 1 or self.trace_runs < 1:
            raise ConfigError("trial counts must be positive")
        if self.posterior_samples < 2 or self.mmd_samples < 2:
            raise ConfigError("sample counts must be at least 2")

    @property
    def family(self) -> Family:
        return self.prior.family

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        prior = prior_from_dict({k: d.pop(k) for k in ("family", "k", "prior") if k in d})
        known = {f for f in cls.__dataclass_fields__ if f != "prior"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        for key in ("n_grid", "eps_grid", "methods"):
            if key in d and not isinstance(d[key], (list, tuple)):
                d[key] = [d[key]]
        if d.get("bounds") is not None:
            d["bounds"] = tuple(d["bounds"])
        if d.get("theta_true") is not None:
            d["theta_true"] = tuple(np.atleast_1d(d["theta_true"]).tolist())
        try:
            return cls(prior=prior, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: no such file") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("prior")
        out.update(self.prior.to_dict())
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)


# -- one trial -----------------------------------------------------------------


@dataclass
class TrialResult:
    records: list = field(default_factory=list)
    rejection_rate: float | None = None
    exhausted: int = 0
    failed: list = field(default_factory=list)


def _theta_true(config: ExperimentConfig, rng):
    if config.theta_true is not None:
        t = np.asarray(config.theta_true, dtype=float)
        return float(t[0]) if t.size == 1 else t
    return sample_prior(config.prior, rng)


def trial_bounds(config: ExperimentConfig, theta) -> Interval | None:
    """Truncation bounds for one trial (None for bounded families)."""
    family = config.family
    if family.bounded:
        return None
    if config.bounds_policy == "fixed":
        return Interval(*config.bounds)
    tail = 0.5 * (1.0 - config.bounds_mass)
    return Interval(family.quantile(theta, tail), family.quantile(theta, 1.0 - tail))


def _simulate(config: ExperimentConfig, n: int, eps: float, rng):
    theta = _theta_true(config, rng)
    data = Dataset(config.family, config.family.sample_data(theta, n, rng))
    rel = release(data, eps, rng, bounds=trial_bounds(config, theta))
    return theta, data, rel


def _naive_hp(config: ExperimentConfig, data: Dataset, rel: NoisyRelease, rng) -> HyperParams:
    if config.family.bounded:
        return naive_posterior(rel, config.prior)
    # the naive baseline is allowed to cheat: it sees the untruncated statistic
    # perturbed with noise at the truncated sensitivity
    s_full = data.family.suff_stats(data.values)
    y_full = laplace_release(s_full, rel.delta_s, rel.epsilon, rng)
    return naive_update(config.prior, y_full, rel.n)


def _first(family: Family, draws) -> np.ndarray:
    draws = np.asarray(draws, dtype=float)
    return draws[:, 0] if draws.ndim == 2 else draws


def _method_samples(config, method, theta, data, rel, rng, size) -> tuple[np.ndarray, Chain | None]:
    """Scalar posterior samples (first parameter) for one method."""
    family = config.family
    if method == "gibbs":
        chain = run_gibbs(rel, config.prior, config.iters, config.burnin, rng, **_gibbs_kwargs(config))
        return _first(family, chain.samples), chain
    if method == "naive":
        return _first(family, posterior_draws(_naive_hp(config, data, rel, rng), size, rng)), None
    if method == "nonprivate":
        return _first(family, posterior_draws(nonprivate_posterior(data, config.prior), size, rng)), None
    if method == "ops":
        return ops_release(data, rel.epsilon, config.prior, rng, config.ops_samples, config.ops_a0), None
    raise ConfigError(f"unknown method {method!r}")


def _gibbs_kwargs(config):
    return {} if config.family.bounded else {"center_draw": config.center_draw}


def _cell_rng(config, task, i_n, i_eps, index, *more):
    return rngmod.make_rng(config.seed, _TASK_STREAM[task], i_n, i_eps, index, *more)


def calibration_trial(config: ExperimentConfig, trial_index: int, i_n: int = 0, i_eps: int = 0) -> TrialResult:
    """One simulate-release-infer round at grid cell (i_n, i_eps)."""
    n, eps = config.n_grid[i_n], config.eps_grid[i_eps]
    out = TrialResult()
    theta, data, rel = _simulate(config, n, eps, _cell_rng(config, "calibration", i_n, i_eps, trial_index, 0))
    theta1 = config.family.first_param(theta)
    for method in config.methods:
        rng = _cell_rng(config, "calibration", i_n, i_eps, trial_index, _METHOD_STREAM[method])
        try:
            samples, chain = _method_samples(config, method, theta, data, rel, rng, config.posterior_samples)
        except (PrivexpError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d method %s failed: %s", trial_index, method, exc)
            out.failed.append(method)
            continue
        if chain is not None:
            out.rejection_rate = chain.rejection_rate
            out.exhausted = chain.exhausted
        u = empirical_quantile(theta1, samples)
        out.records.append(CalibrationRecord(trial_index, method, n, eps, theta1, u))
    return out


def _thin(samples: np.ndarray, m: int) -> np.ndarray:
    idx = np.linspace(0, samples.size - 1, m).round().astype(int)
    return samples[idx]


def utility_trial(config: ExperimentConfig, rep: int, i_n: int = 0, i_eps: int = 0) -> dict:
    """MMD^2 of each private method's posterior against the non-private one."""
    n, eps = config.n_grid[i_n], config.eps_grid[i_eps]
    m = config.mmd_samples
    theta, data, rel = _simulate(config, n, eps, _cell_rng(config, "utility", i_n, i_eps, rep, 0))
    ref_rng = _cell_rng(config, "utility", i_n, i_eps, rep, _METHOD_STREAM["nonprivate"])
    reference, _ = _method_samples(config, "nonprivate", theta, data, rel, ref_rng, m)
    out = {}
    for method in config.methods:
        if method == "nonprivate":
            continue
        rng = _cell_rng(config, "utility", i_n, i_eps, rep, _METHOD_STREAM[method])
        samples, _ = _method_samples(config, method, theta, data, rel, rng, m)
        # chains and OPS return their own sample counts
        if samples.size != m:
            samples = _thin(samples, m)
        out[method] = mmd2_unbiased(samples, reference)
    return out


def trace_run(config: ExperimentConfig, run: int, i_n: int = 0, i_eps: int = 0) -> tuple[float, NoisyRelease, Chain]:
    """One seeded Gibbs run for convergence traces."""
    n, eps = config.n_grid[i_n], config.eps_grid[i_eps]
    theta, _, rel = _simulate(config, n, eps, _cell_rng(config, "trace", i_n, i_eps, run, 0))
    rng = _cell_rng(config, "trace", i_n, i_eps, run, _METHOD_STREAM["gibbs"])
    chain = run_gibbs(rel, config.prior, config.iters, config.burnin, rng, **_gibbs_kwargs(config))
    return config.family.first_param(theta), rel, chain


# -- experiment runner -----------------------------------------------------------


def _cells(config):
    return [(i, j) for i in range(len(config.n_grid)) for j in range(len(config.eps_grid))]


def _call(args):
    fn, config, index, i_n, i_eps = args
    return fn(config, index, i_n, i_eps)


def _map(fn, config, count, jobs):
    """Apply ``fn`` to every (cell, index); results come back in a fixed order."""
    tasks = [(fn, config, k, i, j) for i, j in _cells(config) for k in range(count)]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_call, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    return [_call(t) for t in tasks]


@dataclass
class CalibrationSummary:
    records: list
    cells: list
    diagnostics: dict


def run_calibration(config: ExperimentConfig, jobs: int = 1) -> CalibrationSummary:
    results = _map(calibration_trial, config, config.trials, jobs)
    records = [r for res in results for r in res.records]
    cells = []
    for n in config.n_grid:
        for eps in config.eps_grid:
            for method in config.methods:
                u = [r.u for r in records if r.method == method and r.n == n and r.epsilon == eps]
                d, p = ks_uniform(u) if u else (float("nan"), float("nan"))
                cells.append(
                    {
                        "method": method,
                        "n": n,
                        "epsilon": eps,
                        "trials": len(u),
                        "failures": config.trials - len(u),
                        "D": d,
                        "p": p,
                        "middle_mass": ecdf_mass(u, 0.25, 0.75) if u else float("nan"),
                        "extreme_mass": extreme_mass(u) if u else float("nan"),
                    }
                )
    rates = [res.rejection_rate for res in results if res.rejection_rate is not None]
    diagnostics = {
        "max_rejection_rate": max(rates) if rates else 0.0,
        "mean_rejection_rate": float(np.mean(rates)) if rates else 0.0,
        "exhausted": int(sum(res.exhausted for res in results)),
        "failed": int(sum(len(res.failed) for res in results)),
    }
    return CalibrationSummary(records, cells, diagnostics)


def run_utility(config: ExperimentConfig, jobs: int = 1) -> list[dict]:
    results = _map(utility_trial, config, config.repetitions, jobs)
    rows = []
    tasks = [(i, j, k) for i, j in _cells(config) for k in range(config.repetitions)]
    for (i, j, k), res in zip(tasks, results):
        for method, value in res.items():
            rows.append({"method": method, "n": config.n_grid[i], "epsilon": config.eps_grid[j], "rep": k, "mmd2": value})
    return rows


def utility_medians(rows: list[dict]) -> list[dict]:
    keys = sorted({(r["method"], r["n"], r["epsilon"]) for r in rows})
    out = []
    for method, n, eps in keys:
        vals = [r["mmd2"] for r in rows if (r["method"], r["n"], r["epsilon"]) == (method, n, eps)]
        out.append({"method": method, "n": n, "epsilon": eps, "median_mmd2": float(np.median(vals))})
    return out


def run_traces(config: ExperimentConfig, jobs: int = 1) -> list[tuple[float, NoisyRelease, Chain]]:
    return _map(trace_run, config, config.trace_runs, jobs)


def trace_summary(theta_true: float, chain: Chain, window: int = 100) -> dict:
    samples = chain.samples if chain.samples.ndim == 1 else chain.samples[:, 0]
    trace = chain.theta if chain.theta.ndim == 1 else chain.theta[:, 0]
    mean, sd = float(samples.mean()), float(samples.std(ddof=1))
    return {
        "theta_true": theta_true,
        "posterior_mean": mean,
        "posterior_sd": sd,
        "z": abs(mean - theta_true) / sd,
        "stabilized_at": stabilization_iteration(trace, chain.burnin, window),
        # last two 1000-sample blocks of the retained chain, in posterior sds
        "drift": running_mean_drift(samples) if samples.size >= 2000 else None,
        "rejection_rate": chain.rejection_rate,
    }


def _fmt(x) -> str:
    # fixed repr keeps csv bytes stable across platforms
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(row[h]) for h in header])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, obj) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_chain(path: Path, chain: Chain, include_burnin: bool = False) -> None:
    """NDJSON, one object per iteration: {iter, theta, s, sigma2}."""
    start = 0 if include_burnin else chain.burnin
    with open(path, "w") as fh:
        for t in range(start, chain.iters):
            rec = {
                "iter": t,
                "theta": np.asarray(chain.theta[t]).tolist(),
                "s": chain.s[t].tolist(),
                "sigma2": chain.sigma2[t].tolist(),
            }
            if chain.s_center is not None:
                rec["s_center"] = chain.s_center[t].tolist()
            fh.write(json.dumps(rec) + "\n")


def run_experiment(config: ExperimentConfig, out_dir, tasks=("calibration",), jobs: int = 1) -> dict:
    """Run the requested tasks and write their tables under ``out_dir``.

    Returns the summary dict (also written to summary.json). Wall-clock times
    go to timing.json so every other file is byte-reproducible.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    summary = {"config": config.to_dict(), "config_hash": config.digest()}
    timing = {}

    if "calibration" in tasks:
        t0 = time.perf_counter()
        cal = run_calibration(config, jobs)
        timing["calibration_seconds"] = time.perf_counter() - t0
        write_csv(out / "calibration.csv", ["method", "n", "epsilon", "trials", "failures", "D", "p", "middle_mass", "extreme_mass"], cal.cells)
        write_csv(
            out / "ecdf.csv",
            ["method", "n", "epsilon", "trial", "theta_true", "u"],
            [asdict(r) for r in cal.records],
        )
        summary["calibration"] = cal.cells
        summary["diagnostics"] = cal.diagnostics

    if "utility" in tasks:
        t0 = time.perf_counter()
        rows = run_utility(config, jobs)
        timing["utility_seconds"] = time.perf_counter() - t0
        write_csv(out / "utility.csv", ["method", "n", "epsilon", "rep", "mmd2"], rows)
        summary["utility"] = utility_medians(rows)
        if not config.family.bounded:
            summary["utility_note"] = "non-conclusive: truncation changes the released statistic"

    if "trace" in tasks:
        t0 = time.perf_counter()
        runs = run_traces(config, jobs)
        timing["trace_seconds"] = time.perf_counter() - t0
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        rows = []
        cells = [(i, j, k) for i, j in _cells(config) for k in range(config.trace_runs)]
        for (i, j, k), (theta, rel, chain) in zip(cells, runs):
            name = f"trace_n{config.n_grid[i]}_eps{config.eps_grid[j]:g}_run{k}.ndjson"
            write_chain(tdir / name, chain, include_burnin=True)
            rows.append({"n": config.n_grid[i], "epsilon": config.eps_grid[j], "run": k} | trace_summary(theta, chain))
        write_csv(
            out / "traces.csv",
            ["n", "epsilon", "run", "theta_true", "posterior_mean", "posterior_sd", "z", "stabilized_at", "drift", "rejection_rate"],
            rows,
        )
        summary["traces"] = rows

    write_json(out / "summary.json", summary)
    write_json(out / "timing.json", timing | {"jobs": jobs, "cpus": os.cpu_count()})
    return summary
