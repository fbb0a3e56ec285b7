import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from privexp import rng as R
from privexp.errors import ConfigError
from privexp.evaluation import (
    CalibrationRecord,
    ExperimentConfig,
    calibration_trial,
    ecdf_mass,
    empirical_quantile,
    extreme_mass,
    ks_uniform,
    mmd2_unbiased,
    run_calibration,
    run_experiment,
    running_mean_drift,
    stabilization_iteration,
    trial_bounds,
    utility_trial,
)
from privexp.expfam import Bernoulli, Exponential, HyperParams

BERN_CFG = {"family": "binomial", "prior": {"alpha": 1, "beta": 1}}


def _config(**kw):
    return ExperimentConfig.from_dict(BERN_CFG | kw)


# -- quantiles and KS ------------------------------------------------------------


def test_empirical_quantile_extremes():
    samples = np.linspace(1, 2, 99)
    assert empirical_quantile(0.0, samples) == pytest.approx(0.5 / 100)
    assert empirical_quantile(3.0, samples) == pytest.approx(99.5 / 100)
    assert empirical_quantile(1.5, [1.0, 1.5, 2.0]) == pytest.approx((1 + 0.5 + 0.5) / 4)
    with pytest.raises(ValueError):
        empirical_quantile(0.0, [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=50), st.floats(-11, 11), st.floats(-11, 11))
def test_empirical_quantile_monotone(samples, a, b):
    lo, hi = min(a, b), max(a, b)
    assert empirical_quantile(lo, samples) <= empirical_quantile(hi, samples)
    assert 0 < empirical_quantile(lo, samples) < 1


def test_empirical_quantile_uniform_under_exchangeability():
    g = R.make_rng(70)
    u = [empirical_quantile(g.random(), g.random(100)) for _ in range(10**4)]
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_ks_examples():
    assert ks_uniform([0.5])[0] == 0.5
    m = 40
    d, _ = ks_uniform((np.arange(1, m + 1) - 0.5) / m)
    assert d == pytest.approx(0.5 / m)
    with pytest.raises(ValueError):
        ks_uniform([0.2, 1.3])
    with pytest.raises(ValueError):
        ks_uniform([])


def test_ks_matches_scipy_on_random_input():
    u = R.make_rng(71).random(200)
    d, p = ks_uniform(u)
    ref = stats.kstest(u, "uniform", method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-15)
    assert p == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_null_behaviour():
    g = R.make_rng(72)
    ds, ps = zip(*(ks_uniform(g.random(10**4)) for _ in range(200)))
    assert max(ds) < 0.02
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_ecdf_fractions():
    u = [0.05, 0.3, 0.5, 0.74, 0.95]
    assert ecdf_mass(u, 0.25, 0.75) == 0.6
    assert extreme_mass(u) == 0.4


# -- MMD ---------------------------------------------------------------------------


def test_mmd_identical_sets():
    p = R.make_rng(73).normal(size=300)
    v = mmd2_unbiased(p, p)
    assert v <= 0 and abs(v) < 2 / 300


def test_mmd_null_and_separation():
    g = R.make_rng(74)
    null = [abs(mmd2_unbiased(g.normal(size=500), g.normal(size=500))) for _ in range(100)]
    assert np.mean(np.array(null) < 0.01) >= 0.95
    assert mmd2_unbiased(g.normal(size=500), g.normal(3.0, 1.0, 500)) > 0.5


def test_mmd_symmetric_and_checked():
    g = R.make_rng(75)
    p, q = g.normal(size=50), g.normal(0.5, 1.0, 50)
    assert mmd2_unbiased(p, q) == mmd2_unbiased(q, p)
    with pytest.raises(ValueError):
        mmd2_unbiased(p, q[:-1])
    with pytest.raises(ValueError):
        mmd2_unbiased([1.0], [2.0])


def test_mmd_matches_explicit_double_sum():
    g = R.make_rng(76)
    p, q = g.normal(size=12), g.normal(1.0, 2.0, 12)
    k = lambda a, b: np.exp(-((a - b) ** 2) / 2)
    m = len(p)
    total = sum(k(p[i], p[j]) + k(q[i], q[j]) - k(p[i], q[j]) - k(p[j], q[i]) for i in range(m) for j in range(m) if i != j)
    assert mmd2_unbiased(p, q) == pytest.approx(total / (m * (m - 1)), rel=1e-12)


# -- probability integral transform ---------------------------------------------


def test_exponential_cdf_of_own_draws_is_uniform():
    fam = Exponential()
    eta = fam.natural_params(1.7)
    x = fam.sample_data(1.7, 10**5, R.make_rng(77))
    u = np.array([fam.cdf(v, eta) for v in x])
    assert stats.kstest(u, "uniform").pvalue > 0.01


# -- convergence helpers ----------------------------------------------------------


def test_stabilization_iteration():
    g = R.make_rng(78)
    flat = g.normal(0.0, 1.0, 3000)
    assert stabilization_iteration(flat, 1000) == 0
    transient = np.concatenate([np.full(300, 10.0), g.normal(0.0, 1.0, 2700)])
    assert stabilization_iteration(transient, 1000) == 300
    assert stabilization_iteration(np.concatenate([[1e6] * 100, [0.0, 1.0] * 50]), 100, window=100) == 100
    with pytest.raises(ValueError):
        stabilization_iteration([1.0, 2.0], 2)


def test_running_mean_drift():
    x = np.concatenate([np.zeros(1000), np.ones(1000)])
    assert running_mean_drift(x) == pytest.approx(1 / x.std(ddof=1))
    with pytest.raises(ValueError):
        running_mean_drift(np.zeros(1999))


# -- configuration -----------------------------------------------------------------


def test_config_defaults_and_round_trip():
    cfg = _config()
    assert cfg.trials == 200 and cfg.iters == 7000 and cfg.burnin == 2000
    assert cfg.posterior_samples == 5000 and cfg.mmd_samples == 500 and cfg.ops_samples == 100
    assert isinstance(cfg.family, Bernoulli)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg.with_overrides(seed=5).seed == 5
    assert cfg.with_overrides(seed=None).seed == cfg.seed


@pytest.mark.parametrize(
    "bad",
    [
        {"n_grid": []},
        {"eps_grid": [0.0]},
        {"iters": 100, "burnin": 100},
        {"methods": ["gibbs", "magic"]},
        {"trials": 0},
        {"colour": "red"},
        {"bounds_policy": "guess"},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        _config(**bad)


def test_config_rejects_ops_for_other_families():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"family": "exponential", "prior": {"shape": 2, "rate": 2}, "methods": ["ops"]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"family": "exponential", "prior": {"shape": 2, "rate": 2}, "bounds_policy": "fixed"})


def test_calibration_record_range():
    with pytest.raises(ValueError):
        CalibrationRecord(0, "gibbs", 10, 1.0, 0.3, 1.5)


def test_trial_bounds_policies():
    cfg = ExperimentConfig.from_dict({"family": "exponential", "prior": {"shape": 2, "rate": 2}})
    iv = trial_bounds(cfg, 2.0)
    fam = Exponential()
    assert iv.v == pytest.approx(fam.quantile(2.0, 0.025)) and iv.w == pytest.approx(fam.quantile(2.0, 0.975))
    fixed = cfg.with_overrides(bounds_policy="fixed", bounds=[0.1, 1.5])
    assert (trial_bounds(fixed, 2.0).v, trial_bounds(fixed, 2.0).w) == (0.1, 1.5)
    assert trial_bounds(_config(), 0.3) is None


# -- trials and runs ---------------------------------------------------------------


def test_calibration_trial_is_reproducible_and_complete():
    cfg = _config(methods=["gibbs", "naive", "ops", "nonprivate"], iters=400, burnin=100, posterior_samples=300)
    a = calibration_trial(cfg, 3)
    b = calibration_trial(cfg, 3)
    assert a.records == b.records
    assert [r.method for r in a.records] == ["gibbs", "naive", "ops", "nonprivate"]
    assert len({r.theta_true for r in a.records}) == 1
    assert calibration_trial(cfg, 4).records[0].theta_true != a.records[0].theta_true


def test_trial_streams_do_not_depend_on_trial_count():
    small = _config(trials=3, iters=300, burnin=100, posterior_samples=100)
    large = small.with_overrides(trials=6)
    assert run_calibration(small).records == run_calibration(large).records[: 3 * 3]


def test_run_totals_per_cell():
    cfg = _config(n_grid=[10, 100], eps_grid=[0.1, 1.0], trials=4, iters=300, burnin=100, posterior_samples=100)
    summary = run_calibration(cfg)
    assert len(summary.cells) == 2 * 2 * 3
    for cell in summary.cells:
        assert cell["trials"] + cell["failures"] == 4
    assert len(summary.records) == 4 * 4 * 3 - sum(c["failures"] for c in summary.cells)


def test_utility_trial_reports_private_methods():
    cfg = _config(iters=600, burnin=100, mmd_samples=100)
    out = utility_trial(cfg, 0)
    assert set(out) == {"gibbs", "naive"}
    assert out == utility_trial(cfg, 0)


def test_exponential_trial_runs():
    cfg = ExperimentConfig.from_dict(
        {"family": "exponential", "prior": {"shape": 2, "rate": 2}, "iters": 300, "burnin": 100, "posterior_samples": 100}
    )
    res = calibration_trial(cfg, 0)
    assert [r.method for r in res.records] == ["gibbs", "naive", "nonprivate"]
    assert res.rejection_rate is not None and res.rejection_rate < 0.05


def _read(path):
    return path.read_bytes()


def test_run_experiment_outputs_are_deterministic(tmp_path):
    cfg = _config(
        methods=["gibbs", "naive", "ops", "nonprivate"],
        n_grid=[10, 100],
        trials=3,
        iters=300,
        burnin=100,
        posterior_samples=100,
        repetitions=2,
        mmd_samples=50,
        trace_runs=2,
        theta_true=[0.3],
    )
    tasks = ("calibration", "utility", "trace")
    run_experiment(cfg, tmp_path / "a", tasks=tasks)
    run_experiment(cfg, tmp_path / "b", tasks=tasks)
    run_experiment(cfg, tmp_path / "c", tasks=tasks, jobs=2)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert {str(f) for f in files} >= {"calibration.csv", "ecdf.csv", "utility.csv", "traces.csv", "summary.json", "timing.json"}
    for f in files:
        if f.name == "timing.json":
            continue
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "b" / f), f
        assert _read(tmp_path / "a" / f) == _read(tmp_path / "c" / f), f
    with open(tmp_path / "a" / "calibration.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 4
    assert set(rows[0]) >= {"method", "n", "epsilon", "D", "p"}
    with open(tmp_path / "a" / "traces" / "trace_n10_eps0.01_run0.ndjson") as fh:
        lines = fh.readlines()
    assert len(lines) == 300 and json.loads(lines[0])["iter"] == 0
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config_hash"] == cfg.digest()


def test_exponential_utility_is_labelled(tmp_path):
    cfg = ExperimentConfig.from_dict(
        {"family": "exponential", "prior": {"shape": 2, "rate": 2}, "iters": 300, "burnin": 100, "repetitions": 1, "mmd_samples": 50}
    )
    summary = run_experiment(cfg, tmp_path, tasks=("utility",))
    assert "non-conclusive" in summary["utility_note"]


def test_prior_hyperparams_used():
    cfg = ExperimentConfig.from_dict({"family": "binomial", "prior": {"alpha": 2, "beta": 5}})
    assert cfg.prior == HyperParams(Bernoulli(), (2.0, 5.0))
