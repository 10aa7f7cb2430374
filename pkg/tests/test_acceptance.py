"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see conftest.py).
Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import numpy as np
import pytest
from scipy import integrate, stats

from deepssm import autodiff as ad
from deepssm import cli
from deepssm import evaluation as ev
from deepssm import forecast as fc
from deepssm import model as mdl
from deepssm import training as tr
from deepssm.autodiff import Tensor
from deepssm.data import TimeSeriesDataset
from deepssm.synthetic import random_walk_dataset, relevance_dataset, seasonal_dataset, write_csv

import oracle
from helpers import toy_problem

RESULTS: dict[int, str] = {}
_T0 = time.perf_counter()

# small networks keep the trained criteria inside the runtime budget
SMALL = dict(n_z=4, n_h=16, n_nn=16, K=2)


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


def standardized(ds):
    out, _, _ = ev.standardize_dataset(ds)
    return out


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        params, window, noise = toy_problem(seed=seed, K=2, B=1, W=8)
        names = params.names()
        w = params.bind(requires_grad=True)

        def f(*leaves):
            return tr.elbo_sgvb(params, window, 2, noise=noise, weights=dict(zip(names, leaves)))

        worst = max(worst, ad.finite_diff_check(f, [w[n] for n in names], step=1e-5))
    dt = time.perf_counter() - t0
    record(1, worst < 1e-4 and dt < 30, f"max rel. err {worst:.2e} (< 1e-4), {dt:.1f}s (< 30s)")


def test_criterion_2_kl_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        mq, mp = rng.uniform(-2, 2, (2, 3))
        sq, sp = np.exp(rng.uniform(np.log(0.3), np.log(3.0), (2, 3)))
        closed = tr.kl_diag_gaussian(Tensor(mq), Tensor(sq), Tensor(mp), Tensor(sp)).item()
        y = mq + sq * rng.standard_normal((10**6, 3))
        mc = np.mean(np.sum(stats.norm.logpdf(y, mq, sq) - stats.norm.logpdf(y, mp, sp), axis=1))
        worst = max(worst, abs(closed - mc) / abs(mc))
    record(2, worst < 0.01, f"worst relative gap to 1e6-draw Monte Carlo {worst:.4%} over 20 pairs (< 1%)")


def test_criterion_3_crps_oracle():
    rng = np.random.default_rng(7)
    worst_mc = worst_int = 0.0
    for _ in range(10):
        mu, sigma, x = rng.uniform(-3, 3), rng.uniform(0.2, 3), rng.uniform(-4, 4)
        draws = rng.normal(mu, sigma, 10**5)
        sample = ev.crps_sample(draws, x)
        closed = ev.crps_gaussian_closed_form(mu, sigma, x)
        worst_mc = max(worst_mc, abs(sample - closed) / closed)
        f = lambda y: (stats.norm.cdf(y, mu, sigma) - (y >= x)) ** 2
        gauss_int = integrate.quad(f, -np.inf, x, epsabs=1e-12)[0] + integrate.quad(f, x, np.inf, epsabs=1e-12)[0]
        step_int = oracle.crps_integral(draws, x)
        worst_int = max(worst_int, abs(closed - gauss_int) / gauss_int, abs(sample - step_int) / step_int)
    ok = worst_mc < 0.005 and worst_int < 1e-3
    record(3, ok, f"sample vs closed form {worst_mc:.3%} (< 0.5%); vs numeric integral {worst_int:.1e} (< 1e-3)")


def test_criterion_4_relevance_selection():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(3):
        ds = standardized(relevance_dataset(n=2000, seed=seed))
        cfg = mdl.ModelConfig(M=1, D=6, **SMALL)
        params, _ = tr.train(ds, cfg, tr.TrainConfig(window=48, batch_size=4, iterations=1000, seed=seed))
        w = mdl.ard_weights(params.bind(), cfg).data
        ratios.append(w[3:].mean() / w[:3].mean())
    dt = time.perf_counter() - t0
    hits = sum(r < 0.5 for r in ratios)
    detail = f"noise/informative weight ratios {np.round(ratios, 3).tolist()} (< 0.5 on 3/3: {hits}/3), {dt:.0f}s (< 300s)"
    record(4, hits == 3 and dt < 300, detail)


RW_ITERATIONS = 2000


def test_criterion_5_uncertainty_growth():
    n, tau = 1000, 48
    raw = random_walk_dataset(n=n, seed=0)
    ds = standardized(TimeSeriesDataset(raw.x, raw.u, n - tau))
    cfg = mdl.ModelConfig(M=1, D=1, **SMALL)
    params, _ = tr.train(ds, cfg, tr.TrainConfig(window=48, batch_size=4, iterations=RW_ITERATIONS, seed=0))
    spec = fc.ExogenousSpec.known(ds.u[ds.T : ds.T + tau])
    res = fc.monte_carlo_forecast(params, ds, spec, tau, S=1000, seed=0)
    sd = res.samples[:, :, 0].std(axis=0)
    rho = stats.spearmanr(np.arange(1, tau + 1), sd).statistic
    record(5, rho > 0.9, f"Spearman rho(horizon, std) = {rho:.3f} over tau={tau} (> 0.9); std {sd[0]:.3f} -> {sd[-1]:.3f}")


# trained seasonal models are shared by criteria 6 and 7
_SEASONAL: dict[int, tuple] = {}
SEASON_TAU = 24


def seasonal_model(seed):
    if seed not in _SEASONAL:
        n = 2000
        raw = seasonal_dataset(n=n, period=24, seed=seed)
        ds = standardized(TimeSeriesDataset(raw.x, raw.u, n - 4 * SEASON_TAU, raw.x_names, raw.u_names))
        cfg = mdl.ModelConfig(M=1, D=raw.D, **SMALL)
        params, _ = tr.train(ds, cfg, tr.TrainConfig(window=48, batch_size=4, iterations=600, seed=seed))
        _SEASONAL[seed] = (params, ds)
    return _SEASONAL[seed]


def test_criterion_6_forecast_skill():
    t0 = time.perf_counter()
    gains = []
    for seed in range(3):
        params, ds = seasonal_model(seed)
        model = ev.rolling_window_evaluate(fc.model_forecaster(params, 500, seed), ds, SEASON_TAU, 4)

        def naive(history, horizon, window, seed=seed):
            rng = np.random.default_rng([seed, window])
            return ev.seasonal_naive_baseline(history.x[: history.T], 24, horizon, 500, rng)

        base = ev.rolling_window_evaluate(naive, ds, SEASON_TAU, 4)
        gains.append(1.0 - model.mean / base.mean)
    dt = time.perf_counter() - t0
    hits = sum(g >= 0.10 for g in gains)
    detail = f"CRPS improvement over seasonal naive {np.round(gains, 3).tolist()} (>= 10% on 2/3: {hits}/3), {dt:.0f}s (< 300s)"
    record(6, hits >= 2 and dt < 300, detail)


def test_criterion_7_exogenous_uncertainty():
    params, ds = seasonal_model(0)
    center = ds.u[ds.T : ds.T + SEASON_TAU]
    driver = [name == "temp" for name in ds.u_names]
    runs = {}
    for label, spec in (("known", fc.ExogenousSpec.known(center)), ("ramp", fc.ExogenousSpec.linear_ramp(center, driver, 1.0))):
        runs[label] = fc.monte_carlo_forecast(params, ds, spec, SEASON_TAU, S=1000, seed=11).samples[:, -1, 0].var()
    ok = runs["ramp"] > runs["known"]
    record(7, ok, f"final-step variance {runs['known']:.4f} (no uncertainty) -> {runs['ramp']:.4f} (0..1 ramp on temp)")


def test_criterion_8_determinism(tmp_path):
    write_csv(seasonal_dataset(n=400, seed=1), tmp_path / "data.csv", horizon_blank=24)
    cfg = {
        "seed": 3,
        "data": {"path": "data.csv", "time_features": ["hour_of_day"]},
        "model": {"n_h": 8, "n_z": 2, "n_nn": 8, "K": 2},
        "train": {"window": 24, "batch_size": 2, "iterations": 40},
        "forecast": {"horizon": 24, "trials": 400, "exogenous": {"temp": {"kind": "gaussian"}}},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    blobs = []
    for _ in range(2):
        assert cli.main(["train", "--config", str(path)]) == 0
        blobs.append([(tmp_path / "out" / f).read_bytes() for f in ("loss_history.csv", "model.ckpt")])
    same_train = blobs[0] == blobs[1]
    exports = []
    for workers in (1, 4):
        cfg["forecast"]["workers"] = workers
        path.write_text(json.dumps(cfg))
        out = f"fc{workers}"
        assert cli.main(["forecast", "--config", str(path), "--out", out, "--checkpoint", str(tmp_path / "out" / "model.ckpt")]) == 0
        exports.append((tmp_path / out / "forecast_quantiles.csv").read_bytes())
    same_fc = exports[0] == exports[1]
    record(8, same_train and same_fc, f"train reruns bit-identical: {same_train}; parallel == sequential export: {same_fc}")


def test_criterion_9_total_runtime():
    missing = [n for n in range(1, 9) if n not in RESULTS]
    dt = time.perf_counter() - _T0
    if missing:
        pytest.skip(f"criteria {missing} were not run; total runtime needs the full suite")
    record(9, dt < 900, f"acceptance suite took {dt:.0f}s (< 900s)")
