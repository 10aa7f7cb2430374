import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepssm import forecast as fc
from deepssm import model as mdl
from deepssm.data import TimeSeriesDataset
from deepssm.errors import ContractError, DimensionError

import oracle
from helpers import toy_problem

FLOOR_RAW = -800.0  # softplus(-800) underflows to 0 and is clamped to the floor
SCALE = 1e-4  # tanh(s v) / s is the identity to ~(s v)^2 / 3


def inv_softplus(c):
    return np.log(np.expm1(c))


def handmade(c=0.5, emit_u=False, M=1, D=1):
    """Model whose latent is a random walk with step std ``c`` and ``x = z`` (+ u)."""
    cfg = mdl.ModelConfig(M=M, D=D, n_z=1, n_h=1, n_nn=2, K=1)
    a = {k: np.zeros(s) for k, s in mdl.layer_shapes(cfg).items()}
    a["trans_mu.W1"][0, 0] = SCALE
    a["trans_mu.W2"][0, 0] = 1.0 / SCALE
    a["trans_sigma.b2"][:] = inv_softplus(c) if c > 0 else FLOOR_RAW
    a["emit_mean.W1"][0, 0] = SCALE
    a["emit_mean.W2"][0, :] = 1.0 / SCALE
    if emit_u:
        a["emit_mean.W1"][2, 1] = SCALE
        a["emit_mean.W2"][1, :] = 1.0 / SCALE
    a["emit_std.b2"][:] = FLOOR_RAW
    a["infer_sigma.b2"][:] = 0.0
    return mdl.ModelParams(cfg, a)


def history(T=20, M=1, D=1, horizon=0, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeriesDataset(rng.standard_normal((T, M)), rng.standard_normal((T + horizon, D)), T)


def test_sample_exogenous_known_returns_center():
    center = np.arange(12.0).reshape(4, 3)
    spec = fc.ExogenousSpec.known(center)
    rng = np.random.default_rng(0)
    for t in range(1, 5):
        np.testing.assert_array_equal(fc.sample_exogenous(spec, t, rng), center[t - 1])
    with pytest.raises(ContractError):
        fc.sample_exogenous(spec, 0, rng)
    with pytest.raises(ContractError):
        fc.sample_exogenous(spec, 5, rng)


def test_linear_ramp_schedule():
    center = np.ones((24, 2))
    spec = fc.ExogenousSpec.linear_ramp(center, [True, False], 1.0)
    np.testing.assert_allclose(spec.std[:, 0], np.linspace(0, 1, 24), rtol=1e-15)
    np.testing.assert_array_equal(spec.std[:, 1], 0.0)
    rng = np.random.default_rng(1)
    np.testing.assert_array_equal(fc.sample_exogenous(spec, 1, rng), center[0])
    draws = np.array([fc.sample_exogenous(spec, 24, rng) for _ in range(10**5)])
    np.testing.assert_allclose(draws[:, 0].std(), 1.0, rtol=0.02)
    np.testing.assert_array_equal(draws[:, 1], 1.0)
    per_var = fc.ExogenousSpec.linear_ramp(center, [True, True], [2.0, 0.5])
    np.testing.assert_array_equal(per_var.std[-1], [2.0, 0.5])


def test_exogenous_spec_validation():
    with pytest.raises(ContractError):
        fc.ExogenousSpec(("known",), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ContractError):
        fc.ExogenousSpec(("gaussian",), np.zeros((2, 1)), -np.ones((2, 1)))
    with pytest.raises(DimensionError):
        fc.ExogenousSpec(("known", "known"), np.zeros((2, 1)), np.zeros((2, 1)))


def test_warm_up_single_step_is_cold_start():
    params, _, _ = toy_problem(seed=0)
    x, u = np.array([[0.7]]), np.array([[0.1, -0.3]])
    warm = fc.warm_up(params, x, u)
    np.testing.assert_allclose(warm.h, oracle.gru(params.arrays, np.zeros(4), x[0]), rtol=1e-14)
    assert warm.T == 1
    np.testing.assert_array_equal(warm.x_last, x[0])


def test_warm_up_matches_reference():
    params, window, _ = toy_problem(seed=1)
    a, cfg = params.arrays, params.config
    x, u = window.x[0], window.u[0]
    warm = fc.warm_up(params, x, u)
    w = oracle.relevance(a, cfg.D)
    h, z = np.zeros(cfg.n_h), np.zeros(cfg.n_z)
    for t in range(x.shape[0]):
        h = oracle.gru(a, h, x[max(t - 1, 0)])
        z_prev = z
        z = oracle.mlp(a, "infer_mu", np.concatenate([z, x[t], h, w * u[t]]))
    np.testing.assert_allclose(warm.h, h, rtol=1e-13)
    np.testing.assert_allclose(warm.z_mean, z, rtol=1e-13)
    np.testing.assert_allclose(warm.prior_mu, oracle.mlp(a, "trans_mu", np.concatenate([z_prev, h])), rtol=1e-13)
    again = fc.warm_up(params, x, u)
    np.testing.assert_array_equal(again.h, warm.h)
    with pytest.raises(DimensionError):
        fc.warm_up(params, x, u[:-1])


def test_forecast_shape_and_start():
    params = handmade()
    ds = history(T=30, horizon=5)
    res = fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.known(ds.u[30:35]), 5, S=50, seed=0)
    assert res.samples.shape == (50, 5, 1)
    assert res.start == 30 and res.S == 50 and res.horizon == 5
    assert set(res.quantiles) == set(fc.DEFAULT_LEVELS)
    assert res.quantiles[0.5].shape == (5, 1)
    with pytest.raises(DimensionError):
        fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.known(ds.u[30:34]), 5, S=5)


def test_collapsed_model_gives_one_path():
    params = handmade(c=0.0)
    params.arrays["trans_mu.b2"][:] = 1.0
    params.arrays["emit_mean.b2"][:] = 2.0
    ds = history(T=15, horizon=6)
    res = fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.known(ds.u[15:21]), 6, S=200, seed=3)
    np.testing.assert_array_equal(res.samples, np.broadcast_to(res.samples[:1], res.samples.shape))
    assert np.all(np.ptp(res.samples, axis=0) == 0)


def test_random_walk_variance_grows_linearly():
    c = 0.5
    params = handmade(c=c)
    ds = history(T=10, horizon=20)
    res = fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.known(ds.u[10:30]), 20, S=10**4, seed=5)
    var = res.samples[:, :, 0].var(axis=0)
    steps = np.arange(1, 21)
    slope = np.polyfit(steps, var, 1)[0]
    np.testing.assert_allclose(slope, c * c, rtol=0.1)
    np.testing.assert_allclose(var[0], 2 * c * c, rtol=0.1)
    sd = np.sqrt(var)
    assert np.corrcoef(np.argsort(np.argsort(sd)), steps)[0, 1] > 0.9


def test_exogenous_uncertainty_widens_forecast():
    params = handmade(c=0.1, emit_u=True)
    ds = history(T=10, horizon=12)
    center = ds.u[10:22]
    known = fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.known(center), 12, S=2000, seed=1)
    ramp = fc.monte_carlo_forecast(params, ds, fc.ExogenousSpec.linear_ramp(center, [True], 1.0), 12, S=2000, seed=1)
    v0, v1 = known.samples[:, -1, 0].var(), ramp.samples[:, -1, 0].var()
    assert v1 > v0
    np.testing.assert_allclose(v1 - v0, 1.0, rtol=0.1)
    # first step carries no exogenous noise
    np.testing.assert_allclose(ramp.samples[:, 0], known.samples[:, 0], rtol=1e-12)


def test_parallel_equals_sequential():
    params, _, _ = toy_problem(seed=2)
    ds = history(T=12, D=2, horizon=4, seed=1)
    spec = fc.ExogenousSpec.linear_ramp(ds.u[12:16], [True, False], 0.5)
    seq = fc.monte_carlo_forecast(params, ds, spec, 4, S=300, seed=11, workers=1)
    par = fc.monte_carlo_forecast(params, ds, spec, 4, S=300, seed=11, workers=4)
    np.testing.assert_array_equal(seq.samples, par.samples)
    for q in seq.levels:
        np.testing.assert_array_equal(seq.quantiles[q], par.quantiles[q])


def test_trials_have_independent_streams():
    params, _, _ = toy_problem(seed=3)
    ds = history(T=12, D=2, horizon=3, seed=2)
    spec = fc.ExogenousSpec.known(ds.u[12:15])
    big = fc.monte_carlo_forecast(params, ds, spec, 3, S=200, seed=4).samples
    small = fc.monte_carlo_forecast(params, ds, spec, 3, S=20, seed=4).samples
    # trial i does not depend on how many other trials run
    np.testing.assert_allclose(small, big[:20], rtol=1e-12, atol=1e-14)
    other = fc.monte_carlo_forecast(params, ds, spec, 3, S=20, seed=5).samples
    assert not np.allclose(other, small)


def test_quantile_examples():
    q = fc.summarize_quantiles(np.arange(1.0, 101.0), [0.5])
    assert q[0.5] == 50.5
    one = np.array([[[3.0], [4.0]]])
    for v in fc.summarize_quantiles(one, fc.DEFAULT_LEVELS).values():
        np.testing.assert_array_equal(v, one[0])
    with pytest.raises(ContractError):
        fc.summarize_quantiles(one, [])
    with pytest.raises(ContractError):
        fc.summarize_quantiles(one, [1.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 3)), elements=st.floats(-1e6, 1e6)))
def test_quantile_bands_are_nested(samples):
    levels = sorted(fc.DEFAULT_LEVELS)
    q = fc.summarize_quantiles(samples, levels)
    for lo, hi in zip(levels, levels[1:]):
        assert np.all(q[lo] <= q[hi])
    assert np.all(q[0.1] <= q[0.9])
