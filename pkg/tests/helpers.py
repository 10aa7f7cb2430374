"""Shared fixtures-as-functions for the test modules."""

import numpy as np

from deepssm import model as mdl
from deepssm import training as tr
from deepssm.data import TimeSeriesDataset


def toy_problem(seed=0, K=2, B=1, W=8):
    """Toy model (M=1, D=2, n_h=4, n_z=2) with non-trivial weights, a window and frozen noise."""
    cfg = mdl.ModelConfig(M=1, D=2, n_z=2, n_h=4, n_nn=3, K=K)
    rng = np.random.default_rng(seed)
    arrays = {k: 0.6 * rng.standard_normal(s) for k, s in mdl.layer_shapes(cfg).items()}
    params = mdl.ModelParams(cfg, arrays)
    T = W + 4
    x = np.cumsum(rng.standard_normal((T, 1)), axis=0) * 0.5
    u = rng.standard_normal((T, 2))
    ds = TimeSeriesDataset(x, u, T)
    window = tr.window_at(ds, np.arange(B) * 2, W)
    noise = rng.standard_normal((W, K * B, cfg.n_z))
    return params, window, noise


def small_config(M=1, D=1, **kw):
    base = dict(M=M, D=D, n_z=4, n_h=16, n_nn=16, K=2)
    base.update(kw)
    return mdl.ModelConfig(**base)
