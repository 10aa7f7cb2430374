"""Synthetic series used by the tests, the acceptance suite and the demo config.

Running ``python -m deepssm.synthetic OUT.csv`` writes the bundled hourly
demo dataset.
"""

from __future__ import annotations

import sys

import numpy as np
import pandas as pd

from .data import TimeSeriesDataset


def _ar1(rng: np.random.Generator, n: int, phi: float) -> np.ndarray:
    e = rng.standard_normal(n) * np.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    out[0] = rng.standard_normal()
    for t in range(1, n):
        out[t] = phi * out[t - 1] + e[t]
    return out


def ar1_dataset(n: int = 1000, phi: float = 0.8, seed: int = 0) -> TimeSeriesDataset:
    """Univariate AR(1) target with a single white-noise exogenous column."""
    rng = np.random.default_rng(seed)
    return TimeSeriesDataset(_ar1(rng, n, phi)[:, None], rng.standard_normal((n, 1)), x_names=["ar1"], u_names=["noise"])


def random_walk_dataset(n: int = 1000, step: float = 1.0, seed: int = 0) -> TimeSeriesDataset:
    """Gaussian random walk with one irrelevant exogenous column."""
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.standard_normal(n) * step)
    return TimeSeriesDataset(x[:, None], rng.standard_normal((n, 1)), x_names=["walk"], u_names=["noise"])


def relevance_dataset(n: int = 2000, seed: int = 0, noise_std: float = 0.3) -> TimeSeriesDataset:
    """Target driven by three persistent drivers; three white-noise distractors.

    ``x_t = 1.0 a_t - 0.8 b_t + 0.6 c_t + noise``. Exogenous columns are
    ``drive1..3`` then ``noise1..3``, all roughly unit variance.
    """
    rng = np.random.default_rng(seed)
    drivers = np.column_stack([_ar1(rng, n, phi) for phi in (0.9, 0.7, 0.5)])
    distractors = rng.standard_normal((n, 3))
    x = drivers @ np.array([1.0, -0.8, 0.6]) + noise_std * rng.standard_normal(n)
    return TimeSeriesDataset(
        x[:, None],
        np.hstack([drivers, distractors]),
        x_names=["target"],
        u_names=["drive1", "drive2", "drive3", "noise1", "noise2", "noise3"],
    )


def seasonal_dataset(n: int = 2000, period: int = 24, seed: int = 0, start: str = "2020-01-06") -> TimeSeriesDataset:
    """Hourly daily-seasonal load driven by a temperature-like exogenous input.

    Exogenous columns: ``temp`` (persistent AR(1)), ``load_fc`` (a noisy
    external forecast of the seasonal swing), then ``hour_sin`` and
    ``hour_cos`` time features.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    phase = 2.0 * np.pi * t / period
    temp = _ar1(rng, n, 0.97)
    load_fc = np.sin(phase) + 0.3 * rng.standard_normal(n)
    resid = _ar1(rng, n, 0.5) * 0.25
    x = 1.5 * np.sin(phase) + 0.5 * np.cos(2 * phase) + 1.0 * temp + resid
    u = np.column_stack([temp, load_fc, np.sin(phase), np.cos(phase)])
    stamps = pd.date_range(start, periods=n, freq="h")
    return TimeSeriesDataset(
        x[:, None], u, x_names=["load"], u_names=["temp", "load_fc", "hour_sin", "hour_cos"], timestamps=stamps
    )


def write_csv(ds: TimeSeriesDataset, path, horizon_blank: int = 0) -> None:
    """Write ``ds`` in the ingestion schema; the last ``horizon_blank`` targets are left blank."""
    stamps = ds.timestamps if ds.timestamps is not None else pd.date_range("2020-01-01", periods=ds.u.shape[0], freq="h")
    frame = pd.DataFrame({"timestamp": stamps.strftime("%Y-%m-%dT%H:%M:%S")})
    n = ds.u.shape[0]
    for m, name in enumerate(ds.x_names):
        col = [format(v, ".17g") for v in ds.x[:n, m]]
        for i in range(n - horizon_blank, n):
            col[i] = ""
        frame[f"x:{name}"] = col
    for d, name in enumerate(ds.u_names):
        frame[f"u:{name}"] = [format(v, ".17g") for v in ds.u[:, d]]
    frame.to_csv(path, index=False)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = argv[0] if argv else "synthetic_hourly.csv"
    write_csv(seasonal_dataset(n=1200, seed=7), out, horizon_blank=24)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
