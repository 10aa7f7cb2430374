"""CRPS scoring, series standardization, rolling-origin backtests, baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import norm

from .data import TimeSeriesDataset
from .errors import ContractError, DimensionError, DomainError


# ---------------------------------------------------------------------------
# CRPS
# ---------------------------------------------------------------------------


def crps_sample(samples, x: float) -> float:
    """Exact CRPS of the empirical CDF of ``samples`` at observation ``x``.

    Uses ``E|Y - x| - E|Y - Y'|/2`` with the pair term computed from the
    sorted samples in O(S log S).
    """
    y = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if y.size == 0:
        raise ContractError("crps_sample needs at least one sample")
    if not np.all(np.isfinite(y)) or not math.isfinite(x):
        raise ContractError("samples and observation must be finite")
    return float(crps_ensemble(y[:, None], np.array([x]), presorted=True)[0])


def crps_ensemble(samples: np.ndarray, truth: np.ndarray, *, presorted: bool = False) -> np.ndarray:
    """Vectorized sample CRPS: ``samples`` (S, ...) scored against ``truth`` (...)."""
    y = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if y.shape[0] == 0:
        raise ContractError("need at least one sample")
    if y.shape[1:] != truth.shape:
        raise DimensionError(f"samples {y.shape} do not match truth {truth.shape}")
    if not presorted:
        y = np.sort(y, axis=0)
    n = y.shape[0]
    abs_err = np.abs(y - truth[None]).mean(axis=0)
    coef = (2.0 * np.arange(1, n + 1) - n - 1).reshape((n,) + (1,) * truth.ndim)
    # the coefficients sum to zero, so shifting by the minimum is free and
    # keeps identical samples at an exact zero spread
    spread = 2.0 * (coef * (y - y[:1])).sum(axis=0) / (n * n)
    return np.maximum(abs_err - 0.5 * spread, 0.0)


def crps_gaussian_closed_form(mu, sigma, x):
    """CRPS of N(mu, sigma^2) at ``x``: sigma [z(2Phi(z)-1) + 2phi(z) - 1/sqrt(pi)]."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma must be > 0")
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    out = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def fit_standardizer(x: np.ndarray, T: int | None = None, *, allow_constant: bool = False, names=None) -> Standardizer:
    """Per-column mean/std from the first ``T`` rows.

    Constant columns are rejected unless ``allow_constant``; then they are
    only centered.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    train = x[: (x.shape[0] if T is None else T)]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = ~(std > 0)
    if np.any(flat):
        if not allow_constant:
            d = int(np.flatnonzero(flat)[0])
            label = names[d] if names is not None else d
            raise ContractError(f"dimension {label!r} has zero variance in the training period")
        std = np.where(flat, 1.0, std)
    return Standardizer(mean, std)


def standardize_series(x: np.ndarray, T: int | None = None):
    """Standardize with training-period statistics; returns ``(z, mean, std)``."""
    st = fit_standardizer(x, T)
    return st.transform(x), st.mean, st.std


def standardize_dataset(ds: TimeSeriesDataset) -> tuple[TimeSeriesDataset, Standardizer, Standardizer]:
    """Standardize targets and exogenous columns using only the training period."""
    sx = fit_standardizer(ds.x, ds.T, names=ds.x_names)
    su = fit_standardizer(ds.u, ds.T, allow_constant=True)
    out = TimeSeriesDataset(sx.transform(ds.x), su.transform(ds.u), ds.T, ds.x_names, ds.u_names, ds.timestamps)
    return out, sx, su


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------


def seasonal_naive_point(history: np.ndarray, period: int, tau: int) -> np.ndarray:
    """``x_hat[T+t] = x[T+t-p]``, repeating the last season for ``t > p``."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[:, None]
    N = history.shape[0]
    if period < 1 or period > N:
        raise ContractError(f"season length {period} needs at least that many history rows, have {N}")
    idx = N - period + (np.arange(tau) % period)
    return history[idx]


def seasonal_residual_scale(history: np.ndarray, period: int) -> np.ndarray:
    """Root mean square of ``x_s - x_{s-p}`` over the last season (zero if unavailable)."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[:, None]
    N = history.shape[0]
    s = np.arange(max(period, N - period), N)
    if s.size == 0:
        return np.zeros(history.shape[1])
    resid = history[s] - history[s - period]
    return np.sqrt(np.mean(resid * resid, axis=0))


def seasonal_naive_baseline(history: np.ndarray, period: int, tau: int, S: int, rng: np.random.Generator) -> np.ndarray:
    """Seasonal-naive sample paths (S, tau, M) with Gaussian residual noise."""
    point = seasonal_naive_point(history, period, tau)
    scale = seasonal_residual_scale(history, period)
    return point[None] + rng.standard_normal((S,) + point.shape) * scale


# ---------------------------------------------------------------------------
# rolling evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    crps: np.ndarray  # (windows, horizon, M)
    origins: list[int]
    provenance: dict = field(default_factory=dict)
    dim_names: list[str] = field(default_factory=list)

    @property
    def per_window(self) -> np.ndarray:
        return self.crps.mean(axis=(1, 2))

    @property
    def per_window_dim(self) -> np.ndarray:
        return self.crps.mean(axis=1)

    @property
    def mean(self) -> float:
        return float(self.per_window.mean())

    @property
    def sd(self) -> float:
        """Sample standard deviation of the per-window means (0 for one window)."""
        pw = self.per_window
        return float(pw.std(ddof=1)) if pw.size > 1 else 0.0

    def summary(self, label: str = "model") -> str:
        lines = [f"{'window':>6} {'origin':>8} {'CRPS':>10}"]
        for i, (o, v) in enumerate(zip(self.origins, self.per_window)):
            lines.append(f"{i:>6} {o:>8} {v:>10.4f}")
        lines.append(f"{label}: mean (S.D. across windows) CRPS = {self.mean:.4f} ({self.sd:.4f})")
        return "\n".join(lines)

    def to_csv(self, path: str | Path) -> None:
        names = self.dim_names or [f"x{m}" for m in range(self.crps.shape[2])]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["window", "origin", "dim", "crps"])
            for i, o in enumerate(self.origins):
                for m, name in enumerate(names):
                    wr.writerow([i, o, name, format(self.per_window_dim[i, m], ".17g")])
            wr.writerow(["mean", "", "", format(self.mean, ".17g")])
            wr.writerow(["sd", "", "", format(self.sd, ".17g")])


def rolling_window_evaluate(
    forecaster: Callable[[TimeSeriesDataset, int, int], np.ndarray],
    dataset: TimeSeriesDataset,
    horizon: int,
    windows: int,
    *,
    start: int | None = None,
    provenance: dict | None = None,
) -> EvalReport:
    """Backtest over ``windows`` consecutive, non-overlapping forecast windows.

    Window ``i`` has origin ``start + i * horizon``. The forecaster receives
    a dataset whose targets stop at the origin (exogenous inputs may run
    ``horizon`` rows further) and the truth is ``dataset.x`` after it.
    """
    if horizon < 1 or windows < 1:
        raise ContractError("horizon and windows must be >= 1")
    start = dataset.T if start is None else start
    need = start + windows * horizon
    if dataset.x.shape[0] < need or dataset.u.shape[0] < need:
        raise ContractError(
            f"rolling evaluation needs {need} rows of targets and exogenous data, have {dataset.x.shape[0]} / {dataset.u.shape[0]}"
        )
    truth_all = dataset.x[start:need]
    if not np.all(np.isfinite(truth_all)):
        raise ContractError("evaluation windows contain missing targets")
    scores, origins = [], []
    for i in range(windows):
        origin = start + i * horizon
        history = TimeSeriesDataset(
            dataset.x[:origin].copy(),
            dataset.u[: origin + horizon].copy(),
            origin,
            dataset.x_names,
            dataset.u_names,
        )
        samples = np.asarray(forecaster(history, horizon, i), dtype=np.float64)
        truth = dataset.x[origin : origin + horizon]
        if samples.ndim != 3 or samples.shape[1:] != truth.shape:
            raise DimensionError(f"forecaster returned {samples.shape}, expected (S, {horizon}, {truth.shape[1]})")
        scores.append(crps_ensemble(samples, truth))
        origins.append(origin)
    prov = {"horizon": horizon, "windows": windows, "start": start}
    prov.update(provenance or {})
    return EvalReport(np.stack(scores), origins, prov, list(dataset.x_names))
