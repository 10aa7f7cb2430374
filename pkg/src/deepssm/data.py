"""Time-series containers, CSV ingestion and calendar features."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ContractError, DimensionError

TIME_FEATURES = ("hour_of_day", "day_of_week", "month_of_year", "absolute_time", "is_workday", "is_business_hour")


class ParseError(ContractError):
    """The dataset file does not follow the expected schema."""


@dataclass
class TimeSeriesDataset:
    """Observed series ``x`` (N, M) and exogenous series ``u`` (N_u, D).

    Rows are time. The first ``T`` rows of ``x`` form the training period;
    ``u`` may extend further into the forecast period. Rows of ``x`` past
    ``T`` (if any) are held-out truth or NaN.
    """

    x: np.ndarray
    u: np.ndarray
    T: int | None = None
    x_names: list[str] = field(default_factory=list)
    u_names: list[str] = field(default_factory=list)
    timestamps: pd.DatetimeIndex | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.T is None:
            self.T = self.x.shape[0]
        if not 1 <= self.T <= self.x.shape[0]:
            raise ContractError(f"T={self.T} outside 1..{self.x.shape[0]}")
        if self.u.shape[0] < self.T:
            raise DimensionError(f"exogenous series has {self.u.shape[0]} rows, fewer than T={self.T}")
        if not np.all(np.isfinite(self.x[: self.T])):
            raise ContractError("non-finite target value in the training period")
        if not np.all(np.isfinite(self.u)):
            raise ContractError("non-finite exogenous value")
        if not self.x_names:
            self.x_names = [f"x{i}" for i in range(self.M)]
        if not self.u_names:
            self.u_names = [f"u{i}" for i in range(self.D)]

    @property
    def M(self) -> int:
        return self.x.shape[1]

    @property
    def D(self) -> int:
        return self.u.shape[1]

    @property
    def horizon_capacity(self) -> int:
        """Rows of exogenous data available beyond the training period."""
        return self.u.shape[0] - self.T

    def prefix(self, end: int) -> "TimeSeriesDataset":
        """Dataset truncated so that the training period is ``x[:end]``."""
        return TimeSeriesDataset(self.x[:end], self.u, end, self.x_names, self.u_names, self.timestamps)


def time_features(timestamps: pd.DatetimeIndex, names: Sequence[str]) -> np.ndarray:
    """Calendar features (raw, unstandardized), one column per name."""
    ts = pd.DatetimeIndex(timestamps)
    cols = []
    for name in names:
        if name == "hour_of_day":
            col = ts.hour
        elif name == "day_of_week":
            col = ts.dayofweek
        elif name == "month_of_year":
            col = ts.month
        elif name == "absolute_time":
            col = np.arange(len(ts))
        elif name == "is_workday":
            col = ts.dayofweek < 5
        elif name == "is_business_hour":
            col = (ts.dayofweek < 5) & (ts.hour >= 9) & (ts.hour < 17)
        else:
            raise ContractError(f"unknown time feature {name!r}; choose from {TIME_FEATURES}")
        cols.append(np.asarray(col, dtype=np.float64))
    return np.column_stack(cols) if cols else np.empty((len(ts), 0))


def load_dataset(path: str | Path, time_feature_names: Sequence[str] = (), timestamp_column: str | None = None) -> TimeSeriesDataset:
    """Read a CSV with a timestamp column, ``x:*`` targets and ``u:*`` exogenous columns.

    Target cells may be blank after the last observed row; the training
    length ``T`` is the index of the last row with any target present.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    cols = list(frame.columns)
    if not cols:
        raise ParseError(f"{path}: empty header")
    ts_col = timestamp_column or cols[0]
    if ts_col not in cols:
        raise ParseError(f"{path}: timestamp column {ts_col!r} missing")
    x_cols = [c for c in cols if c.startswith("x:")]
    u_cols = [c for c in cols if c.startswith("u:")]
    stray = [c for c in cols if c not in x_cols and c not in u_cols and c != ts_col]
    if stray:
        raise ParseError(f"{path}: columns {stray} are neither x: nor u: prefixed")
    if not x_cols:
        raise ParseError(f"{path}: no x: target columns")

    try:
        stamps = pd.DatetimeIndex(pd.to_datetime(frame[ts_col], format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: bad timestamp in column {ts_col!r}: {exc}") from exc
    dup = stamps[stamps.duplicated()]
    if len(dup):
        raise ContractError(f"{path}: duplicate timestamp {dup[0]}")
    if len(stamps) > 1:
        steps = np.diff(stamps.asi8)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            raise ContractError(f"{path}: timestamps not increasing at {stamps[bad]}")
        if np.any(steps != steps[0]):
            bad = int(np.argmax(steps != steps[0])) + 1
            raise ContractError(f"{path}: irregular spacing (gap) before timestamp {stamps[bad]}")

    x = _parse_block(frame, x_cols, path, allow_blank=True)
    present = ~np.all(np.isnan(x), axis=1)
    if not present.any():
        raise ParseError(f"{path}: no target values")
    T = int(np.flatnonzero(present)[-1]) + 1
    if np.any(np.isnan(x[:T])):
        r, c = np.argwhere(np.isnan(x[:T]))[0]
        raise ParseError(f"{path}: blank target at row {r + 2}, column {x_cols[c]!r} inside the training period")
    u = _parse_block(frame, u_cols, path, allow_blank=False)
    feats = time_features(stamps, time_feature_names)
    u = np.hstack([u, feats]) if u.size or feats.size else np.empty((len(stamps), 0))
    return TimeSeriesDataset(
        x=x,
        u=u,
        T=T,
        x_names=[c[2:] for c in x_cols],
        u_names=[c[2:] for c in u_cols] + list(time_feature_names),
        timestamps=stamps,
    )


def _parse_block(frame: pd.DataFrame, cols: list[str], path: Path, allow_blank: bool) -> np.ndarray:
    out = np.full((len(frame), len(cols)), np.nan)
    for j, c in enumerate(cols):
        for i, cell in enumerate(frame[c].tolist()):
            cell = cell.strip()
            if cell == "":
                if allow_blank:
                    continue
                raise ParseError(f"{path}: blank value at row {i + 2}, column {c!r}")
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: cannot parse {cell!r} at row {i + 2}, column {c!r}") from None
            if not np.isfinite(v):
                raise ParseError(f"{path}: non-finite value at row {i + 2}, column {c!r}")
            out[i, j] = v
    return out
