"""Forecast and loss-history exports.

Quantile CSV columns: ``step, index, timestamp, level, dim, value``; one
row per forecast step x quantile level x target dimension. ``step`` counts
from 1; ``index`` is the 0-based row of the series being forecast. Values
are written with 17 significant digits so they parse back bit-exactly;
levels use their shortest round-trip form.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .evaluation import Standardizer
from .forecast import ForecastResult


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def export_forecast(
    result: ForecastResult,
    out_dir: str | Path,
    standardizer: Standardizer | None = None,
    *,
    dim_names=None,
    timestamps=None,
    metadata: dict | None = None,
) -> tuple[Path, Path]:
    """Write ``forecast_quantiles.csv`` and ``forecast_meta.json``.

    With a ``standardizer`` the quantiles are mapped back to original
    units (``q * std + mean``); otherwise they are written as-is.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    M = result.samples.shape[2]
    names = list(dim_names) if dim_names else [f"x{m}" for m in range(M)]
    quantiles = {q: (standardizer.inverse(v) if standardizer is not None else v) for q, v in result.quantiles.items()}
    csv_path = out_dir / "forecast_quantiles.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "index", "timestamp", "level", "dim", "value"])
        for t in range(result.horizon):
            idx = result.start + t
            stamp = "" if timestamps is None or idx >= len(timestamps) else str(timestamps[idx].isoformat())
            for q in result.levels:
                for m in range(M):
                    wr.writerow([t + 1, idx, stamp, repr(q), names[m], _fmt(quantiles[q][t, m])])
    samples = result.samples if standardizer is None else standardizer.inverse(result.samples)
    meta = {
        "seed": result.seed,
        "trials": result.S,
        "horizon": result.horizon,
        "start_index": result.start,
        "levels": list(result.levels),
        "standardized": standardizer is None,
        "dims": names,
        "sample_mean": samples.mean(axis=0).tolist(),
        "sample_std": samples.std(axis=0).tolist(),
    }
    if standardizer is not None:
        meta["standardizer"] = standardizer.to_dict()
    meta.update(metadata or {})
    meta_path = out_dir / "forecast_meta.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True))
    return csv_path, meta_path


def read_forecast_csv(path: str | Path) -> dict[tuple[int, float, str], float]:
    """Parse an exported quantile CSV into ``{(step, level, dim): value}``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["step"]), float(row["level"]), row["dim"])] = float(row["value"])
    return out


def write_loss_history(history: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "loss"])
        for i, v in enumerate(history, start=1):
            wr.writerow([i, _fmt(v)])
