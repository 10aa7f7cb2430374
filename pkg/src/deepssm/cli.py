"""Command-line entry point.

    deepssm train|forecast|evaluate|relevance --config RUN.json
            [--checkpoint FILE] [--seed INT] [--out DIR]

Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import model as mdl
from .config import RunConfig, load_config
from .data import TimeSeriesDataset, load_dataset
from .errors import ContractError, DimensionError, DomainError, NumericError
from .evaluation import Standardizer, fit_standardizer, rolling_window_evaluate, seasonal_naive_baseline
from .forecast import ExogenousSpec, model_forecaster, monte_carlo_forecast
from .report import export_forecast, write_loss_history
from .training import TrainingDiverged, train


VERBS = ("train", "forecast", "evaluate", "relevance")


class UsageError(Exception):
    pass


@dataclass
class Prepared:
    dataset: TimeSeriesDataset  # standardized; T is the training length
    x_std: Standardizer | None
    u_std: Standardizer | None
    raw: TimeSeriesDataset


def prepare(cfg: RunConfig) -> Prepared:
    raw = load_dataset(cfg.resolve(cfg.data.path), cfg.data.time_features)
    T_train = raw.T - cfg.data.holdout
    if T_train < 2:
        raise ContractError(f"holdout {cfg.data.holdout} leaves only {T_train} training rows")
    if raw.D == 0:
        raise ContractError("dataset has no exogenous columns; add u: columns or time_features")
    if cfg.data.standardize:
        sx = fit_standardizer(raw.x, T_train, names=raw.x_names)
        su = fit_standardizer(raw.u, T_train, allow_constant=True)
        x, u = sx.transform(raw.x), su.transform(raw.u)
    else:
        sx = su = None
        x, u = raw.x, raw.u
    ds = TimeSeriesDataset(x, u, T_train, raw.x_names, raw.u_names, raw.timestamps)
    return Prepared(ds, sx, su, raw)


def _checkpoint_path(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else cfg.resolve(cfg.output_dir) / "model.ckpt"


def _load_model(args, cfg: RunConfig, prep: Prepared) -> mdl.ModelParams:
    path = _checkpoint_path(args, cfg)
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found; run `train` first or pass --checkpoint")
    params, extra = ckpt.load_params(path)
    if params.config.M != prep.dataset.M or params.config.D != prep.dataset.D:
        raise ContractError(
            f"checkpoint expects M={params.config.M}, D={params.config.D}; dataset has M={prep.dataset.M}, D={prep.dataset.D}"
        )
    if extra.get("u_names") and extra["u_names"] != prep.dataset.u_names:
        raise ContractError(f"exogenous columns {prep.dataset.u_names} differ from training {extra['u_names']}")
    return params


def _spec_builder(cfg: RunConfig, u_names: list[str]):
    entries = cfg.forecast.exogenous
    unknown = sorted(set(entries) - set(u_names))
    if unknown:
        raise ContractError(f"[forecast.exogenous] names {unknown} are not exogenous columns {u_names}")
    mask = [name in entries and entries[name].kind == "gaussian" for name in u_names]
    tops = [entries[name].max_std if name in entries else 0.0 for name in u_names]

    def build(center: np.ndarray) -> ExogenousSpec:
        if not any(mask):
            return ExogenousSpec.known(center)
        return ExogenousSpec.linear_ramp(center, mask, tops)

    return build


def cmd_train(args, cfg: RunConfig) -> int:
    prep = prepare(cfg)
    ds = prep.dataset
    mcfg = cfg.model_config(ds.M, ds.D)
    tcfg = cfg.train_config()
    if tcfg.window > ds.T:
        raise ContractError(f"[train] window {tcfg.window} exceeds training length {ds.T}")
    out = cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "x_names": ds.x_names,
        "u_names": ds.u_names,
        "train_length": ds.T,
        "config_hash": cfg.hash(),
        "x_standardizer": prep.x_std.to_dict() if prep.x_std else None,
        "u_standardizer": prep.u_std.to_dict() if prep.u_std else None,
    }

    def save_periodic(iteration: int, params: mdl.ModelParams) -> None:
        d = out / "checkpoints"
        d.mkdir(exist_ok=True)
        ckpt.save_params(params, d / f"iter_{iteration:06d}.ckpt", {**extra, "iteration": iteration})

    try:
        params, history = train(ds, mcfg, tcfg, checkpoint_every=cfg.checkpoint_every, on_checkpoint=save_periodic)
    except TrainingDiverged as exc:
        ckpt.save_params(exc.last_good, out / "last_good.ckpt", {**extra, "iteration": exc.iteration})
        write_loss_history(exc.history, out / "loss_history.csv")
        print(f"error: {exc}; last good parameters saved to {out / 'last_good.ckpt'}", file=sys.stderr)
        return 1
    path = _checkpoint_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_params(params, path, {**extra, "iteration": tcfg.iterations})
    write_loss_history(history, out / "loss_history.csv")
    last = history[-1] if history.size else float("nan")
    print(f"trained {tcfg.iterations} iterations; final loss {last:.4f}; checkpoint {path}")
    return 0


def cmd_forecast(args, cfg: RunConfig) -> int:
    prep = prepare(cfg)
    ds = prep.dataset
    fc = cfg.forecast
    if ds.horizon_capacity < fc.horizon:
        raise ContractError(f"horizon {fc.horizon} needs exogenous rows past T={ds.T}; only {ds.horizon_capacity} available")
    build = _spec_builder(cfg, ds.u_names)
    params = _load_model(args, cfg, prep)
    spec = build(ds.u[ds.T : ds.T + fc.horizon])
    result = monte_carlo_forecast(params, ds, spec, fc.horizon, fc.trials, cfg.seed, levels=fc.levels, workers=fc.workers)
    standardizer = None if fc.standardized_output else prep.x_std
    out = cfg.resolve(cfg.output_dir)
    csv_path, _ = export_forecast(
        result,
        out,
        standardizer,
        dim_names=ds.x_names,
        timestamps=ds.timestamps,
        metadata={"config_hash": cfg.hash(), "checkpoint": str(_checkpoint_path(args, cfg))},
    )
    print(f"wrote {csv_path} ({fc.horizon} steps x {len(fc.levels)} levels x {ds.M} dims)")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    prep = prepare(cfg)
    ds = prep.dataset
    ev, fc = cfg.evaluate, cfg.forecast
    need = ev.windows * fc.horizon
    if cfg.data.holdout < need:
        raise ContractError(f"[data] holdout must be >= windows x horizon = {need} for evaluation, got {cfg.data.holdout}")
    build = _spec_builder(cfg, ds.u_names)
    params = _load_model(args, cfg, prep)
    trials = ev.trials or fc.trials
    model_fc = model_forecaster(params, trials, cfg.seed, build, workers=fc.workers)

    def baseline_fc(history, horizon, window):
        rng = np.random.default_rng([cfg.seed, window])
        return seasonal_naive_baseline(history.x[: history.T], ev.baseline_period, horizon, trials, rng)

    prov = {"seed": cfg.seed, "trials": trials, "config_hash": cfg.hash()}
    rep = rolling_window_evaluate(model_fc, ds, fc.horizon, ev.windows, provenance=prov)
    base = rolling_window_evaluate(baseline_fc, ds, fc.horizon, ev.windows, provenance={**prov, "period": ev.baseline_period})
    out = cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "eval_report.csv")
    base.to_csv(out / "baseline_report.csv")
    summary = {
        "model": {"mean": rep.mean, "sd": rep.sd, "per_window": rep.per_window.tolist()},
        "seasonal_naive": {"mean": base.mean, "sd": base.sd, "per_window": base.per_window.tolist()},
        "standardized": cfg.data.standardize,
        **prov,
    }
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(rep.summary("model"))
    print(base.summary(f"seasonal-naive(p={ev.baseline_period})"))
    return 0


def relevance_table(params: mdl.ModelParams, names: list[str]) -> list[tuple[str, float]]:
    w = mdl.ard_weights(params.bind(), params.config).data
    order = sorted(range(len(names)), key=lambda d: (-w[d], d))
    return [(names[d], float(w[d])) for d in order]


def cmd_relevance(args, cfg: RunConfig) -> int:
    prep = prepare(cfg)
    params = _load_model(args, cfg, prep)
    if not params.config.use_ard:
        raise UsageError("model was trained without the relevance network (use_ard is false)")
    rows = relevance_table(params, prep.dataset.u_names)
    out = cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "relevance.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["variable", "weight"])
        for name, v in rows:
            wr.writerow([name, format(v, ".17g")])
    width = max(len(n) for n, _ in rows)
    for name, v in rows:
        print(f"{name:<{width}}  {v:.6f}")
    return 0


COMMANDS = {"train": cmd_train, "forecast": cmd_forecast, "evaluate": cmd_evaluate, "relevance": cmd_relevance}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepssm", description="Deep state space probabilistic forecasting")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", required=True, help="run configuration (JSON)")
    ap.add_argument("--checkpoint", help="checkpoint to write (train) or read (other verbs)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
        return COMMANDS[args.verb](args, cfg)
    except (UsageError, ContractError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, DomainError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
