"""Monte Carlo multi-step forecasting with uncertain exogenous inputs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model as mdl
from .autodiff import Tensor
from .errors import ContractError, DimensionError, NumericError

# Central bands 20/30/50/80/95 % plus the median.
DEFAULT_LEVELS = (0.025, 0.1, 0.25, 0.35, 0.4, 0.5, 0.6, 0.65, 0.75, 0.9, 0.975)
# Trials are simulated in fixed-size row blocks; the block layout, not the
# worker count, determines the floating-point result.
CHUNK_TRIALS = 128


@dataclass(frozen=True)
class ExogenousSpec:
    """Forecast-period distribution of each exogenous variable.

    ``center`` and ``std`` are (tau, D). Variables with kind ``known`` are
    delta distributions at ``center``; ``gaussian`` ones are
    ``N(center[t], std[t]**2)``.
    """

    kinds: tuple[str, ...]
    center: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if center.ndim != 2 or std.shape != center.shape or len(self.kinds) != center.shape[1]:
            raise DimensionError(f"center {center.shape}, std {std.shape} and {len(self.kinds)} kinds disagree")
        for d, k in enumerate(self.kinds):
            if k not in ("known", "gaussian"):
                raise ContractError(f"variable {d}: unknown exogenous kind {k!r}")
            if k == "known" and np.any(std[:, d] != 0):
                raise ContractError(f"variable {d} is known but has a nonzero std schedule")
        if np.any(std < 0) or not np.all(np.isfinite(std)) or not np.all(np.isfinite(center)):
            raise ContractError("std schedule must be finite and >= 0, center finite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "std", std)

    @property
    def horizon(self) -> int:
        return self.center.shape[0]

    @property
    def D(self) -> int:
        return self.center.shape[1]

    @classmethod
    def known(cls, center) -> "ExogenousSpec":
        center = np.asarray(center, dtype=np.float64)
        return cls(("known",) * center.shape[1], center, np.zeros_like(center))

    @classmethod
    def linear_ramp(cls, center, uncertain: Sequence[bool], max_std=1.0) -> "ExogenousSpec":
        """Std rising linearly from 0 at the first step to ``max_std`` at the last.

        ``max_std`` may be a scalar or one value per variable.
        """
        center = np.asarray(center, dtype=np.float64)
        tau, D = center.shape
        mask = np.asarray(uncertain, dtype=bool)
        if mask.shape != (D,):
            raise DimensionError(f"uncertainty mask has {mask.shape}, need ({D},)")
        top = np.broadcast_to(np.asarray(max_std, dtype=np.float64), (D,))
        frac = np.linspace(0.0, 1.0, tau) if tau > 1 else np.zeros(1)
        std = np.where(mask[None, :], frac[:, None] * top[None, :], 0.0)
        kinds = tuple("gaussian" if m else "known" for m in mask)
        return cls(kinds, center, std)


def _exogenous_from_noise(spec: ExogenousSpec, t: int, eps: np.ndarray) -> np.ndarray:
    # t is 0-based here; eps has trailing axis D
    return spec.center[t] + spec.std[t] * eps


def sample_exogenous(spec: ExogenousSpec, t: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``u_{T+t}`` for forecast step ``t`` in ``1..tau``."""
    if not 1 <= t <= spec.horizon:
        raise ContractError(f"forecast step {t} outside 1..{spec.horizon}")
    return _exogenous_from_noise(spec, t - 1, rng.standard_normal(spec.D))


@dataclass
class WarmState:
    """Model state after reading the conditioning history."""

    h: np.ndarray
    z_mean: np.ndarray
    prior_mu: np.ndarray
    prior_sigma: np.ndarray
    x_last: np.ndarray
    T: int


def warm_up(params: mdl.ModelParams, x: np.ndarray, u: np.ndarray) -> WarmState:
    """Roll the model over ``x[:T]`` and return the state at the last step.

    The GRU path is deterministic. The latent path follows the inference
    network's posterior means; at step ``T`` the transition prior
    ``p(z_T | z_{T-1}, h_T)`` is evaluated from that path and returned as
    the start distribution for forecasting.
    """
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    T = x.shape[0]
    if T < 1 or x.ndim != 2 or x.shape[1] != cfg.M:
        raise DimensionError(f"history x has shape {x.shape}, need (T>=1, {cfg.M})")
    if u.ndim != 2 or u.shape[0] != T or u.shape[1] != cfg.D:
        raise DimensionError(f"history u has shape {u.shape}, need ({T}, {cfg.D})")
    w = params.bind()
    rel = mdl.relevance_or_none(w, cfg)
    u_rel = u * rel.data if rel is not None else u
    h = Tensor(np.zeros((1, cfg.n_h)))
    z = Tensor(np.zeros((1, cfg.n_z)))
    x_prev = Tensor(x[:1])
    for t in range(T):
        x_t = Tensor(x[t : t + 1])
        ur = Tensor(u_rel[t : t + 1])
        h = mdl.gru_step(w, h, x_prev)
        if t == T - 1:
            prior_mu, prior_sigma = mdl.transition_params(
                w, cfg, z, h, ur if cfg.transition_uses_exogenous else None
            )
        z, _ = mdl.inference_params(w, cfg, z, x_t, h, ur)
        x_prev = x_t
    return WarmState(
        h=h.data[0].copy(),
        z_mean=z.data[0].copy(),
        prior_mu=prior_mu.data[0].copy(),
        prior_sigma=prior_sigma.data[0].copy(),
        x_last=x[T - 1].copy(),
        T=T,
    )


def summarize_quantiles(samples: np.ndarray, levels: Sequence[float]) -> dict[float, np.ndarray]:
    """Empirical quantiles over the trial axis (linear interpolation of order statistics)."""
    samples = np.asarray(samples, dtype=np.float64)
    levels = [float(q) for q in levels]
    if not levels:
        raise ContractError("at least one quantile level is required")
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ContractError(f"quantile levels must lie in (0, 1): {levels}")
    if samples.ndim < 1 or samples.shape[0] < 1:
        raise ContractError("need at least one sample")
    qs = np.quantile(samples, sorted(levels), axis=0, method="linear")
    # np.quantile is monotone up to rounding; enforce it exactly
    qs = np.maximum.accumulate(qs, axis=0)
    by_level = dict(zip(sorted(levels), qs))
    return {q: by_level[q] for q in levels}


@dataclass
class ForecastResult:
    samples: np.ndarray
    levels: tuple[float, ...]
    quantiles: dict[float, np.ndarray]
    start: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def S(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]


def _trial_noise(seed_seq: np.random.SeedSequence, S: int, width: int) -> np.ndarray:
    rows = [np.random.default_rng(child).standard_normal(width) for child in seed_seq.spawn(S)]
    return np.stack(rows)


def _simulate_block(params, w, rel, warm: WarmState, spec: ExogenousSpec, noise: np.ndarray, first_trial: int):
    cfg = params.config
    R = noise.shape[0]
    tau = spec.horizon
    nz, D, M = cfg.n_z, cfg.D, cfg.M
    z0 = warm.prior_mu + noise[:, :nz] * warm.prior_sigma
    h = Tensor(np.repeat(warm.h[None, :], R, axis=0))
    z = Tensor(z0)
    x_prev = Tensor(np.repeat(warm.x_last[None, :], R, axis=0))
    out = np.empty((R, tau, M))
    step = nz + D + M
    for t in range(tau):
        block = noise[:, nz + t * step : nz + (t + 1) * step]
        eps_z, eps_u, eps_x = block[:, :nz], block[:, nz : nz + D], block[:, nz + D :]
        h = mdl.gru_step(w, h, x_prev)
        u = _exogenous_from_noise(spec, t, eps_u)
        u_rel = Tensor(u * rel if rel is not None else u)
        mu, sigma = mdl.transition_params(w, cfg, z, h, u_rel if cfg.transition_uses_exogenous else None)
        z = Tensor(mu.data + eps_z * sigma.data)
        mean, std = mdl.emission_params(w, cfg, z, h, u_rel)
        x = mean.data + eps_x * std.data
        if not np.all(np.isfinite(x)):
            r = int(np.argwhere(~np.isfinite(x))[0][0])
            raise NumericError(f"non-finite forecast sample in trial {first_trial + r} at step {t + 1}")
        out[:, t] = x
        x_prev = Tensor(x)
    return out


def monte_carlo_forecast(
    params: mdl.ModelParams,
    dataset,
    spec: ExogenousSpec,
    tau: int,
    S: int = 1000,
    seed: int = 0,
    *,
    levels: Sequence[float] = DEFAULT_LEVELS,
    workers: int = 1,
) -> ForecastResult:
    """Sample ``S`` trajectories of length ``tau`` after ``dataset``'s training period.

    Only ``dataset.x[:T]`` and ``dataset.u[:T]`` are read; the forecast
    period's exogenous inputs come from ``spec``.

    Each trial has its own random stream spawned from ``seed``; trials are
    simulated in blocks of ``CHUNK_TRIALS`` rows, optionally on a thread
    pool, and the result does not depend on ``workers``.
    """
    if tau < 1 or S < 1:
        raise ContractError(f"need tau >= 1 and S >= 1, got tau={tau}, S={S}")
    if spec.horizon != tau:
        raise DimensionError(f"exogenous spec covers {spec.horizon} steps, tau={tau}")
    cfg = params.config
    if spec.D != cfg.D:
        raise DimensionError(f"exogenous spec has D={spec.D}, model D={cfg.D}")
    warm = warm_up(params, dataset.x[: dataset.T], dataset.u[: dataset.T])
    w = params.bind()
    rel = mdl.relevance_or_none(w, cfg)
    rel = rel.data if rel is not None else None
    width = cfg.n_z + tau * (cfg.n_z + cfg.D + cfg.M)
    noise = _trial_noise(np.random.SeedSequence(seed), S, width)
    starts = list(range(0, S, CHUNK_TRIALS))

    def run(i0: int) -> np.ndarray:
        return _simulate_block(params, w, rel, warm, spec, noise[i0 : i0 + CHUNK_TRIALS], i0)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, starts))
    else:
        blocks = [run(i0) for i0 in starts]
    samples = np.concatenate(blocks, axis=0)
    levels = tuple(float(q) for q in levels)
    return ForecastResult(samples, levels, summarize_quantiles(samples, levels), warm.T, seed)


def model_forecaster(params: mdl.ModelParams, S: int, seed: int, spec_fn=None, workers: int = 1):
    """Adapter for rolling evaluation: forecasts from a history dataset.

    The forecast-period rows of ``history.u`` are passed to ``spec_fn`` to
    build the exogenous distribution (default: all known). Window ``i``
    uses seed ``seed + i``.
    """
    spec_fn = spec_fn or ExogenousSpec.known

    def forecast(history, horizon: int, window: int) -> np.ndarray:
        spec = spec_fn(history.u[history.T : history.T + horizon])
        return monte_carlo_forecast(params, history, spec, horizon, S, seed + window, workers=workers).samples

    return forecast
