"""Variational training: ELBO estimator, Adam, window sampling, train loop."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import Tensor
from .errors import ContractError, DimensionError, DomainError, NumericError

logger = logging.getLogger(__name__)

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# tolerance on the KL >= 0 check; closed-form KL of equal Gaussians can round below 0
_KL_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Gaussian terms
# ---------------------------------------------------------------------------


def _positive(name: str, t: Tensor) -> None:
    bad = ~(t.data > 0.0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"{name} must be > 0; violated at index {idx}")


def kl_rows(mu_q: Tensor, sigma_q: Tensor, mu_p: Tensor, sigma_p: Tensor) -> Tensor:
    """KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) summed over the last axis."""
    shape = mu_q.shape
    for t in (sigma_q, mu_p, sigma_p):
        if t.shape != shape:
            raise DimensionError(f"KL operands disagree: {[x.shape for x in (mu_q, sigma_q, mu_p, sigma_p)]}")
    _positive("sigma_q", sigma_q)
    _positive("sigma_p", sigma_p)
    mq, sq, mp, sp = mu_q.data, sigma_q.data, mu_p.data, sigma_p.data
    d = mq - mp
    inv_vp = 1.0 / (sp * sp)
    elem = np.log(sp / sq) + 0.5 * (sq * sq + d * d) * inv_vp - 0.5
    out = elem.sum(axis=-1)

    def fn(g):
        g = np.expand_dims(g, -1)
        d_mq = g * d * inv_vp
        return (
            d_mq,
            g * (sq * inv_vp - 1.0 / sq),
            -d_mq,
            g * (1.0 / sp - (sq * sq + d * d) * inv_vp / sp),
        )

    return ad.make_node(out, (mu_q, sigma_q, mu_p, sigma_p), fn, "kl_gauss")


def kl_diag_gaussian(mu_q: Tensor, sigma_q: Tensor, mu_p: Tensor, sigma_p: Tensor) -> Tensor:
    """Closed-form KL divergence between diagonal Gaussians, as a scalar."""
    return ad.tsum(kl_rows(mu_q, sigma_q, mu_p, sigma_p))


def log_pdf_rows(x: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Diagonal Gaussian log density summed over the last axis."""
    if not (x.shape == mu.shape == sigma.shape):
        raise DimensionError(f"log-pdf operands disagree: {x.shape}, {mu.shape}, {sigma.shape}")
    _positive("sigma", sigma)
    xd, md, sd = x.data, mu.data, sigma.data
    r = xd - md
    inv_v = 1.0 / (sd * sd)
    elem = -_HALF_LOG_2PI - np.log(sd) - 0.5 * r * r * inv_v
    out = elem.sum(axis=-1)

    def fn(g):
        g = np.expand_dims(g, -1)
        d_x = -g * r * inv_v
        return d_x, -d_x, g * (r * r * inv_v - 1.0) / sd

    return ad.make_node(out, (x, mu, sigma), fn, "gauss_logpdf")


def gaussian_log_pdf(x: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    return ad.tsum(log_pdf_rows(x, mu, sigma))


def reparameterize(mu: Tensor, sigma: Tensor, eps) -> Tensor:
    """``mu + eps * sigma``; ``eps`` is treated as a constant."""
    eps = eps.data if isinstance(eps, Tensor) else np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape or sigma.shape != mu.shape:
        raise DimensionError(f"reparameterize shapes: mu {mu.shape}, sigma {sigma.shape}, eps {eps.shape}")
    return ad.make_node(mu.data + eps * sigma.data, (mu, sigma), lambda g: (g, g * eps), "reparameterize")


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowBatch:
    """Aligned windows: ``x`` is (B, W, M), ``u`` is (B, W, D)."""

    x: np.ndarray
    u: np.ndarray
    starts: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 3 or self.u.ndim != 3 or self.x.shape[:2] != self.u.shape[:2]:
            raise DimensionError(f"window x {self.x.shape} and u {self.u.shape} are not aligned")

    @property
    def width(self) -> int:
        return self.x.shape[1]

    @property
    def size(self) -> int:
        return self.x.shape[0]


def _training_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    T = dataset.T
    return dataset.x[:T], dataset.u[:T]


def window_at(dataset, starts, W: int) -> WindowBatch:
    x, u = _training_arrays(dataset)
    starts = np.atleast_1d(np.asarray(starts, dtype=np.int64))
    if np.any(starts < 0) or np.any(starts + W > x.shape[0]):
        raise ContractError(f"window starts {starts.tolist()} with width {W} exceed T={x.shape[0]}")
    idx = starts[:, None] + np.arange(W)[None, :]
    return WindowBatch(x[idx], u[idx], starts)


def sample_window(dataset, W: int, rng: np.random.Generator, batch_size: int = 1) -> WindowBatch:
    """Draw ``batch_size`` windows with starts uniform over ``0 .. T-W``."""
    T = dataset.T
    if W < 1 or W > T:
        raise ContractError(f"window width {W} must lie in [1, T={T}]")
    starts = rng.integers(0, T - W + 1, size=batch_size)
    return window_at(dataset, starts, W)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def draw_noise(rng: np.random.Generator, cfg: mdl.ModelConfig, window: WindowBatch, K: int) -> np.ndarray:
    """Standard normal draws, shape (W, K*B, n_z); rows are sample-major."""
    return rng.standard_normal((window.width, K * window.size, cfg.n_z))


def elbo_sgvb(
    params: mdl.ModelParams,
    window: WindowBatch,
    K: int,
    rng: np.random.Generator | None = None,
    *,
    noise: np.ndarray | None = None,
    weights: Mapping[str, Tensor] | None = None,
) -> Tensor:
    """Negative K-sample SGVB estimate of the ELBO, averaged over windows.

    Each of the ``K`` passes rolls the GRU over the window (the first input
    repeats the first observation), samples ``z_t`` from the inference
    network by reparameterization and accumulates
    ``log p(x_t | z_t, h_t, u_t) - KL(q || p(z_t | z_{t-1}, h_t))``.
    Supplying ``noise`` (shape (W, K*B, n_z)) freezes the randomness.
    """
    cfg = params.config
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    B, W = window.size, window.width
    if window.x.shape[2] != cfg.M or window.u.shape[2] != cfg.D:
        raise DimensionError(f"window dims (M={window.x.shape[2]}, D={window.u.shape[2]}) do not match config")
    if noise is None:
        if rng is None:
            raise ContractError("elbo_sgvb needs either rng or frozen noise")
        noise = draw_noise(rng, cfg, window, K)
    elif noise.shape != (W, K * B, cfg.n_z):
        raise DimensionError(f"noise shape {noise.shape} != {(W, K * B, cfg.n_z)}")
    w = params.bind(requires_grad=True) if weights is None else weights

    R = K * B
    xs = np.tile(window.x, (K, 1, 1))
    us = np.tile(window.u, (K, 1, 1))
    relevance = mdl.relevance_or_none(w, cfg)
    h = Tensor(np.zeros((R, cfg.n_h)))
    z = Tensor(np.zeros((R, cfg.n_z)))
    x_prev = Tensor(xs[:, 0])
    total = None
    for t in range(W):
        x_t = Tensor(xs[:, t])
        u_rel = mdl.apply_relevance(relevance, Tensor(us[:, t]))
        h = mdl.gru_step(w, h, x_prev)
        mu_q, sigma_q = mdl.inference_params(w, cfg, z, x_t, h, u_rel)
        mu_p, sigma_p = mdl.transition_params(w, cfg, z, h, u_rel if cfg.transition_uses_exogenous else None)
        z = reparameterize(mu_q, sigma_q, noise[t])
        mean, std = mdl.emission_params(w, cfg, z, h, u_rel)
        kl = kl_rows(mu_q, sigma_q, mu_p, sigma_p)
        if np.any(kl.data < -_KL_SLACK):
            raise NumericError(f"negative KL {kl.data.min()} at step {t}")
        term = log_pdf_rows(x_t, mean, std) - kl
        if not np.all(np.isfinite(term.data)):
            raise NumericError(f"non-finite ELBO term at step {t}")
        total = term if total is None else total + term
        x_prev = x_t
    return ad.tsum(total) * (-1.0 / R)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    window: int = 168
    batch_size: int = 1
    iterations: int = 1000
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    K: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.window < 2:
            raise ContractError(f"window must be >= 2, got {self.window}")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ContractError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("Adam needs 0 <= beta < 1 and eps > 0")
        if self.K is not None and self.K < 1:
            raise ContractError("K must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: mdl.ModelParams, grads: Mapping[str, np.ndarray], state: OptimizerState, config: TrainConfig
) -> tuple[mdl.ModelParams, OptimizerState]:
    """One bias-corrected Adam update; returns new params and state."""
    for name, value in params.arrays.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != value.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    arrays, m_new, v_new = {}, {}, {}
    for name, value in params.arrays.items():
        g = grads.get(name)
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        if g is None:
            arrays[name], m_new[name], v_new[name] = value.copy(), m, v
            continue
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        arrays[name] = value - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        m_new[name], v_new[name] = m, v
    return mdl.ModelParams(params.config, arrays), OptimizerState(m_new, v_new, step)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


class TrainingDiverged(NumericError):
    def __init__(self, iteration: int, last_good: mdl.ModelParams, history: np.ndarray, cause: Exception):
        super().__init__(f"training diverged at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.last_good = last_good
        self.history = history


def loss_and_grads(params: mdl.ModelParams, window: WindowBatch, K: int, rng=None, *, noise=None):
    w = params.bind(requires_grad=True)
    loss = elbo_sgvb(params, window, K, rng, noise=noise, weights=w)
    ad.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in w.items()}
    return float(loss.data), grads


def train(
    dataset,
    model_config: mdl.ModelConfig,
    train_config: TrainConfig,
    *,
    init: mdl.ModelParams | None = None,
    checkpoint_every: int | None = None,
    on_checkpoint: Callable[[int, mdl.ModelParams], None] | None = None,
) -> tuple[mdl.ModelParams, np.ndarray]:
    """Fit the model by stochastic maximization of the ELBO.

    Returns the final parameters and the per-iteration loss history.
    Everything is a deterministic function of ``train_config.seed``.
    """
    if dataset.x.shape[1] != model_config.M or dataset.u.shape[1] != model_config.D:
        raise DimensionError(
            f"dataset has M={dataset.x.shape[1]}, D={dataset.u.shape[1]}; config wants M={model_config.M}, D={model_config.D}"
        )
    if train_config.window > dataset.T:
        raise ContractError(f"window {train_config.window} exceeds training length T={dataset.T}")
    init_seq, loop_seq = np.random.SeedSequence(train_config.seed).spawn(2)
    params = init.copy() if init is not None else mdl.init_params(model_config, int(init_seq.generate_state(1)[0]))
    rng = np.random.default_rng(loop_seq)
    K = train_config.K or model_config.K
    state = OptimizerState()
    history = np.empty(train_config.iterations)
    for it in range(train_config.iterations):
        window = sample_window(dataset, train_config.window, rng, train_config.batch_size)
        try:
            loss, grads = loss_and_grads(params, window, K, rng)
            params, state = adam_step(params, grads, state, train_config)
        except (NumericError, DomainError) as exc:
            raise TrainingDiverged(it, params, history[:it].copy(), exc) from exc
        history[it] = loss
        if checkpoint_every and on_checkpoint and (it + 1) % checkpoint_every == 0:
            on_checkpoint(it + 1, params)
        if (it + 1) % 100 == 0:
            logger.info("iteration %d loss %.4f", it + 1, loss)
    return params, history
