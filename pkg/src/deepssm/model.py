"""Network components of the deep state space model.

A GRU carries the deterministic state ``h_t`` driven by the previous
observation. Three pairs of two-layer perceptrons produce Gaussian
statistics:

* transition  ``p(z_t | z_{t-1}, h_t)``          (``trans_mu``, ``trans_sigma``)
* emission    ``p(x_t | z_t, h_t, u_t)``         (``emit_mean``, ``emit_std``)
* inference   ``q(z_t | z_{t-1}, x_t, h_t, u_t)`` (``infer_mu``, ``infer_sigma``)

An optional relevance network maps a constant all-ones input through a
two-layer perceptron and a softmax to one weight per exogenous variable;
the exogenous vector is scaled by these weights before it reaches the
emission and inference heads.

All functions operate on batched row tensors of shape ``(B, n)``; a 1-D
input of shape ``(n,)`` is treated as a single row and a 1-D result is
returned.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, NumericError

# sigma outputs are clamped here so that sigma**2 remains a normal float
POSITIVE_FLOOR = 1e-150


@dataclass(frozen=True)
class TransformSpec:
    """Maps an unconstrained network output onto a parameter domain."""

    kind: str = "real"
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.kind not in ("real", "positive", "bounded"):
            raise ContractError(f"unknown transform kind {self.kind!r}")
        if self.kind == "bounded":
            if self.a is None or self.b is None or not self.a < self.b:
                raise ContractError(f"bounded transform needs a < b, got a={self.a}, b={self.b}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "bounded":
            d.update(a=self.a, b=self.b)
        return d


REAL = TransformSpec("real")
POSITIVE = TransformSpec("positive")


@dataclass(frozen=True)
class ModelConfig:
    M: int
    D: int
    n_z: int = 10
    n_h: int = 100
    n_nn: int = 100
    K: int = 5
    emission_kind: str = "gaussian"
    use_ard: bool = True
    transition_uses_exogenous: bool = False
    mean_transform: TransformSpec = field(default=REAL)

    def __post_init__(self):
        for name in ("M", "D", "n_z", "n_h", "n_nn", "K"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"ModelConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.emission_kind != "gaussian":
            raise ContractError(f"unsupported emission kind {self.emission_kind!r}")
        if isinstance(self.mean_transform, Mapping):
            object.__setattr__(self, "mean_transform", TransformSpec(**self.mean_transform))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mean_transform"] = self.mean_transform.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def transforms(self) -> dict[str, TransformSpec]:
        return {"mean": self.mean_transform, "std": POSITIVE}


def layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable array, in a fixed order."""
    shapes: dict[str, tuple[int, ...]] = {}
    gru_in = cfg.n_h + cfg.M
    for gate in ("r", "u", "c"):
        shapes[f"gru.W_{gate}"] = (gru_in, cfg.n_h)
        shapes[f"gru.b_{gate}"] = (cfg.n_h,)
    trans_in = cfg.n_z + cfg.n_h + (cfg.D if cfg.transition_uses_exogenous else 0)
    emit_in = cfg.n_z + cfg.n_h + cfg.D
    infer_in = cfg.n_z + cfg.M + cfg.n_h + cfg.D
    heads = {
        "trans_mu": (trans_in, cfg.n_z),
        "trans_sigma": (trans_in, cfg.n_z),
        "emit_mean": (emit_in, cfg.M),
        "emit_std": (emit_in, cfg.M),
        "infer_mu": (infer_in, cfg.n_z),
        "infer_sigma": (infer_in, cfg.n_z),
    }
    for name, (n_in, n_out) in heads.items():
        shapes[f"{name}.W1"] = (n_in, cfg.n_nn)
        shapes[f"{name}.b1"] = (cfg.n_nn,)
        shapes[f"{name}.W2"] = (cfg.n_nn, n_out)
        shapes[f"{name}.b2"] = (n_out,)
    if cfg.use_ard:
        shapes["ard.W1"] = (cfg.D, cfg.D)
        shapes["ard.b1"] = (cfg.D,)
        shapes["ard.W2"] = (cfg.D, cfg.D)
        shapes["ard.b2"] = (cfg.D,)
    return shapes


@dataclass
class ModelParams:
    """All learnable arrays plus the configuration that shaped them."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        expected = layer_shapes(self.config)
        if set(expected) != set(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise DimensionError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} holds non-finite values")
            self.arrays[name] = arr

    def names(self) -> list[str]:
        return list(layer_shapes(self.config))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def bind(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Wrap every array in a leaf tensor (sharing memory)."""
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    The relevance network's output layer starts at zero so the initial
    relevance weights are exactly uniform.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in layer_shapes(config).items():
        if len(shape) == 1 or name == "ard.W2":
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _rows(*ts: Tensor) -> tuple[list[Tensor], bool]:
    vector = ts[0].ndim == 1
    out = []
    for t in ts:
        if t.ndim != (1 if vector else 2):
            raise DimensionError(f"mixed vector/batch inputs: shapes {[x.shape for x in ts]}")
        out.append(ad.reshape(t, (1, t.shape[0])) if vector else t)
    return out, vector


def _unrow(t: Tensor, vector: bool) -> Tensor:
    return ad.reshape(t, (t.shape[1],)) if vector else t


def _check_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"{what} produced non-finite output")
    return t


def mlp(w: Mapping[str, Tensor], name: str, inp: Tensor) -> Tensor:
    return ad.mlp_tanh(inp, w[f"{name}.W1"], w[f"{name}.b1"], w[f"{name}.W2"], w[f"{name}.b2"])


def output_transform(spec: TransformSpec, raw: Tensor) -> Tensor:
    """Map raw network output onto the parameter domain named by ``spec``.

    ``positive`` uses softplus clamped below at ``POSITIVE_FLOOR``, so the
    result is strictly positive even when softplus underflows.
    """
    if spec.kind == "real":
        return raw
    if spec.kind == "positive":
        return ad.softplus(raw, floor=POSITIVE_FLOOR)
    return ad.sigmoid(raw) * (spec.b - spec.a) + spec.a


def gru_step(w: Mapping[str, Tensor], h_prev: Tensor, x_prev: Tensor) -> Tensor:
    """One GRU update, recorded as a single graph node.

    r = sigmoid([h, x] W_r + b_r), u = sigmoid([h, x] W_u + b_u),
    c = tanh([r*h, x] W_c + b_c), h' = (1 - u) * h + u * c.
    """
    (h, x), vector = _rows(h_prev, x_prev)
    Wr, br, Wu, bu, Wc, bc = (w[f"gru.{k}"] for k in ("W_r", "b_r", "W_u", "b_u", "W_c", "b_c"))
    n_h = h.shape[1]
    if h.shape[0] != x.shape[0] or n_h + x.shape[1] != Wr.shape[0] or Wr.shape[1] != n_h:
        raise DimensionError(f"gru_step: h {h.shape} and x {x.shape} do not fit W_r {Wr.shape}")
    hd, xd = h.data, x.data
    hx = np.concatenate([hd, xd], axis=1)
    r = expit(hx @ Wr.data + br.data)
    u = expit(hx @ Wu.data + bu.data)
    rhx = np.concatenate([r * hd, xd], axis=1)
    c = np.tanh(rhx @ Wc.data + bc.data)
    out = hd + u * (c - hd)

    def fn(g):
        d_c = g * u * (1.0 - c * c)
        d_u = g * (c - hd) * u * (1.0 - u)
        d_rhx = d_c @ Wc.data.T
        d_r = d_rhx[:, :n_h] * hd * r * (1.0 - r)
        d_hx = d_r @ Wr.data.T + d_u @ Wu.data.T
        d_h = g * (1.0 - u) + d_rhx[:, :n_h] * r + d_hx[:, :n_h]
        d_x = d_rhx[:, n_h:] + d_hx[:, n_h:]
        return (
            d_h,
            d_x,
            hx.T @ d_r,
            d_r.sum(axis=0),
            hx.T @ d_u,
            d_u.sum(axis=0),
            rhx.T @ d_c,
            d_c.sum(axis=0),
        )

    res = ad.make_node(out, (h, x, Wr, br, Wu, bu, Wc, bc), fn, "gru")
    return _unrow(res, vector)


def transition_params(w, cfg: ModelConfig, z_prev: Tensor, h: Tensor, u: Tensor | None = None):
    """Mean and std of ``p(z_t | z_{t-1}, h_t)``.

    ``u`` must be given exactly when ``cfg.transition_uses_exogenous`` is set.
    """
    if cfg.transition_uses_exogenous != (u is not None):
        raise ContractError("transition exogenous input must match transition_uses_exogenous")
    parts = [z_prev, h] if u is None else [z_prev, h, u]
    rows, vector = _rows(*parts)
    inp = ad.concat(rows)
    mu = _check_finite(mlp(w, "trans_mu", inp), "transition mean head")
    sigma = _check_finite(output_transform(POSITIVE, mlp(w, "trans_sigma", inp)), "transition sigma head")
    return _unrow(mu, vector), _unrow(sigma, vector)


def emission_params(w, cfg: ModelConfig, z: Tensor, h: Tensor, u_rel: Tensor):
    """Gaussian mean and std of ``p(x_t | z_t, h_t, u_t)``, one per observed dim."""
    rows, vector = _rows(z, h, u_rel)
    inp = ad.concat(rows)
    tf = cfg.transforms
    mean = _check_finite(output_transform(tf["mean"], mlp(w, "emit_mean", inp)), "emission mean head")
    std = _check_finite(output_transform(tf["std"], mlp(w, "emit_std", inp)), "emission std head")
    return _unrow(mean, vector), _unrow(std, vector)


def inference_params(w, cfg: ModelConfig, z_prev: Tensor, x_t: Tensor, h: Tensor, u_rel: Tensor):
    """Mean and std of the diagonal Gaussian ``q(z_t | z_{t-1}, x_t, h_t, u_t)``."""
    rows, vector = _rows(z_prev, x_t, h, u_rel)
    inp = ad.concat(rows)
    mu = _check_finite(mlp(w, "infer_mu", inp), "inference mean head")
    sigma = _check_finite(output_transform(POSITIVE, mlp(w, "infer_sigma", inp)), "inference sigma head")
    return _unrow(mu, vector), _unrow(sigma, vector)


def ard_weights(w, cfg: ModelConfig) -> Tensor:
    """Relevance weights ``softmax(NN(ones(D)))``, shape ``(D,)``."""
    if not cfg.use_ard:
        raise ContractError("relevance weights requested but use_ard is off")
    const = Tensor(np.ones((1, cfg.D)))
    logits = mlp(w, "ard", const)
    return ad.reshape(ad.softmax(logits), (cfg.D,))


def apply_relevance(weights: Tensor | None, u: Tensor) -> Tensor:
    """Scale exogenous inputs by relevance; ``None`` weights mean ARD is off."""
    if weights is None:
        return u
    if u.shape[-1] != weights.shape[0]:
        raise DimensionError(f"relevance weights {weights.shape} do not match exogenous {u.shape}")
    return u * weights


def relevance_or_none(w, cfg: ModelConfig) -> Tensor | None:
    return ard_weights(w, cfg) if cfg.use_ard else None
