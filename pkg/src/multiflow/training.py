"""Noise conditioning, masked negative log-likelihood, AdamW and the epoch loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, DataError, NumericError
from .flow import FlowModel, flow_forward
from .multiview import build_view_topology

__all__ = [
    "NOISE_KINDS",
    "NoiseScheme",
    "TrainConfig",
    "OptimizerState",
    "Checkpoint",
    "sample_noise",
    "nll_loss",
    "adamw_step",
    "init_model",
    "fit_flow",
    "train",
]

logger = logging.getLogger(__name__)

NOISE_KINDS = ("none", "uniform", "softflow", "simplenet")
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NoiseScheme:
    kind: str = "simplenet"
    c_squared: float = 0.15

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(
                f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.c_squared < 0:
            raise ConfigurationError("c_squared must be non-negative")


def sample_noise(scheme, shape, rng):
    """Draw one conditioning/perturbation tensor for a single instance."""
    if not isinstance(scheme, NoiseScheme):
        scheme = NoiseScheme(*scheme) if isinstance(scheme, tuple) else NoiseScheme(scheme)
    if scheme.kind == "none":
        return np.zeros(shape, dtype=np.float32)
    if scheme.kind == "uniform":
        return rng.random(shape).astype(np.float32)
    if scheme.kind == "simplenet":
        return rng.normal(0.0, np.sqrt(scheme.c_squared), size=shape).astype(np.float32)
    # softflow: one noise level per instance
    c = rng.random()
    return rng.normal(0.0, c, size=shape).astype(np.float32)


def nll_loss(z, logdet, mask, instance_id=None):
    """Masked mean of the per-pixel negative log-likelihood.

    per_pixel = 0.5 * sum_c z**2 - logdet; loss = sum(per_pixel * mask) / sum(mask).
    Returns ``(loss, per_pixel)`` as tensors.
    """
    z = z if isinstance(z, T.Tensor) else T.Tensor(z)
    logdet = logdet if isinstance(logdet, T.Tensor) else T.Tensor(logdet)
    mask = np.asarray(mask, dtype=z.dtype)
    v, _, h, w = z.shape
    if logdet.shape != (v, h, w) or mask.shape != (v, h, w):
        raise ConfigurationError(
            f"inconsistent shapes: z {z.shape}, logdet {logdet.shape}, mask {mask.shape}")
    total = float(mask.sum())
    if total == 0:
        name = "" if instance_id is None else f" {instance_id!r}"
        raise DataError(f"instance{name} has no foreground pixels")
    per_pixel = T.tensor_sum(T.square(z), axis=1) * 0.5 - logdet
    loss = T.tensor_sum(per_pixel * mask) * (1.0 / total)
    return loss, per_pixel


@dataclass
class TrainConfig:
    epochs: int = 112
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.95
    clamp_alpha: float = 1.9
    blocks: int = 6
    hidden_dim: int = 64
    top_view_connections: bool = True
    neighbor_view_connections: bool = True
    noise_kind: str = "simplenet"
    c_squared: float = 0.15
    cross_kernel: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")
        if self.clamp_alpha <= 0:
            raise ConfigurationError("clamp_alpha must be positive")
        if self.blocks < 0 or self.hidden_dim < 1:
            raise ConfigurationError("blocks must be >= 0 and hidden_dim >= 1")
        NoiseScheme(self.noise_kind, self.c_squared)

    @property
    def noise(self):
        return NoiseScheme(self.noise_kind, self.c_squared)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)


@dataclass
class OptimizerState:
    exp_avg: list
    exp_avg_sq: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adamw_step(params, grads, state, config):
    """One in-place AdamW update with decoupled weight decay.

    ``grads`` is either a sequence aligned with ``params`` or a mapping
    keyed by parameter.  ``config`` needs learning_rate, weight_decay,
    beta1 and beta2.
    """
    if isinstance(grads, dict):
        grads = [grads[p] for p in params]
    if len(grads) != len(params):
        raise ConfigurationError("one gradient per parameter is required")
    lr, wd = config.learning_rate, config.weight_decay
    b1, b2 = config.beta1, config.beta2
    state.step += 1
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        data = p.data
        g = np.asarray(g, dtype=data.dtype)
        if wd:
            data *= data.dtype.type(1 - lr * wd)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        denom = np.sqrt(v / bc2) + ADAM_EPS
        data -= (lr / bc1) * m / denom
    return params, state


@dataclass
class Checkpoint:
    """Trained model plus everything needed to reproduce and evaluate it."""

    model: FlowModel
    config: TrainConfig
    loss_history: list = field(default_factory=list)
    scale_history: list = field(default_factory=list)

    @property
    def topology(self):
        return self.model.topology


def init_model(input_shape, config):
    v = input_shape[0]
    topology = build_view_topology(v - 1, config.top_view_connections,
                                   config.neighbor_view_connections)
    return FlowModel.init(input_shape, topology, n_blocks=config.blocks,
                          hidden_dim=config.hidden_dim, clamp_alpha=config.clamp_alpha,
                          cross_kernel=config.cross_kernel, seed=config.seed)


def fit_flow(features, masks, config, ids=None, progress=None):
    """Maximum-likelihood training, one instance (all its views) per step.

    features: (N, V, C, H, W) float array of normal instances.
    masks: (N, V, H, W) binary foreground at feature resolution.
    ``progress(epoch, mean_loss)`` is called after every epoch.
    """
    features = np.asarray(features, dtype=np.float32)
    masks = np.asarray(masks, dtype=np.float32)
    if features.ndim != 5:
        raise DataError(f"features must be (N, V, C, H, W), got shape {features.shape}")
    n = features.shape[0]
    if masks.shape != features.shape[:2] + features.shape[3:]:
        raise DataError(f"mask shape {masks.shape} does not match features {features.shape}")
    ids = list(range(n)) if ids is None else list(ids)
    for i in range(n):
        for v in range(masks.shape[1]):
            if masks[i, v].sum() == 0:
                raise DataError(f"instance {ids[i]!r} view {v} has no foreground pixels")

    model = init_model(features.shape[1:], config)
    ckpt = Checkpoint(model, config)
    if config.epochs == 0 or n == 0:
        return ckpt

    params = model.parameters()
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng([config.seed, 1])
    scheme = config.noise
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        scale_log = []
        for i in order:
            eps = sample_noise(scheme, features.shape[1:], rng)
            y = features[i] + eps if scheme.kind != "none" else features[i]
            try:
                with T.GradientTape() as tape:
                    z, logdet = flow_forward(y, eps, model, scale_log)
                    loss, _ = nll_loss(z, logdet, masks[i], ids[i])
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, instance {ids[i]!r}: {exc}") from None
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, instance {ids[i]!r}")
            grads = T.backward(tape, loss, params)
            adamw_step(params, grads, state, config)
            losses.append(value)
        mean = float(np.mean(losses))
        ckpt.loss_history.append(mean)
        ckpt.scale_history.append(float(max(scale_log)))
        logger.info("epoch %d: mean loss %.4f", epoch + 1, mean)
        if progress is not None:
            progress(epoch, mean)
    return ckpt


def train(manifest, config, progress=None):
    """Fit a flow on every instance of a training manifest (normal instances only)."""
    features, masks, ids = manifest.load_training_arrays()
    return fit_flow(features, masks, config, ids=ids, progress=progress)
