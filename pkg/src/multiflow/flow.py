"""Affine coupling blocks with soft clamping, chained into a conditional flow.

Each block permutes channels, splits them into halves ``y1`` (ceil C/2) and
``y2`` (floor C/2) and applies

    y2' = y2 * exp(clamp(s1)) + t1,    (s1, t1) = st1([y1, eps])
    y1' = y1 * exp(clamp(s2)) + t2,    (s2, t2) = st2([y2', eps])

The per-pixel log-determinant is the channel sum of both clamped scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, NumericError
from .multiview import StNetwork, ViewTopology, init_st_network, st_network

__all__ = [
    "CouplingBlock",
    "FlowModel",
    "soft_clamp",
    "coupling_forward",
    "coupling_inverse",
    "flow_forward",
    "flow_inverse",
]


def soft_clamp(s, alpha):
    """(2 alpha / pi) * arctan(s / alpha), kept strictly inside (-alpha, alpha).

    arctan saturates to a rounded pi/2 in finite precision, so results are
    clipped to the nearest representable value inside the bound.
    """
    if not alpha > 0:
        raise ConfigurationError(f"clamp alpha must be positive, got {alpha}")
    s = s if isinstance(s, T.Tensor) else T.Tensor(s)
    sd = s.data
    u = sd / alpha
    value = (2 * alpha / np.pi) * np.arctan(u)
    lim = np.nextafter(np.asarray(alpha, dtype=sd.dtype), sd.dtype.type(0))
    value = np.clip(value, -lim, lim).astype(sd.dtype, copy=False)
    with np.errstate(over="ignore"):  # u*u -> inf gives the correct limit 0
        deriv = ((2 / np.pi) / (1 + u * u)).astype(sd.dtype, copy=False)
    return T.unary(s, value, deriv)


@dataclass
class CouplingBlock:
    permutation: np.ndarray
    st1: StNetwork
    st2: StNetwork
    topology: ViewTopology
    clamp_alpha: float = 1.9
    last_block: bool = False

    @property
    def channels(self):
        return len(self.permutation)

    @property
    def split(self):
        c = self.channels
        return (c + 1) // 2, c // 2

    @property
    def noise_channels(self):
        return self.st1.conv_weight.shape[1] - self.split[0]

    def parameters(self):
        return self.st1.parameters() + self.st2.parameters()


@dataclass
class FlowModel:
    """Chain of coupling blocks over (views, channels, height, width) inputs."""

    blocks: list
    input_shape: tuple
    noise_channels: int
    topology: ViewTopology
    hidden_dim: int = 64
    cross_kernel: int = 1

    @classmethod
    def init(cls, input_shape, topology, n_blocks=6, hidden_dim=64, clamp_alpha=1.9,
             noise_channels=None, cross_kernel=1, seed=0, dtype=np.float32):
        v, c, _, _ = input_shape
        if v != topology.n_views:
            raise ConfigurationError(
                f"input has {v} views but topology has {topology.n_views}")
        if c < 2:
            raise ConfigurationError("coupling needs at least two channels")
        if n_blocks < 0 or hidden_dim < 1:
            raise ConfigurationError("n_blocks must be >= 0 and hidden_dim >= 1")
        if cross_kernel < 1 or cross_kernel % 2 == 0:
            raise ConfigurationError("cross_kernel must be a positive odd integer")
        if not clamp_alpha > 0:
            raise ConfigurationError(f"clamp alpha must be positive, got {clamp_alpha}")
        noise_channels = c if noise_channels is None else noise_channels
        rng = np.random.default_rng(seed)
        c1, c2 = (c + 1) // 2, c // 2
        blocks = []
        for b in range(n_blocks):
            last = b == n_blocks - 1
            perm = rng.permutation(c)
            st1 = init_st_network(rng, c1 + noise_channels, c2, topology, hidden_dim,
                                  last, cross_kernel, dtype)
            st2 = init_st_network(rng, c2 + noise_channels, c1, topology, hidden_dim,
                                  last, cross_kernel, dtype)
            blocks.append(CouplingBlock(perm, st1, st2, topology, clamp_alpha, last))
        return cls(blocks, tuple(int(n) for n in input_shape), int(noise_channels),
                   topology, hidden_dim, cross_kernel)

    def named_parameters(self):
        out = []
        for b, block in enumerate(self.blocks):
            for tag, st in (("st1", block.st1), ("st2", block.st2)):
                for name in ("conv_weight", "conv_bias", "cross_weight", "cross_bias"):
                    out.append((f"blocks.{b}.{tag}.{name}", getattr(st, name)))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float32)

    def astype(self, dtype):
        """Deep copy with parameters cast to ``dtype``."""
        blocks = []
        for block in self.blocks:
            st1, st2 = (StNetwork(*(T.Tensor(p.data.astype(dtype), requires_grad=True)
                                    for p in st.parameters()))
                        for st in (block.st1, block.st2))
            blocks.append(CouplingBlock(block.permutation.copy(), st1, st2, block.topology,
                                        block.clamp_alpha, block.last_block))
        return FlowModel(blocks, self.input_shape, self.noise_channels, self.topology,
                         self.hidden_dim, self.cross_kernel)

    def copy(self):
        return self.astype(self.dtype)


def _prepare_eps(eps, y_shape, n_noise, dtype):
    v, _, h, w = y_shape
    eps = np.asarray(eps.data if isinstance(eps, T.Tensor) else eps, dtype=dtype)
    if eps.ndim == 2:
        eps = eps[:, :, None, None]
    if eps.ndim != 4 or eps.shape[0] != v or eps.shape[1] != n_noise:
        raise ConfigurationError(
            f"noise shape {eps.shape} incompatible with input {tuple(y_shape)} "
            f"and {n_noise} noise channels")
    return T.Tensor(np.broadcast_to(eps, (v, n_noise, h, w)))


def coupling_forward(y_in, eps, block, index=0, scale_log=None):
    """Return ``(y_out, logdet)``; logdet has shape (V, H, W).

    ``scale_log``, when given, receives the largest |clamped scale| seen.
    """
    y_in = y_in if isinstance(y_in, T.Tensor) else T.Tensor(y_in)
    if y_in.ndim != 4 or y_in.shape[1] != block.channels:
        raise ConfigurationError(
            f"block {index} expects {block.channels} channels, got shape {y_in.shape}")
    eps = _prepare_eps(eps, y_in.shape, block.noise_channels, y_in.dtype)
    c1, c2 = block.split
    y = T.take(y_in, block.permutation, axis=1)
    y1, y2 = T.narrow(y, 1, 0, c1), T.narrow(y, 1, c1, c1 + c2)

    s1, t1 = st_network(y1, eps, block.st1, block.topology, block.last_block)
    cs1 = soft_clamp(s1, block.clamp_alpha)
    y2o = y2 * T.exp(cs1) + t1
    s2, t2 = st_network(y2o, eps, block.st2, block.topology, block.last_block)
    cs2 = soft_clamp(s2, block.clamp_alpha)
    y1o = y1 * T.exp(cs2) + t2

    for a in (s1.data, t1.data, s2.data, t2.data, y1o.data, y2o.data):
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite values in coupling block {index}")
    if scale_log is not None:
        scale_log.append(max(float(np.abs(cs1.data).max()), float(np.abs(cs2.data).max())))
    logdet = T.tensor_sum(cs1, axis=1) + T.tensor_sum(cs2, axis=1)
    return T.concat([y1o, y2o], axis=1), logdet


def coupling_inverse(y_out, eps, block):
    """Undo :func:`coupling_forward`: first y1, then y2, then the permutation."""
    y_out = np.asarray(y_out.data if isinstance(y_out, T.Tensor) else y_out)
    eps = _prepare_eps(eps, y_out.shape, block.noise_channels, y_out.dtype)
    c1, c2 = block.split
    y1o, y2o = y_out[:, :c1], y_out[:, c1:c1 + c2]
    s2, t2 = st_network(T.Tensor(y2o), eps, block.st2, block.topology, block.last_block)
    y1 = (y1o - t2.data) / np.exp(soft_clamp(s2, block.clamp_alpha).data)
    s1, t1 = st_network(T.Tensor(y1), eps, block.st1, block.topology, block.last_block)
    y2 = (y2o - t1.data) / np.exp(soft_clamp(s1, block.clamp_alpha).data)
    y = np.concatenate([y1, y2], axis=1)
    out = np.empty_like(y)
    out[:, block.permutation] = y
    return out


def _check_input(y, model):
    if tuple(y.shape) != tuple(model.input_shape):
        raise ConfigurationError(
            f"input shape {tuple(y.shape)} does not match model {tuple(model.input_shape)}")


def flow_forward(y, eps, model, scale_log=None):
    """Map features to latents; returns ``(z, logdet)`` summed over blocks."""
    y = y if isinstance(y, T.Tensor) else T.Tensor(np.asarray(y, dtype=model.dtype))
    _check_input(y, model)
    v, _, h, w = y.shape
    logdet = T.Tensor(np.zeros((v, h, w), dtype=y.dtype))
    for i, block in enumerate(model.blocks):
        y, ld = coupling_forward(y, eps, block, i, scale_log)
        logdet = logdet + ld
    return y, logdet


def flow_inverse(z, eps, model):
    """Map latents back to features, blocks inverted in reverse order."""
    z = np.asarray(z.data if isinstance(z, T.Tensor) else z, dtype=model.dtype)
    _check_input(z, model)
    for block in reversed(model.blocks):
        z = coupling_inverse(z, eps, block)
    return z
