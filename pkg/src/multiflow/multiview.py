"""Multi-view st-networks: per-view ConvBlock, then cross-view message passing.

Views are indexed with the top view at 0 and the side views 1..n in ring
order.  For each view ``i`` the aggregated output is

    f_ii(h_i) + mean_{j in N(i)} f_ji(h_j)

where ``h`` is the ConvBlock output and ``N(i)`` excludes ``i`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError

__all__ = [
    "ViewTopology",
    "StNetwork",
    "build_view_topology",
    "conv_block_kernel",
    "conv_block",
    "cross_view_aggregate",
    "st_network",
    "init_st_network",
]


@dataclass(frozen=True)
class ViewTopology:
    """Directed neighbor graph over views; ``edges`` holds (source, target)."""

    n_views: int
    edges: tuple
    top_view_connections: bool
    neighbor_view_connections: bool

    @property
    def n_edges(self):
        return len(self.edges)

    def neighbors(self, view):
        """Source views feeding ``view``, self excluded."""
        return [j for j, i in self.edges if i == view and j != view]

    def aggregation_matrix(self, dtype=np.float32):
        """(n_views, n_edges) weights: 1 for the self edge, 1/|N| otherwise."""
        m = np.zeros((self.n_views, self.n_edges), dtype=dtype)
        counts = [len(self.neighbors(i)) for i in range(self.n_views)]
        for e, (j, i) in enumerate(self.edges):
            m[i, e] = 1.0 if i == j else 1.0 / counts[i]
        return m

    def to_dict(self):
        return {
            "n_views": self.n_views,
            "edges": [list(e) for e in self.edges],
            "top_view_connections": self.top_view_connections,
            "neighbor_view_connections": self.neighbor_view_connections,
        }

    @classmethod
    def from_dict(cls, d):
        topo = build_view_topology(d["n_views"] - 1, d["top_view_connections"],
                                   d["neighbor_view_connections"])
        if [list(e) for e in topo.edges] != [list(e) for e in d["edges"]]:
            raise ConfigurationError("stored edge list does not match topology flags")
        return topo


def build_view_topology(n_side_views, top=True, ring=True):
    """Top view (0) linked both ways to every side view, side views in a ring."""
    if n_side_views < 0:
        raise ConfigurationError("n_side_views must be non-negative")
    n = n_side_views + 1
    edges = {(i, i) for i in range(n)}
    if top:
        for i in range(1, n):
            edges.update({(0, i), (i, 0)})
    if ring and n_side_views >= 2:
        for k in range(n_side_views):
            a, b = 1 + k, 1 + (k + 1) % n_side_views
            edges.update({(a, b), (b, a)})
    return ViewTopology(n, tuple(sorted(edges)), bool(top), bool(ring))


@dataclass
class StNetwork:
    """Parameters of one st-network.

    conv_weight (hidden, cin, k, k), conv_bias (hidden,),
    cross_weight (n_edges, 2*cout, hidden, kc, kc), cross_bias (n_edges, 2*cout).
    Edge order follows ``ViewTopology.edges``.
    """

    conv_weight: T.Tensor
    conv_bias: T.Tensor
    cross_weight: T.Tensor
    cross_bias: T.Tensor

    def parameters(self):
        return [self.conv_weight, self.conv_bias, self.cross_weight, self.cross_bias]

    @property
    def out_channels(self):
        return self.cross_weight.shape[1] // 2


def conv_block_kernel(last_block):
    return 5 if last_block else 3


def _truncated_normal(rng, shape, std, dtype):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_st_network(rng, in_channels, out_channels, topology, hidden_dim=64,
                    last_block=False, cross_kernel=1, dtype=np.float32):
    """He-style truncated normal ConvBlock; zero cross convs (identity start)."""
    k = conv_block_kernel(last_block)
    fan_in = in_channels * k * k
    w = _truncated_normal(rng, (hidden_dim, in_channels, k, k),
                          np.sqrt(2.0 / fan_in), dtype)
    e = topology.n_edges
    return StNetwork(
        T.Tensor(w, requires_grad=True),
        T.Tensor(np.zeros(hidden_dim, dtype), requires_grad=True),
        T.Tensor(np.zeros((e, 2 * out_channels, hidden_dim, cross_kernel, cross_kernel),
                          dtype), requires_grad=True),
        T.Tensor(np.zeros((e, 2 * out_channels), dtype), requires_grad=True),
    )


def conv_block(x, weight, bias, last_block=None):
    """Per-view convolution followed by ReLU (views are the batch axis)."""
    if last_block is not None:
        k = weight.shape[-1]
        if k != conv_block_kernel(last_block):
            raise ConfigurationError(
                f"ConvBlock kernel {k}x{k} does not match last_block={last_block}")
    return T.relu(T.conv2d(x, weight, bias))


def cross_view_aggregate(hidden, topology, cross_weight, cross_bias):
    """Self term plus mean of neighbor terms, one convolution per edge."""
    if cross_weight.shape[0] != topology.n_edges or cross_bias.shape[0] != topology.n_edges:
        raise ConfigurationError(
            f"topology has {topology.n_edges} edges but {cross_weight.shape[0]} "
            "cross-view convolutions were supplied")
    if hidden.shape[0] != topology.n_views:
        raise ConfigurationError(
            f"input has {hidden.shape[0]} views, topology expects {topology.n_views}")
    sources = [j for j, _ in topology.edges]
    per_edge = T.grouped_conv2d(T.take(hidden, sources, axis=0), cross_weight, cross_bias)
    return T.mix(per_edge, topology.aggregation_matrix(hidden.dtype))


def st_network(y_split, eps, params, topology, last_block=None):
    """Return un-clamped scale ``s`` and translation ``t`` per view."""
    x = T.concat([y_split, eps], axis=1)
    hidden = conv_block(x, params.conv_weight, params.conv_bias, last_block)
    out = cross_view_aggregate(hidden, topology, params.cross_weight, params.cross_bias)
    c = params.out_channels
    return T.narrow(out, 1, 0, c), T.narrow(out, 1, c, 2 * c)
