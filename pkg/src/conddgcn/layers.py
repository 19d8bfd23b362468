"""Directed graph convolutions, conditional connections and the ST blocks built on them.

Feature tensors follow the (B, C, T, N) layout where N is the joint count
for node features and the bone count for edge features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .skeleton import GraphFeatures, IncidenceMaps


class Module:
    """Minimal parameter container.

    Tensors assigned as attributes with ``requires_grad`` are parameters,
    Modules (or lists of Modules) are children. Registration order is the
    declaration order used by checkpoints.
    """

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
        for name, child in self._children():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in getattr(self, "buffers", {}).items()}
        for name, child in self._children():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def init_weight(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    # He-uniform bound suits the ReLU activations used throughout
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_bias(rng: np.random.Generator, size: int, fan_in: int, dtype=np.float64) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=size).astype(dtype), requires_grad=True)


# graph convolution steps ---------------------------------------------------

@dataclass
class GraphConvParams:
    """Weights of one (Cond)DGConv.

    Node step: (C_out, 3 * C_in). Conditional step: (C_out, 3 * C_out).
    Edge step: (C_out, 2 * C_out + C_in) for [source; edge; target].
    """

    node_weight: Tensor
    node_bias: Tensor
    edge_weight: Tensor
    edge_bias: Tensor
    cond_weight: Tensor | None = None
    cond_bias: Tensor | None = None


def dgconv_step_nodes(nodes: Tensor, edges: Tensor, inc: IncidenceMaps,
                      weight: Tensor, bias: Tensor) -> Tensor:
    """ReLU(W [incoming edge; node; mean of outgoing edges] + b) for every node."""
    incoming = dc.mix_last(edges, inc.in_edge_matrix.astype(edges.dtype))
    outgoing = dc.mix_last(edges, inc.out_pool_matrix.astype(edges.dtype))
    h = dc.concat([incoming, nodes, outgoing], axis=1)
    return dc.relu(dc.affine(h, weight, bias, axis=1))


def cond_step_nodes(nodes: Tensor, connections: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Node update over per-sample conditional connections.

    ``connections`` is (B, J, J). The parent slot of node i is
    sum_j A[j, i] f(n_j), the child slot sum_j A[i, j] f(n_j).
    """
    parents = dc.mix_last(nodes, connections)
    children = dc.mix_last(nodes, dc.transpose(connections, (0, 2, 1)))
    h = dc.concat([parents, nodes, children], axis=1)
    return dc.relu(dc.affine(h, weight, bias, axis=1))


def dgconv_step_edges(nodes: Tensor, edges: Tensor, inc: IncidenceMaps,
                      weight: Tensor, bias: Tensor) -> Tensor:
    """ReLU(W [source node; edge; target node] + b) for every edge."""
    source = dc.mix_last(nodes, inc.source_matrix.astype(nodes.dtype))
    target = dc.mix_last(nodes, inc.target_matrix.astype(nodes.dtype))
    h = dc.concat([source, edges, target], axis=1)
    return dc.relu(dc.affine(h, weight, bias, axis=1))


def dgconv(feats: GraphFeatures, inc: IncidenceMaps, params: GraphConvParams) -> GraphFeatures:
    nodes = dgconv_step_nodes(feats.nodes, feats.edges, inc, params.node_weight, params.node_bias)
    edges = dgconv_step_edges(nodes, feats.edges, inc, params.edge_weight, params.edge_bias)
    return GraphFeatures(nodes, edges)


# conditional connections ---------------------------------------------------

@dataclass
class CondConnections:
    matrix: Tensor   # (B, J, J)
    weights: Tensor  # (B, m) blend weights in (0, 1)


def sparse_init(num_joints: int, num_bases: int = 16, k: int = 3, sigma: float = 0.01,
                rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Sparse random bases: in every column of every basis, ``k`` distinct
    rows get N(0, sigma^2) draws and the rest stay zero."""
    if not 0 <= k <= num_joints:
        raise ValueError(f"sparse_init: k={k} must lie in [0, {num_joints}]")
    if num_bases < 1:
        raise ValueError("sparse_init: need at least one basis")
    rng = np.random.default_rng(rng)
    bases = np.zeros((num_bases, num_joints, num_joints))
    for i in range(num_bases):
        for col in range(num_joints):
            rows = rng.choice(num_joints, size=k, replace=False)
            bases[i, rows, col] = rng.normal(0.0, sigma, size=k)
    return bases


class ConnectionBank(Module):
    """Trainable connection-matrix bases plus the routing layer that blends them."""

    def __init__(self, num_joints: int, in_channels: int, num_bases: int = 16, k: int = 3,
                 sigma: float = 0.01, rng: np.random.Generator | None = None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        self.num_bases = num_bases
        self.bases = Tensor(sparse_init(num_joints, num_bases, k, sigma, rng).astype(dtype), requires_grad=True)
        bound = 1.0 / np.sqrt(in_channels)
        self.routing_weight = Tensor(rng.uniform(-bound, bound, (num_bases, in_channels)).astype(dtype),
                                     requires_grad=True)
        self.routing_bias = Tensor(rng.uniform(-bound, bound, num_bases).astype(dtype), requires_grad=True)


def blend_bases(weights: Tensor, bases: Tensor) -> Tensor:
    """sum_i weights[b, i] * bases[i] for every sample b."""
    m, J, _ = bases.shape
    flat = dc.matmul(weights, dc.reshape(bases, (m, J * J)))
    return dc.reshape(flat, (weights.shape[0], J, J))


def routing(nodes: Tensor, edges: Tensor, bank: ConnectionBank) -> CondConnections:
    """Global average pool -> affine -> sigmoid, then blend the bases."""
    pooled = dc.concat([dc.mean(nodes, axes=(2, 3)), dc.mean(edges, axes=(2, 3))], axis=1)
    alpha = dc.sigmoid(dc.affine(pooled, bank.routing_weight, bank.routing_bias, axis=1))
    return CondConnections(blend_bases(alpha, bank.bases), alpha)


def cond_dgconv(feats: GraphFeatures, inc: IncidenceMaps, bank: ConnectionBank | None,
                params: GraphConvParams, conditional: bool = True
                ) -> tuple[GraphFeatures, CondConnections | None]:
    """Routing, node update, conditional node update, edge update.

    With ``conditional=False`` the conditional step and routing are skipped,
    which is exactly :func:`dgconv`.
    """
    if not conditional:
        return dgconv(feats, inc, params), None
    conn = routing(feats.nodes, feats.edges, bank)
    nodes = dgconv_step_nodes(feats.nodes, feats.edges, inc, params.node_weight, params.node_bias)
    nodes = cond_step_nodes(nodes, conn.matrix, params.cond_weight, params.cond_bias)
    edges = dgconv_step_edges(nodes, feats.edges, inc, params.edge_weight, params.edge_bias)
    return GraphFeatures(nodes, edges), conn


class GraphConv(Module):
    """DGConv, or CondDGConv when ``conditional`` (owns its own connection bank)."""

    def __init__(self, inc: IncidenceMaps, in_channels: int, out_channels: int,
                 conditional: bool = False, num_bases: int = 16, sparse_k: int = 3,
                 sparse_sigma: float = 0.01, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        self.inc = inc
        self.conditional = conditional
        cin, cout = in_channels, out_channels
        self.node_weight = init_weight(rng, (cout, 3 * cin), 3 * cin, dtype)
        self.node_bias = init_bias(rng, cout, 3 * cin, dtype)
        if conditional:
            self.cond_weight = init_weight(rng, (cout, 3 * cout), 3 * cout, dtype)
            self.cond_bias = init_bias(rng, cout, 3 * cout, dtype)
        self.edge_weight = init_weight(rng, (cout, 2 * cout + cin), 2 * cout + cin, dtype)
        self.edge_bias = init_bias(rng, cout, 2 * cout + cin, dtype)
        if conditional:
            self.bank = ConnectionBank(inc.num_joints, 2 * cin, num_bases, sparse_k, sparse_sigma, rng, dtype)
        self.last_connections: CondConnections | None = None

    @property
    def params(self) -> GraphConvParams:
        return GraphConvParams(self.node_weight, self.node_bias, self.edge_weight, self.edge_bias,
                               getattr(self, "cond_weight", None), getattr(self, "cond_bias", None))

    def __call__(self, feats: GraphFeatures) -> GraphFeatures:
        out, conn = cond_dgconv(feats, self.inc, getattr(self, "bank", None), self.params, self.conditional)
        self.last_connections = conn
        return out


# temporal operations -------------------------------------------------------

def temporal_conv(feats: GraphFeatures, node_weight: Tensor, node_bias: Tensor,
                  edge_weight: Tensor, edge_bias: Tensor, stride: int = 1) -> GraphFeatures:
    """1D convolution along time, one kernel set for nodes and one for edges."""
    return GraphFeatures(dc.conv1d(feats.nodes, node_weight, node_bias, stride),
                         dc.conv1d(feats.edges, edge_weight, edge_bias, stride))


def temporal_upsample(feats: GraphFeatures, length: int) -> GraphFeatures:
    return GraphFeatures(dc.interp_time(feats.nodes, length), dc.interp_time(feats.edges, length))


def concat_features(parts: list[GraphFeatures]) -> GraphFeatures:
    return GraphFeatures(dc.concat([p.nodes for p in parts], axis=1),
                         dc.concat([p.edges for p in parts], axis=1))


class TemporalConv(Module):
    def __init__(self, channels: int, kernel_size: int = 3, stride: int = 1, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        if kernel_size % 2 == 0:
            raise ValueError(f"temporal kernel size must be odd, got {kernel_size}")
        fan_in = channels * kernel_size
        self.stride = stride
        self.node_weight = init_weight(rng, (channels, channels, kernel_size), fan_in, dtype)
        self.node_bias = init_bias(rng, channels, fan_in, dtype)
        self.edge_weight = init_weight(rng, (channels, channels, kernel_size), fan_in, dtype)
        self.edge_bias = init_bias(rng, channels, fan_in, dtype)

    def __call__(self, feats: GraphFeatures) -> GraphFeatures:
        return temporal_conv(feats, self.node_weight, self.node_bias,
                             self.edge_weight, self.edge_bias, self.stride)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: dict, key: str,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (B, T, N); ``running`` holds the eval statistics."""
    shape = (1, x.shape[1], 1, 1)
    if training:
        mu = dc.mean(x, axes=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = dc.mean(xc * xc, axes=(0, 2, 3), keepdims=True)
        running[key + "_mean"] *= 1 - momentum
        running[key + "_mean"] += momentum * mu.data.reshape(-1)
        running[key + "_var"] *= 1 - momentum
        running[key + "_var"] += momentum * var.data.reshape(-1)
        y = xc * dc.power(var + eps, -0.5)
    else:
        mu = running[key + "_mean"].reshape(shape)
        inv = 1.0 / np.sqrt(running[key + "_var"].reshape(shape) + eps)
        y = (x - mu) * inv
    return y * dc.reshape(gamma, shape) + dc.reshape(beta, shape)


class FeatureNorm(Module):
    def __init__(self, channels: int, dtype=np.float64):
        self.node_gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.node_beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.edge_gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.edge_beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.buffers = {
            "node_mean": np.zeros(channels, dtype=dtype), "node_var": np.ones(channels, dtype=dtype),
            "edge_mean": np.zeros(channels, dtype=dtype), "edge_var": np.ones(channels, dtype=dtype),
        }

    def __call__(self, feats: GraphFeatures) -> GraphFeatures:
        return GraphFeatures(
            batch_norm(feats.nodes, self.node_gamma, self.node_beta, self.buffers, "node", self.training),
            batch_norm(feats.edges, self.edge_gamma, self.edge_beta, self.buffers, "edge", self.training),
        )


class STBlock(Module):
    """Graph convolution, optional normalization, temporal convolution, dropout.

    ``stride=2`` gives the temporal downsampling block.
    """

    def __init__(self, inc: IncidenceMaps, in_channels: int, out_channels: int, *,
                 conditional: bool = False, kernel_size: int = 3, stride: int = 1,
                 dropout: float = 0.0, norm: bool = False, num_bases: int = 16,
                 sparse_k: int = 3, sparse_sigma: float = 0.01, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        self.graph = GraphConv(inc, in_channels, out_channels, conditional, num_bases,
                               sparse_k, sparse_sigma, rng, dtype)
        if norm:
            self.norm = FeatureNorm(out_channels, dtype)
        self.temporal = TemporalConv(out_channels, kernel_size, stride, rng, dtype)
        self.dropout = dropout
        self.rng: np.random.Generator | None = None

    @property
    def conditional(self) -> bool:
        return self.graph.conditional

    def __call__(self, feats: GraphFeatures) -> GraphFeatures:
        feats = self.graph(feats)
        if hasattr(self, "norm"):
            feats = self.norm(feats)
        feats = self.temporal(feats)
        if self.training and self.dropout > 0:
            feats = GraphFeatures(dc.dropout(feats.nodes, self.dropout, self.rng, True),
                                  dc.dropout(feats.edges, self.dropout, self.rng, True))
        return feats


def fc_head(nodes: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-joint affine map C -> 3, returned as (B, T, J, 3)."""
    return dc.transpose(dc.affine(nodes, weight, bias, axis=1), (0, 2, 3, 1))


class FCHead(Module):
    def __init__(self, channels: int, out_dim: int = 3, rng=None, dtype=np.float64):
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(channels)
        self.weight = Tensor(rng.uniform(-bound, bound, (out_dim, channels)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, nodes: Tensor) -> Tensor:
        return fc_head(nodes, self.weight, self.bias)
