"""Observation encoders: flat projection and two graph attention encoders.

Every encoder exposes ``featurize(obs)`` (one observation to scaled numpy
arrays), ``collate(items)`` (stack or pad a batch) and ``__call__(batch)``
which returns a ``[B, hidden]`` latent tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import GridSpec
from ..observations import (
    SUB_EDGE_FEATURES,
    SUB_NODE_FEATURES,
    TYPE_FEATURES,
    ElemGraphObs,
    SubGraphObs,
    flat_length,
)
from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, Module

HIDDEN = 128
ENCODERS = ("flat", "substation-graph", "element-graph")


def symlog(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def _power_columns(names) -> np.ndarray:
    powers = {"abs_p", "p", "q", "max_ramp_up", "max_ramp_down"}
    return np.array([n in powers for n in names])


def _scale(x: np.ndarray, is_power: np.ndarray, base: float) -> np.ndarray:
    # MW quantities go to per unit; the rest (ratios, timers, costs, flags)
    # are squashed with a signed log so no column dominates
    return np.where(is_power, x / base, symlog(x))


# ------------------------------------------------------------------- flat

class FlatEncoder(Module):
    variant = "flat"

    def __init__(self, spec: GridSpec, rng: np.random.Generator, hidden: int = HIDDEN):
        n = flat_length(spec)
        scale = np.ones(n)
        scale[spec.n_gen:spec.n_gen + 3 * (spec.n_gen + spec.n_load)] = 1.0 / spec.base_power
        self.scale = scale
        self.proj = Linear(n, hidden, rng)
        self.hidden = hidden

    def featurize(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=float) * self.scale

    def collate(self, items) -> np.ndarray:
        return np.stack(items)

    def __call__(self, batch: np.ndarray) -> Tensor:
        return ad.tanh(self.proj(batch))


# ------------------------------------------------------------------ graphs

@dataclass
class GraphItem:
    x: np.ndarray          # [n, F] node inputs
    edges: np.ndarray      # [E, 2] undirected pairs
    edge_attr: np.ndarray  # [E, Fe]
    degree: np.ndarray     # [n]


@dataclass
class GraphBatch:
    x: np.ndarray          # [B, N, F]
    node_mask: np.ndarray  # [B, N]
    adj: np.ndarray        # [B, N, N] neighbours plus self
    edge_feat: np.ndarray  # [B, N, N, Fe + 1]; last channel marks self loops
    pe: np.ndarray         # [B, N, 2] (in-degree, out-degree)


def collate_graphs(items: list[GraphItem]) -> GraphBatch:
    b = len(items)
    n = max([it.x.shape[0] for it in items] + [1])
    f = items[0].x.shape[1]
    fe = items[0].edge_attr.shape[1]
    x = np.zeros((b, n, f))
    node_mask = np.zeros((b, n), dtype=bool)
    adj = np.zeros((b, n, n), dtype=bool)
    edge_feat = np.zeros((b, n, n, fe + 1))
    pe = np.zeros((b, n, 2))
    for k, it in enumerate(items):
        m = it.x.shape[0]
        x[k, :m] = it.x
        node_mask[k, :m] = True
        diag = np.arange(m)
        adj[k, diag, diag] = True
        edge_feat[k, diag, diag, fe] = 1.0
        if len(it.edges):
            i, j = it.edges[:, 0], it.edges[:, 1]
            adj[k, i, j] = adj[k, j, i] = True
            edge_feat[k, i, j, :fe] = it.edge_attr
            edge_feat[k, j, i, :fe] = it.edge_attr
        # undirected graph: in- and out-centrality coincide
        pe[k, :m, 0] = pe[k, :m, 1] = symlog(it.degree)
    return GraphBatch(x, node_mask, adj, edge_feat, pe)


class GraphAttention(Module):
    """One single-head attention layer restricted to graph neighbours.

    Edge features add a learned bias to the pre-softmax scores.  Residual
    connections wrap the attention and the feed-forward block.
    """

    def __init__(self, hidden: int, edge_dim: int, rng: np.random.Generator):
        self.q = Linear(hidden, hidden, rng)
        self.k = Linear(hidden, hidden, rng)
        self.v = Linear(hidden, hidden, rng)
        self.o = Linear(hidden, hidden, rng)
        self.edge = Linear(edge_dim, 1, rng)
        self.ff1 = Linear(hidden, hidden, rng)
        self.ff2 = Linear(hidden, hidden, rng)
        self.hidden = hidden

    def __call__(self, h: Tensor, batch: GraphBatch) -> Tensor:
        b, n = batch.adj.shape[:2]
        scores = ad.matmul(self.q(h), ad.swapaxes(self.k(h))) * (1.0 / np.sqrt(self.hidden))
        bias = ad.reshape(self.edge(batch.edge_feat), (b, n, n))
        attn = ad.masked_softmax(scores + bias, batch.adj)
        h = h + self.o(ad.matmul(attn, self.v(h)))
        return h + self.ff2(ad.relu(self.ff1(h)))


def mean_readout(h: Tensor, node_mask: np.ndarray) -> Tensor:
    """Average over real nodes; an empty graph reads out as zeros."""
    count = node_mask.sum(axis=1, keepdims=True).astype(float)
    weights = node_mask / np.maximum(count, 1.0)
    return ad.tsum(h * weights[:, :, None], axis=1)


class _GraphEncoder(Module):
    def _node_inputs(self, batch: GraphBatch) -> Tensor:
        raise NotImplementedError

    def __call__(self, batch: GraphBatch) -> Tensor:
        h = self._node_inputs(batch) + self.pe(batch.pe)
        h = self.attention(h, batch)
        return mean_readout(h, batch.node_mask)

    def collate(self, items) -> GraphBatch:
        return collate_graphs(list(items))


class SubstationGraphEncoder(_GraphEncoder):
    variant = "substation-graph"

    def __init__(self, spec: GridSpec, rng: np.random.Generator, hidden: int = HIDDEN):
        self.base = spec.base_power
        self.node_power = _power_columns(SUB_NODE_FEATURES)
        self.edge_power = _power_columns(SUB_EDGE_FEATURES)
        self.proj = Linear(len(SUB_NODE_FEATURES), hidden, rng)
        self.pe = Linear(2, hidden, rng)
        self.attention = GraphAttention(hidden, len(SUB_EDGE_FEATURES) + 1, rng)
        self.hidden = hidden

    def featurize(self, obs: SubGraphObs) -> GraphItem:
        n = obs.n_nodes
        degree = np.zeros(n)
        if len(obs.edges):
            np.add.at(degree, obs.edges.ravel(), 1.0)
        return GraphItem(
            x=_scale(obs.x, self.node_power, self.base),
            edges=obs.edges,
            edge_attr=_scale(obs.edge_attr, self.edge_power, self.base),
            degree=degree,
        )

    def _node_inputs(self, batch: GraphBatch) -> Tensor:
        return self.proj(batch.x)


class ElementGraphEncoder(_GraphEncoder):
    """Typed input projections realised as one matmul over a block layout.

    Each node's features are written into the column block reserved for its
    type, followed by a one-hot of the type; a single weight matrix then acts
    as a separate linear map (with its own bias) per node type.
    """

    variant = "element-graph"

    def __init__(self, spec: GridSpec, rng: np.random.Generator, hidden: int = HIDDEN):
        self.base = spec.base_power
        self.types = sorted(TYPE_FEATURES)
        dims = [len(TYPE_FEATURES[t]) for t in self.types]
        self.offsets = dict(zip(self.types, np.concatenate([[0], np.cumsum(dims)[:-1]]).tolist()))
        self.power = {t: _power_columns(TYPE_FEATURES[t]) for t in self.types}
        self.width = int(sum(dims)) + len(self.types)
        self.proj = Linear(self.width, hidden, rng)
        self.pe = Linear(2, hidden, rng)
        self.attention = GraphAttention(hidden, 2, rng)
        self.hidden = hidden

    def featurize(self, obs: ElemGraphObs) -> GraphItem:
        n = obs.n_nodes
        x = np.zeros((n, self.width))
        n_feat = self.width - len(self.types)
        for i, (t, feats) in enumerate(zip(obs.node_type.tolist(), obs.features)):
            off = self.offsets[t]
            x[i, off:off + len(feats)] = _scale(feats, self.power[t], self.base)
            x[i, n_feat + self.types.index(t)] = 1.0
        degree = np.zeros(n)
        np.add.at(degree, obs.edges[:, 0], obs.edge_attr[:, 0])
        np.add.at(degree, obs.edges[:, 1], obs.edge_attr[:, 0])
        return GraphItem(x=x, edges=obs.edges, edge_attr=obs.edge_attr, degree=degree)

    def _node_inputs(self, batch: GraphBatch) -> Tensor:
        return self.proj(batch.x)


def make_encoder(variant: str, spec: GridSpec, rng: np.random.Generator, hidden: int = HIDDEN):
    classes = {c.variant: c for c in (FlatEncoder, SubstationGraphEncoder, ElementGraphEncoder)}
    if variant not in classes:
        raise ValueError(f"unknown encoder {variant!r}; expected one of {', '.join(ENCODERS)}")
    return classes[variant](spec, rng, hidden)
