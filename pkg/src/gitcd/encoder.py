"""SAGE-style heterogeneous message passing.

Each edge type contributes a message channel: an edge type between two
different node types yields a forward channel (messages into ``dst``) and a
reverse channel (messages into ``src``); an edge type inside one node type is
treated as undirected and yields a single channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .graph import Batch


@dataclass(frozen=True)
class Channel:
    name: str
    edge_key: tuple[str, str, str]
    src: str  # type sending messages
    dst: str  # type receiving messages
    reverse: bool
    symmetric: bool


def channels_for(edge_keys) -> list[Channel]:
    out = []
    for key in edge_keys:
        s, r, d = key
        name = f"{s}__{r}__{d}"
        if s == d:
            out.append(Channel(name, key, s, d, reverse=False, symmetric=True))
        else:
            out.append(Channel(name, key, s, d, reverse=False, symmetric=False))
            out.append(Channel(name + "__rev", key, d, s, reverse=True, symmetric=False))
    return out


def mean_operator(batch: Batch, channel: Channel, dtype=np.float64) -> np.ndarray:
    """Dense ``max_nodes x max_nodes`` row-normalized adjacency for one channel.

    Row ``i`` averages over the senders adjacent to receiver ``i``; receivers
    without neighbours get an all-zero row.
    """
    edges = batch.edges[channel.edge_key]
    counts = batch.counts
    src_col, dst_col = (1, 0) if channel.reverse else (0, 1)
    senders, receivers = edges[:, src_col], edges[:, dst_col]
    if channel.symmetric:
        senders, receivers = np.concatenate([senders, receivers]), np.concatenate([receivers, senders])
    if senders.size and (senders.max() >= counts[channel.src] or receivers.max() >= counts[channel.dst]):
        raise ContractError(f"dangling local id in channel {channel.name}")
    if senders.size and (senders.min() < 0 or receivers.min() < 0):
        raise ContractError(f"negative local id in channel {channel.name}")
    m = batch.max_nodes
    op = np.zeros((m, m), dtype=dtype)
    np.add.at(op, (receivers, senders), 1.0)
    deg = op.sum(axis=1, keepdims=True)
    np.divide(op, deg, out=op, where=deg > 0)
    return op


def aggregate(batch: Batch, channel: Channel, neighbor_features) -> Tensor:
    """Mean of neighbour feature rows for every receiving node (zero if isolated)."""
    x = ad.as_tensor(neighbor_features)
    return ad.matmul(mean_operator(batch, channel, dtype=x.dtype), x)


def sage_update(x_self, messages, w_self, w_msgs, bias) -> Tensor:
    """relu(x W_self + sum_r msg_r W_r + b)."""
    x_self = ad.as_tensor(x_self)
    if x_self.shape[-1] != w_self.shape[0]:
        raise ContractError(f"self width {x_self.shape[-1]} does not match weight {w_self.shape}")
    if len(messages) != len(w_msgs):
        raise ContractError("one weight per message channel is required")
    pre = ad.matmul(x_self, w_self)
    for msg, w in zip(messages, w_msgs):
        msg = ad.as_tensor(msg)
        if msg.shape[-1] != w.shape[0] or w.shape[1] != w_self.shape[1]:
            raise ContractError(f"message width {msg.shape[-1]} does not match weight {w.shape}")
        pre = pre + ad.matmul(msg, w)
    return ad.relu(pre + bias)


def input_features(batch: Batch, params: dict, node_type: str) -> Tensor:
    """Padded input rows for one type: raw features or rows of a learned table."""
    feats = batch.features.get(node_type)
    if feats is not None:
        return Tensor(feats)
    table = params[f"emb.{node_type}"]
    ids = np.zeros(batch.max_nodes, dtype=np.int64)
    n = batch.node_ids[node_type].size
    ids[:n] = batch.node_ids[node_type]
    rows = ad.take_rows(table, ids)
    mask = (np.arange(batch.max_nodes) < n).astype(table.dtype)[:, None]
    return rows * mask


def encode(batch: Batch, params: dict, layers: int = 1) -> dict[str, Tensor]:
    """Run ``layers`` rounds of SAGE message passing; padded rows stay zero."""
    chans = channels_for(sorted(batch.edges))
    h = {t: input_features(batch, params, t) for t in batch.types}
    masks = batch.masks
    for layer in range(layers):
        operators = {c.name: None for c in chans}
        new = {}
        for t in batch.types:
            incoming = [c for c in chans if c.dst == t]
            msgs, weights = [], []
            for c in incoming:
                if operators[c.name] is None:
                    operators[c.name] = mean_operator(batch, c, dtype=h[c.src].dtype)
                msgs.append(ad.matmul(operators[c.name], h[c.src]))
                weights.append(params[f"enc.{layer}.rel.{c.name}"])
            out = sage_update(h[t], msgs, params[f"enc.{layer}.self.{t}.W"], weights, params[f"enc.{layer}.self.{t}.b"])
            new[t] = out * masks[t].astype(out.dtype)[:, None]
        h = new
    return h


def param_shapes(
    types: list[str],
    edge_keys,
    feature_dims: dict[str, int],
    counts: dict[str, int],
    d_model: int,
    layers: int,
) -> dict[str, tuple[int, ...]]:
    """Shapes of every encoder parameter; featureless types get an embedding table."""
    shapes: dict[str, tuple[int, ...]] = {}
    width = {}
    for t in types:
        if feature_dims.get(t, 0) > 0:
            width[t] = feature_dims[t]
        else:
            shapes[f"emb.{t}"] = (counts[t], d_model)
            width[t] = d_model
    for layer in range(layers):
        for t in types:
            fan_in = width[t] if layer == 0 else d_model
            shapes[f"enc.{layer}.self.{t}.W"] = (fan_in, d_model)
            shapes[f"enc.{layer}.self.{t}.b"] = (d_model,)
        for c in channels_for(sorted(edge_keys)):
            fan_in = width[c.src] if layer == 0 else d_model
            shapes[f"enc.{layer}.rel.{c.name}"] = (fan_in, d_model)
    return shapes
