"""Type-aware multi-head attention and post-norm transformer blocks.

Every node type has its own query/key/value projections. For a query type
``v`` the score matrix is its own ``Q_v K_v^T`` plus ``Q_v K_u^T`` for every
attended type ``u``; all matrices are padded to ``max_nodes`` and summed
position by position. Columns that are padding for ``v`` and rows of padded
``v`` nodes are masked with a large negative sentinel before the row softmax,
and the weights are applied to ``V_v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import SENTINEL, ContractError, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    attended: tuple[str, ...] | None = None  # T_v for the target type; None = every other type
    scale_scores: bool = True
    cross_type_values: bool = False
    dropout: float = 0.0


@dataclass
class ScoreTensor:
    scores: Tensor  # (heads, max_nodes, max_nodes) or (max_nodes, max_nodes)
    valid: np.ndarray  # bool, broadcastable to scores


def split_heads(x: Tensor, heads: int) -> Tensor:
    m, d = x.shape
    if d % heads:
        raise ContractError(f"width {d} not divisible by {heads} heads")
    return ad.transpose(ad.reshape(x, (m, heads, d // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    h, m, dh = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (m, h * dh))


def project_qkv(x, w_q, w_k, w_v, heads: int) -> tuple[Tensor, Tensor, Tensor]:
    """Bias-free per-type projections, returned split into heads as (heads, rows, d_head)."""
    x = ad.as_tensor(x)
    for w in (w_q, w_k, w_v):
        if x.shape[-1] != w.shape[0]:
            raise ContractError(f"embedding width {x.shape[-1]} does not match projection {w.shape}")
    return tuple(split_heads(ad.matmul(x, w), heads) for w in (w_q, w_k, w_v))


def type_scores(q, k, scale: bool = True) -> Tensor:
    """Q_a K_b^T, divided by sqrt(d_head) when ``scale`` is set."""
    q, k = ad.as_tensor(q), ad.as_tensor(k)
    if q.shape[:-2] != k.shape[:-2] or q.shape[-1] != k.shape[-1]:
        raise ContractError(f"score shapes {q.shape} and {k.shape} are incompatible")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    s = ad.matmul(q, ad.transpose(k, axes))
    if scale:
        s = s * (1.0 / math.sqrt(q.shape[-1]))
    return s


def combine_and_mask(s_self, s_cross, valid: np.ndarray) -> ScoreTensor:
    """Sum intra- and cross-type scores, then mask invalid columns and padded rows.

    ``valid`` is the query type's node mask of length ``max_nodes``.
    """
    s_self = ad.as_tensor(s_self)
    m = s_self.shape[-1]
    valid = np.asarray(valid, dtype=bool)
    if s_self.shape[-2] != m or valid.shape != (m,):
        raise ContractError("score matrices must be max_nodes x max_nodes")
    total = s_self
    for s in s_cross:
        s = ad.as_tensor(s)
        if s.shape != s_self.shape:
            raise ContractError(f"inconsistent score shapes {s.shape} vs {s_self.shape}")
        total = total + s
    pair_valid = valid[:, None] & valid[None, :]
    return ScoreTensor(ad.masked_fill(total, ~pair_valid, SENTINEL), pair_valid)


def attention_weights(score: ScoreTensor) -> Tensor:
    """Row softmax; masked entries and fully padded rows are exactly zero."""
    return ad.softmax(score.scores, axis=-1)


def aggregate_heads(alpha, values, w_o, valid: np.ndarray, trim: bool = True) -> Tensor:
    """Weight the value rows per head, concatenate heads, project, drop padded rows.

    ``values`` is one (heads, rows, d_head) tensor or a list of them; a list is
    summed after weighting (the cross-type value variant).
    """
    alpha = ad.as_tensor(alpha)
    if not isinstance(values, (list, tuple)):
        values = [values]
    out = None
    for v in values:
        v = ad.as_tensor(v)
        if v.shape[0] != alpha.shape[0]:
            raise ContractError(f"{alpha.shape[0]} attention heads but {v.shape[0]} value heads")
        a = ad.matmul(alpha, v)
        out = a if out is None else out + a
    merged = ad.matmul(merge_heads(out), w_o) if w_o is not None else merge_heads(out)
    if trim:
        return ad.take_rows(merged, np.flatnonzero(valid))
    return merged * np.asarray(valid, dtype=merged.dtype)[:, None]


def partner_types(query: str, target: str, types: list[str], attended: tuple[str, ...] | None) -> list[str]:
    """Types whose keys a query type attends to besides itself."""
    t_v = [t for t in types if t != target] if attended is None else list(attended)
    for t in t_v:
        if t == target:
            raise ContractError("the attended set must exclude the target type")
        if t not in types:
            raise ContractError(f"attended type {t!r} is not in the batch")
    if query == target:
        return t_v
    pool = [target] + t_v
    if query not in pool:
        return []
    return [t for t in types if t in pool and t != query]


def multi_head_attention(
    h: dict[str, Tensor],
    masks: dict[str, np.ndarray],
    params: dict,
    prefix: str,
    target: str,
    cfg: AttentionConfig,
) -> dict[str, Tensor]:
    """Attention output (padded, un-normalized) for every node type."""
    types = list(h)
    qkv = {
        t: project_qkv(h[t], params[f"{prefix}.q.{t}"], params[f"{prefix}.k.{t}"], params[f"{prefix}.v.{t}"], cfg.heads)
        for t in types
    }
    out = {}
    for t in types:
        q, k, v = qkv[t]
        partners = partner_types(t, target, types, cfg.attended)
        cross = [type_scores(q, qkv[u][1], cfg.scale_scores) for u in partners]
        score = combine_and_mask(type_scores(q, k, cfg.scale_scores), cross, masks[t])
        alpha = attention_weights(score)
        values = [v] + [qkv[u][2] for u in partners] if cfg.cross_type_values else v
        out[t] = aggregate_heads(alpha, values, params[f"{prefix}.o"], masks[t], trim=False)
    return out


def transformer_block(
    h: dict[str, Tensor],
    masks: dict[str, np.ndarray],
    params: dict,
    prefix: str,
    target: str,
    cfg: AttentionConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> dict[str, Tensor]:
    """Post-norm block: x1 = LN(x + Attn(x)); x2 = LN(x1 + FFN(x1)). Padded rows stay zero."""
    attn = multi_head_attention(h, masks, params, prefix, target, cfg)
    out = {}
    for t, x in h.items():
        keep = np.asarray(masks[t], dtype=x.dtype)[:, None]
        a = ad.dropout(attn[t], cfg.dropout, rng, training)
        x1 = ad.layer_norm(x + a, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"]) * keep
        f = ad.relu(ad.matmul(x1, params[f"{prefix}.ffn.W1"]) + params[f"{prefix}.ffn.b1"])
        f = ad.matmul(f, params[f"{prefix}.ffn.W2"]) + params[f"{prefix}.ffn.b2"]
        f = ad.dropout(f, cfg.dropout, rng, training)
        out[t] = ad.layer_norm(x1 + f, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"]) * keep
    return out


def param_shapes(types: list[str], d_model: int, d_ff: int, prefix: str) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for t in types:
        for kind in ("q", "k", "v"):
            shapes[f"{prefix}.{kind}.{t}"] = (d_model, d_model)
    shapes[f"{prefix}.o"] = (d_model, d_model)
    shapes[f"{prefix}.ffn.W1"] = (d_model, d_ff)
    shapes[f"{prefix}.ffn.b1"] = (d_ff,)
    shapes[f"{prefix}.ffn.W2"] = (d_ff, d_model)
    shapes[f"{prefix}.ffn.b2"] = (d_model,)
    for ln in ("ln1", "ln2"):
        shapes[f"{prefix}.{ln}.g"] = (d_model,)
        shapes[f"{prefix}.{ln}.b"] = (d_model,)
    return shapes
