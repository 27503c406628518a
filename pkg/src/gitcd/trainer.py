"""End-to-end training and evaluation.

Pipeline per batch: SAGE encoder -> ``blocks`` transformer blocks -> target
seed embeddings, which feed a linear classifier and the clustering head.
Once per epoch the k-means centers and the target distribution ``P`` are
refreshed from full-graph embeddings; within the epoch centers and ``P`` are
constants and gradients reach the embeddings and the temperature only.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import attention, encoder, metrics
from . import autodiff as ad
from .autodiff import AdamState, ContractError, NumericError, Tensor
from .clustering import (
    SoftClusterState,
    kl_clustering_loss,
    kmeans,
    silhouette_loss,
    silhouette_values,
    soft_assign,
    target_distribution,
)
from .graph import Batch, HeteroGraph, sample_subgraph

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = [
    "epoch",
    "train_total",
    "train_cls",
    "train_kl",
    "train_sil",
    "val_total",
    "val_nmi",
    "val_ari",
    "val_acc",
]
METRIC_KEYS = ("acc", "clustering_acc", "nmi", "ari", "silhouette")


class ConfigError(ValueError):
    pass


class TrainingDivergedError(ArithmeticError):
    """Non-finite loss during training; ``state`` is the last finite checkpoint."""

    def __init__(self, message: str, state: ModelState | None):
        super().__init__(message)
        self.state = state


class IncompatibleCheckpointError(ValueError):
    pass


# ----------------------------------------------------------------------
# configuration


@dataclass
class LossToggles:
    classification: bool = True
    kl: bool = True
    silhouette: bool = True


@dataclass
class TrainConfig:
    d_model: int = 128
    heads: int = 4
    blocks: int = 2
    sage_layers: int = 1
    d_ff: int | None = None  # None -> 2 * d_model
    learning_rate: float = 3e-4
    weight_decay: float = 5e-4
    dropout: float = 0.8
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 128
    budget: int = 64
    budgets: dict[str, int] | None = None
    k: int | None = None  # None -> num_classes
    kmeans_restarts: int = 5
    eps: float = 1e-8
    t_init: float = 1.0
    loss: LossToggles = field(default_factory=LossToggles)
    warmup_epochs: int = 0
    seed: int = 0
    repeats: int = 5
    attended_types: list[str] | None = None
    scale_scores: bool = True
    cross_type_values: bool = False
    kl_verbatim_sign: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossToggles(**self.loss)
        self.validate()

    @property
    def ff_width(self) -> int:
        return 2 * self.d_model if self.d_ff is None else self.d_ff

    def validate(self) -> None:
        positive = ("d_model", "heads", "sage_layers", "learning_rate", "max_epochs", "patience", "batch_size", "eps", "t_init", "repeats", "kmeans_restarts")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("blocks", "budget", "weight_decay", "warmup_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.d_model % self.heads:
            raise ConfigError("heads must divide d_model")
        if self.k is not None and self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "loss" in data:
            loss = data["loss"]
            bad = set(loss) - {f.name for f in fields(LossToggles)}
            if bad:
                raise ConfigError(f"unknown loss toggles: {sorted(bad)}")
            data["loss"] = LossToggles(**loss)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def budgets_for(self, types) -> dict[str, int]:
        out = {t: self.budget for t in types}
        if self.budgets:
            out.update(self.budgets)
        return out

    def attention_config(self, training_dropout: bool = True) -> attention.AttentionConfig:
        return attention.AttentionConfig(
            heads=self.heads,
            attended=None if self.attended_types is None else tuple(self.attended_types),
            scale_scores=self.scale_scores,
            cross_type_values=self.cross_type_values,
            dropout=self.dropout if training_dropout else 0.0,
        )


def apply_override(data: dict, path: str, value) -> dict:
    """Set a dotted ``path`` inside a config dict (``loss.silhouette``)."""
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {} if node.get(key) is None else node[key]
            if not isinstance(node[key], dict):
                raise ConfigError(f"{key!r} is not a section")
        node = node[key]
    node[keys[-1]] = value
    return data


# ----------------------------------------------------------------------
# model state


@dataclass
class Skeleton:
    """Graph-level facts the model needs before it has seen a batch."""

    types: list[str]
    target_type: str
    counts: dict[str, int]
    num_classes: int

    @classmethod
    def from_graph(cls, graph: HeteroGraph) -> Skeleton:
        return cls(graph.type_names, graph.target_type, graph.counts, graph.num_classes)


@dataclass
class ModelState:
    config: TrainConfig
    skeleton: Skeleton
    edge_keys: list[tuple[str, str, str]]
    feature_dims: dict[str, int]
    params: dict[str, np.ndarray]
    centers: np.ndarray | None
    optimizer: AdamState
    epoch: int = 0
    best_loss: float = math.inf

    @property
    def names(self) -> list[str]:
        return sorted(self.params)

    @property
    def cluster_state(self) -> SoftClusterState:
        return SoftClusterState(self.centers, self.params["clu.t_raw"], self.config.eps)

    def copy(self) -> ModelState:
        return copy.deepcopy(self)


def param_shapes(cfg: TrainConfig, skel: Skeleton, edge_keys, feature_dims) -> dict[str, tuple[int, ...]]:
    shapes = encoder.param_shapes(skel.types, edge_keys, feature_dims, skel.counts, cfg.d_model, cfg.sage_layers)
    for b in range(cfg.blocks):
        shapes.update(attention.param_shapes(skel.types, cfg.d_model, cfg.ff_width, f"blk.{b}"))
    shapes["cls.W"] = (cfg.d_model, skel.num_classes)
    shapes["cls.b"] = (skel.num_classes,)
    shapes["clu.t_raw"] = (1,)
    return shapes


def _fan_in(name: str, shapes: dict) -> int:
    shape = shapes[name]
    if name.startswith("emb."):
        return 1
    if len(shape) == 2:
        return shape[0]
    if name.endswith(".b"):
        return shapes[name[:-2] + ".W"][0]
    weight = {"b1": "W1", "b2": "W2"}.get(name.rsplit(".", 1)[-1])
    if weight:
        return shapes[name.rsplit(".", 1)[0] + "." + weight][0]
    return shape[0]


def lazy_init(skel: Skeleton, batch: Batch, cfg: TrainConfig) -> ModelState:
    """Materialize every parameter from the shapes seen in one batch.

    Weights and biases are drawn uniformly within +-1/sqrt(fan_in) from an rng
    derived from the config seed; layer-norm gains start at 1 and shifts at 0.
    """
    if batch.types != skel.types or batch.target_type != skel.target_type:
        raise ContractError("batch node types do not match the model skeleton")
    feature_dims = {t: (0 if f is None else int(f.shape[1])) for t, f in batch.features.items()}
    edge_keys = sorted(batch.edges)
    shapes = param_shapes(cfg, skel, edge_keys, feature_dims)
    rng = np.random.default_rng([cfg.seed, 0])
    dtype = np.dtype(cfg.dtype)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".g") and ".ln" in name:
            params[name] = np.ones(shape, dtype=dtype)
        elif ".ln" in name and name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name == "clu.t_raw":
            params[name] = SoftClusterState.raw_from_temperature(cfg.t_init).astype(dtype)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shapes))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    opt = AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    state = ModelState(cfg, skel, edge_keys, feature_dims, params, None, opt)
    forward(state, batch)  # shapes must line up on a real forward
    return state


# ----------------------------------------------------------------------
# forward and losses


def forward(
    state: ModelState,
    batch: Batch,
    params: dict | None = None,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[Tensor, Tensor]:
    """Seed-node embeddings and class logits for one batch."""
    cfg = state.config
    p = state.params if params is None else params
    h = encoder.encode(batch, p, cfg.sage_layers)
    masks = batch.masks
    attn_cfg = cfg.attention_config()
    for b in range(cfg.blocks):
        h = attention.transformer_block(h, masks, p, f"blk.{b}", batch.target_type, attn_cfg, rng, training)
    z = h[batch.target_type][: batch.num_seeds]
    logits = ad.matmul(z, p["cls.W"]) + p["cls.b"]
    return z, logits


def classification_loss(logits, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ContractError("one label per logit row is required")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    onehot = np.eye(c, dtype=logits.dtype)[labels]
    return -ad.mean(ad.sum(ad.log_softmax(logits, axis=1) * onehot, axis=1))


def total_loss(l_cls, l_kl, l_sil, toggles: LossToggles):
    """Unweighted sum of the enabled loss terms."""
    parts = []
    if toggles.classification:
        parts.append(l_cls)
    if toggles.kl:
        parts.append(l_kl)
    if toggles.silhouette:
        parts.append(l_sil)
    if not parts:
        return 0.0
    out = parts[0]
    for part in parts[1:]:
        out = out + part
    return out


@dataclass
class LossParts:
    total: Tensor
    cls: float
    kl: float
    sil: float


def batch_losses(
    state: ModelState,
    z: Tensor,
    logits: Tensor,
    labels: np.ndarray,
    labelled: np.ndarray,
    p_rows: np.ndarray | None,
    params: dict,
    toggles: LossToggles,
) -> LossParts:
    """Loss terms on a set of target rows.

    ``labelled`` selects the rows that count for classification; clustering
    terms use every row. Disabled terms are not computed.
    """
    cfg = state.config
    zero = Tensor(np.zeros((), dtype=z.dtype))
    l_cls = l_kl = l_sil = zero
    if toggles.classification and labelled.any():
        rows = np.flatnonzero(labelled)
        l_cls = classification_loss(logits[rows], labels[rows])
    if (toggles.kl or toggles.silhouette) and state.centers is not None:
        q = soft_assign(z, state.centers, ad.softplus(params["clu.t_raw"]))
        if toggles.kl:
            l_kl = kl_clustering_loss(p_rows, q, cfg.eps, cfg.kl_verbatim_sign)
        if toggles.silhouette:
            hard = q.data.argmax(axis=1)
            if np.unique(hard).size >= 2:
                l_sil = silhouette_loss(silhouette_values(z, hard))
    total = total_loss(l_cls, l_kl, l_sil, toggles)
    total = total if isinstance(total, Tensor) else zero
    return LossParts(total, float(l_cls.data), float(l_kl.data), float(l_sil.data))


# ----------------------------------------------------------------------
# full-graph inference


def _eval_rng(cfg: TrainConfig) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 2])


def embed_all(state: ModelState, graph: HeteroGraph) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings and logits for every target node, batched, dropout off.

    Neighbour sampling uses a fixed rng, so repeated calls agree bit for bit.
    """
    cfg = state.config
    rng = _eval_rng(cfg)
    budgets = cfg.budgets_for(graph.type_names)
    ids = np.arange(graph.num_targets)
    zs, ls = [], []
    for start in range(0, ids.size, cfg.batch_size):
        batch = sample_subgraph(graph, ids[start : start + cfg.batch_size], budgets, rng, cfg.sage_layers + 1, dtype=np.dtype(cfg.dtype))
        z, logits = forward(state, batch)
        zs.append(z.data)
        ls.append(logits.data)
    return np.concatenate(zs), np.concatenate(ls)


def refresh_clusters(state: ModelState, z: np.ndarray, epoch: int) -> np.ndarray:
    """Re-run k-means on full embeddings; returns the new target distribution P."""
    k = state.config.k or state.skeleton.num_classes
    rng = np.random.default_rng([state.config.seed, 3, epoch])
    centers, _ = kmeans(z.astype(np.float64), k, rng, n_init=state.config.kmeans_restarts)
    state.centers = centers.astype(z.dtype)
    q = soft_assign(z, state.centers, state.cluster_state.temperature).data
    return target_distribution(q)


def community_predictions(state: ModelState, z: np.ndarray) -> np.ndarray:
    if state.centers is None:
        raise ContractError("model has no cluster centers yet")
    return soft_assign(z, state.centers, state.cluster_state.temperature).data.argmax(axis=1)


def _silhouette_or_zero(z: np.ndarray, labels: np.ndarray) -> float:
    if np.unique(labels).size < 2:
        log.warning("fewer than two predicted communities; silhouette reported as 0")
        return 0.0
    return metrics.silhouette_score(z, labels)


def evaluate(state: ModelState, graph: HeteroGraph, split: str = "test") -> dict[str, float]:
    """Classification accuracy, clustering ACC/NMI/ARI on ``split``, silhouette on all targets."""
    check_compatible(state, graph)
    z, logits = embed_all(state, graph)
    comm = community_predictions(state, z)
    rows = graph.split_ids(split)
    y = graph.labels[rows]
    return {
        "acc": metrics.classification_accuracy(logits[rows].argmax(axis=1), y),
        "clustering_acc": metrics.clustering_accuracy(comm[rows], y),
        "nmi": metrics.nmi(comm[rows], y),
        "ari": metrics.ari(comm[rows], y),
        "silhouette": _silhouette_or_zero(z, comm),
    }


def check_compatible(state: ModelState, graph: HeteroGraph) -> None:
    skel = state.skeleton
    if graph.type_names != skel.types or graph.target_type != skel.target_type:
        raise IncompatibleCheckpointError("node types differ between checkpoint and graph")
    if graph.counts != skel.counts or graph.num_classes != skel.num_classes:
        raise IncompatibleCheckpointError("node counts or class count differ between checkpoint and graph")
    dims = {nt.name: nt.feature_dim for nt in graph.node_types}
    if dims != state.feature_dims:
        raise IncompatibleCheckpointError(f"feature dims differ: checkpoint {state.feature_dims}, graph {dims}")
    if sorted(et.key for et in graph.edge_types) != state.edge_keys:
        raise IncompatibleCheckpointError("edge types differ between checkpoint and graph")


# ----------------------------------------------------------------------
# training


def _split_losses(state: ModelState, graph: HeteroGraph, z, logits, p_full, split: str) -> float:
    rows = graph.split_ids(split)
    zt = Tensor(z[rows])
    labelled = np.ones(rows.size, dtype=bool)
    parts = batch_losses(
        state, zt, Tensor(logits[rows]), graph.labels[rows], labelled, p_full[rows], state.params, state.config.loss
    )
    return float(parts.total.data)


def train_step(
    state: ModelState,
    batch: Batch,
    labels: np.ndarray,
    labelled: np.ndarray,
    p_rows: np.ndarray | None,
    rng: np.random.Generator | None,
    toggles: LossToggles,
    training: bool = True,
) -> LossParts:
    """One forward/backward/Adam update on ``batch``; mutates ``state``."""
    names = state.names
    leaves = {n: Tensor(state.params[n], requires_grad=True) for n in names}
    z, logits = forward(state, batch, leaves, rng, training)
    parts = batch_losses(state, z, logits, labels, labelled, p_rows, leaves, toggles)
    if not np.isfinite(parts.total.data).all():
        raise NumericError("non-finite training loss")
    if parts.total.requires_grad:
        parts.total.backward()
    grads = [leaves[n].grad if leaves[n].grad is not None else np.zeros_like(state.params[n]) for n in names]
    new, state.optimizer = ad.adam_step([state.params[n] for n in names], grads, state.optimizer)
    state.params = dict(zip(names, new))
    return parts


def train(graph: HeteroGraph, config: TrainConfig, on_epoch=None) -> tuple[ModelState, list[dict]]:
    """Train with early stopping on validation total loss.

    Returns the checkpoint with the lowest validation total loss and one
    history row per completed epoch.
    """
    cfg = config
    budgets = cfg.budgets_for(graph.type_names)
    hops = cfg.sage_layers + 1
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng([cfg.seed, 1])
    skel = Skeleton.from_graph(graph)
    n = graph.num_targets
    train_mask = graph.splits["train"]

    init_batch = sample_subgraph(graph, np.arange(min(cfg.batch_size, n)), budgets, np.random.default_rng([cfg.seed, 4]), hops, dtype=dtype)
    state = lazy_init(skel, init_batch, cfg)
    check_compatible(state, graph)

    history: list[dict] = []
    best: ModelState | None = None
    wait = 0
    z_full, logits_full = embed_all(state, graph)
    for epoch in range(cfg.max_epochs):
        clustering_on = epoch >= cfg.warmup_epochs
        toggles = LossToggles(
            cfg.loss.classification, cfg.loss.kl and clustering_on, cfg.loss.silhouette and clustering_on
        )
        p_full = refresh_clusters(state, z_full, epoch)
        order = rng.permutation(n)
        sums = np.zeros(4)
        steps = 0
        for start in range(0, n, cfg.batch_size):
            seeds = order[start : start + cfg.batch_size]
            batch = sample_subgraph(graph, seeds, budgets, rng, hops, dtype=dtype)
            try:
                parts = train_step(state, batch, graph.labels[seeds], train_mask[seeds], p_full[seeds], rng, toggles)
            except NumericError as exc:
                raise TrainingDivergedError(f"epoch {epoch}: {exc}", best) from exc
            sums += [float(parts.total.data), parts.cls, parts.kl, parts.sil]
            steps += 1
        state.epoch = epoch + 1

        z_full, logits_full = embed_all(state, graph)
        val_loss = _split_losses(state, graph, z_full, logits_full, p_full, "val")
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"epoch {epoch}: non-finite validation loss", best)
        comm = community_predictions(state, z_full)
        val_rows = graph.split_ids("val")
        y_val = graph.labels[val_rows]
        mean = [float(v) for v in sums / max(steps, 1)]
        row = {
            "epoch": epoch,
            "train_total": mean[0],
            "train_cls": mean[1],
            "train_kl": mean[2],
            "train_sil": mean[3],
            "val_total": val_loss,
            "val_nmi": metrics.nmi(comm[val_rows], y_val),
            "val_ari": metrics.ari(comm[val_rows], y_val),
            "val_acc": metrics.classification_accuracy(logits_full[val_rows].argmax(axis=1), y_val),
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.info("epoch %d train %.4f val %.4f nmi %.4f", epoch, row["train_total"], row["val_total"], row["val_nmi"])

        if val_loss < state.best_loss:
            state.best_loss = val_loss
            best = state.copy()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    if best is None:
        best = state.copy()
    return best, history


# ----------------------------------------------------------------------
# persistence


def save_checkpoint(state: ModelState, path: str | os.PathLike) -> Path:
    """Write an ``.npz`` container: parameter arrays, optimizer moments, JSON header."""
    path = Path(path)
    names = state.names
    meta = {
        "format": "gitcd-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "skeleton": asdict(state.skeleton),
        "edge_keys": [list(k) for k in state.edge_keys],
        "feature_dims": state.feature_dims,
        "param_names": names,
        "shapes": {n: list(state.params[n].shape) for n in names},
        "epoch": state.epoch,
        "best_loss": state.best_loss if math.isfinite(state.best_loss) else None,
        "optimizer": {
            "lr": state.optimizer.lr,
            "weight_decay": state.optimizer.weight_decay,
            "beta1": state.optimizer.beta1,
            "beta2": state.optimizer.beta2,
            "eps": state.optimizer.eps,
            "step": state.optimizer.step,
        },
        "has_centers": state.centers is not None,
    }
    arrays = {f"param/{n}": state.params[n] for n in names}
    if state.centers is not None:
        arrays["centers"] = state.centers
    for i, (m, v) in enumerate(zip(state.optimizer.m, state.optimizer.v)):
        arrays[f"opt_m/{i}"] = m
        arrays[f"opt_v/{i}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> ModelState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != "gitcd-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise IncompatibleCheckpointError(f"unsupported checkpoint format in {path}")
        names = meta["param_names"]
        params = {n: data[f"param/{n}"].copy() for n in names}
        for n in names:
            if list(params[n].shape) != meta["shapes"][n]:
                raise IncompatibleCheckpointError(f"shape header mismatch for {n}")
        centers = data["centers"].copy() if meta["has_centers"] else None
        o = meta["optimizer"]
        opt = AdamState(o["lr"], o["weight_decay"], o["beta1"], o["beta2"], o["eps"], o["step"])
        i = 0
        while f"opt_m/{i}" in data:
            opt.m.append(data[f"opt_m/{i}"].copy())
            opt.v.append(data[f"opt_v/{i}"].copy())
            i += 1
    skel = Skeleton(**meta["skeleton"])
    best = meta["best_loss"]
    return ModelState(
        config=TrainConfig.from_dict(meta["config"]),
        skeleton=skel,
        edge_keys=[tuple(k) for k in meta["edge_keys"]],
        feature_dims=meta["feature_dims"],
        params=params,
        centers=centers,
        optimizer=opt,
        epoch=meta["epoch"],
        best_loss=math.inf if best is None else best,
    )


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for row in history:
        writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def run_repeats(graph: HeteroGraph, config: TrainConfig, repeats: int | None = None, split: str = "test"):
    """Train ``repeats`` times with seeds seed, seed+1, ...; aggregate test metrics.

    Returns (first run's state, first run's history, metrics dict with means,
    standard deviations and per-repeat values).
    """
    repeats = config.repeats if repeats is None else repeats
    per_run = []
    first = None
    for r in range(repeats):
        cfg = copy.deepcopy(config)
        cfg.seed = config.seed + r
        state, history = train(graph, cfg)
        per_run.append(evaluate(state, graph, split))
        if first is None:
            first = (state, history)
    report = {key: float(np.mean([m[key] for m in per_run])) for key in METRIC_KEYS}
    report["split"] = split
    report["repeats"] = repeats
    report["std"] = {key: float(np.std([m[key] for m in per_run])) for key in METRIC_KEYS}
    report["per_repeat"] = {key: [m[key] for m in per_run] for key in METRIC_KEYS}
    return first[0], first[1], report
