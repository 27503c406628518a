"""Heterogeneous graph container, directory format, synthetic generator and sampler.

On-disk layout of a graph directory::

    manifest.json
    <type>_features.csv     one row per node, ``feature_dim`` values
    <target>_labels.csv     node_id,label
    splits.csv              node_id,split   (split in train/val/test)
    <src>__<rel>__<dst>.csv src_id,dst_id   (0-based, no header)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")


class GraphFormatError(ValueError):
    """Base class for malformed graph directories or inconsistent graphs."""


class GraphFileMissingError(GraphFormatError, FileNotFoundError):
    pass


class FeatureDimError(GraphFormatError):
    pass


class EdgeRangeError(GraphFormatError):
    pass


class LabelError(GraphFormatError):
    pass


class MissingSplitError(GraphFormatError):
    pass


class DuplicateSplitError(GraphFormatError):
    pass


@dataclass
class NodeType:
    name: str
    count: int
    features: np.ndarray | None = None

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])


@dataclass
class EdgeType:
    src: str
    rel: str
    dst: str
    edges: np.ndarray  # (E, 2) int64, columns src_id, dst_id

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.rel, self.dst)


@dataclass
class HeteroGraph:
    node_types: list[NodeType]
    edge_types: list[EdgeType]
    target_type: str
    labels: np.ndarray
    num_classes: int
    splits: dict[str, np.ndarray]
    _neighbors: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def node_type(self, name: str) -> NodeType:
        for nt in self.node_types:
            if nt.name == name:
                return nt
        raise KeyError(name)

    @property
    def type_names(self) -> list[str]:
        return [nt.name for nt in self.node_types]

    @property
    def counts(self) -> dict[str, int]:
        return {nt.name: nt.count for nt in self.node_types}

    @property
    def num_targets(self) -> int:
        return self.node_type(self.target_type).count

    def split_ids(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits[split])

    def validate(self) -> None:
        counts = self.counts
        if self.target_type not in counts:
            raise GraphFormatError(f"target type {self.target_type!r} is not a node type")
        for nt in self.node_types:
            if nt.count <= 0:
                raise GraphFormatError(f"node type {nt.name!r} has non-positive count")
            if nt.features is not None and nt.features.shape[0] != nt.count:
                raise FeatureDimError(
                    f"{nt.name}: {nt.features.shape[0]} feature rows for {nt.count} nodes"
                )
        for et in self.edge_types:
            for end, col in ((et.src, 0), (et.dst, 1)):
                if end not in counts:
                    raise GraphFormatError(f"edge type {et.key} references unknown type {end!r}")
                ids = et.edges[:, col]
                if ids.size and (ids.min() < 0 or ids.max() >= counts[end]):
                    bad = int(ids.max()) if ids.max() >= counts[end] else int(ids.min())
                    raise EdgeRangeError(
                        f"edge type {et.key}: {end} id {bad} out of range for {counts[end]} nodes"
                    )
        n = counts[self.target_type]
        if self.labels.shape != (n,):
            raise LabelError(f"expected {n} labels, got {self.labels.shape}")
        if self.num_classes <= 0 or self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise LabelError(f"labels must lie in [0, {self.num_classes})")
        coverage = np.zeros(n, dtype=np.int64)
        for name in SPLITS:
            mask = self.splits.get(name)
            if mask is None or mask.shape != (n,):
                raise MissingSplitError(f"split {name!r} missing or mis-sized")
            coverage += mask
        if np.any(coverage == 0):
            raise MissingSplitError(f"target node {int(np.flatnonzero(coverage == 0)[0])} has no split")
        if np.any(coverage > 1):
            raise DuplicateSplitError(f"target node {int(np.flatnonzero(coverage > 1)[0])} is in several splits")

    def neighbors(self) -> dict[tuple[str, str], list[np.ndarray]]:
        """Undirected adjacency lists keyed by (node type, neighbour type)."""
        if self._neighbors is None:
            counts = self.counts
            buckets: dict[tuple[str, str], list[list[int]]] = {}
            for et in self.edge_types:
                for a, b, ca, cb in ((et.src, et.dst, 0, 1), (et.dst, et.src, 1, 0)):
                    lists = buckets.setdefault((a, b), [[] for _ in range(counts[a])])
                    for u, v in zip(et.edges[:, ca].tolist(), et.edges[:, cb].tolist()):
                        lists[u].append(v)
            self._neighbors = {
                key: [np.unique(np.asarray(ls, dtype=np.int64)) for ls in lists]
                for key, lists in buckets.items()
            }
        return self._neighbors


# ----------------------------------------------------------------------
# directory format


def _read_csv(path: Path) -> list[list[str]]:
    if not path.exists():
        raise GraphFileMissingError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(line.split(","))
    if rows and not _is_int(rows[0][0]) and not _is_float(rows[0][0]):
        rows = rows[1:]  # tolerate a header line
    return rows


def _is_int(s: str) -> bool:
    try:
        int(s)
    except ValueError:
        return False
    return True


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_graph(directory: str | os.PathLike) -> HeteroGraph:
    """Load and validate a graph directory (see module docstring for the layout)."""
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise GraphFileMissingError(f"missing file: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    target = manifest["target_type"]

    node_types = []
    labels = None
    num_classes = None
    for spec in manifest["node_types"]:
        name, count = spec["name"], int(spec["count"])
        features = None
        if spec.get("feature_file"):
            dim = int(spec["feature_dim"])
            rows = _read_csv(root / spec["feature_file"])
            for i, row in enumerate(rows):
                if len(row) != dim:
                    raise FeatureDimError(
                        f"{spec['feature_file']} row {i}: {len(row)} values, feature_dim is {dim}"
                    )
            features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
            if features.shape[0] != count:
                raise FeatureDimError(f"{spec['feature_file']}: {features.shape[0]} rows for {count} nodes")
        if name == target:
            num_classes = int(spec["num_classes"])
            labels = np.full(count, -1, dtype=np.int64)
            for node_id, label in _read_csv(root / spec["labels_file"]):
                i = int(node_id)
                if not 0 <= i < count:
                    raise LabelError(f"label row for node {i} out of range")
                labels[i] = int(label)
            if np.any(labels < 0):
                raise LabelError(f"target node {int(np.flatnonzero(labels < 0)[0])} has no label")
        node_types.append(NodeType(name, count, features))
    if labels is None:
        raise GraphFormatError(f"target type {target!r} not declared in node_types")

    edge_types = []
    for spec in manifest["edge_types"]:
        rows = _read_csv(root / spec["file"])
        edges = np.array(rows, dtype=np.int64).reshape(len(rows), 2)
        edge_types.append(EdgeType(spec["src"], spec["rel"], spec["dst"], edges))

    n = labels.shape[0]
    splits = {name: np.zeros(n, dtype=bool) for name in SPLITS}
    for node_id, split in _read_csv(root / manifest["splits_file"]):
        i = int(node_id)
        if split not in splits:
            raise GraphFormatError(f"unknown split {split!r} for node {i}")
        if not 0 <= i < n:
            raise GraphFormatError(f"split row for node {i} out of range")
        if any(mask[i] for mask in splits.values()):
            raise DuplicateSplitError(f"target node {i} is in several splits")
        splits[split][i] = True
    return HeteroGraph(node_types, edge_types, target, labels, num_classes, splits)


def save_graph(graph: HeteroGraph, directory: str | os.PathLike) -> Path:
    """Write ``graph`` in the directory format; output is byte-deterministic."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    node_specs = []
    for nt in graph.node_types:
        spec: dict = {"name": nt.name, "count": nt.count}
        if nt.features is not None:
            spec["feature_file"] = f"{nt.name}_features.csv"
            spec["feature_dim"] = nt.feature_dim
            _write_lines(root / spec["feature_file"], (",".join(repr(float(v)) for v in row) for row in nt.features))
        if nt.name == graph.target_type:
            spec["labels_file"] = f"{nt.name}_labels.csv"
            spec["num_classes"] = graph.num_classes
            _write_lines(root / spec["labels_file"], (f"{i},{int(y)}" for i, y in enumerate(graph.labels)))
        node_specs.append(spec)
    edge_specs = []
    for et in graph.edge_types:
        fname = f"{et.src}__{et.rel}__{et.dst}.csv"
        _write_lines(root / fname, (f"{int(s)},{int(d)}" for s, d in et.edges))
        edge_specs.append({"src": et.src, "rel": et.rel, "dst": et.dst, "file": fname})
    split_of = np.empty(graph.num_targets, dtype=object)
    for name in SPLITS:
        split_of[graph.splits[name]] = name
    _write_lines(root / "splits.csv", (f"{i},{s}" for i, s in enumerate(split_of)))
    manifest = {
        "node_types": node_specs,
        "edge_types": edge_specs,
        "target_type": graph.target_type,
        "splits_file": "splits.csv",
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return root


def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


# ----------------------------------------------------------------------
# synthetic heterogeneous stochastic block model


@dataclass
class HsbmSpec:
    """Planted-partition heterogeneous graph.

    The target type carries the planted communities as labels. Every
    auxiliary type is linked to the target type by its own relation; with
    ``target_edges`` the target type also has an intra-type relation. Pairs in
    the same community connect with probability ``p_in``, others with
    ``p_out``. Only the target type gets Gaussian features unless
    ``aux_feature_dim`` is positive.
    """

    target_type: str = "target"
    target_count: int = 600
    aux_types: tuple[str, ...] = ("aux1", "aux2")
    aux_counts: tuple[int, ...] = (300, 300)
    communities: int = 4
    community_probs: tuple[float, ...] | None = None
    p_in: float = 0.1
    p_out: float = 0.005
    target_edges: bool = True
    feature_dim: int = 16
    feature_separation: float = 1.0
    feature_noise: float = 1.0
    aux_feature_dim: int = 0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}")
        if self.target_count <= 0 or any(c <= 0 for c in self.aux_counts):
            raise ValueError("node counts must be positive")
        if len(self.aux_types) != len(self.aux_counts):
            raise ValueError("aux_types and aux_counts differ in length")
        if self.communities < 1:
            raise ValueError("need at least one community")
        if self.target_type in self.aux_types or len(set(self.aux_types)) != len(self.aux_types):
            raise ValueError("node type names must be distinct")
        if self.community_probs is not None:
            probs = np.asarray(self.community_probs, dtype=float)
            if probs.shape != (self.communities,) or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
                raise ValueError("community_probs must be a distribution over the communities")
        if self.feature_dim < 0 or self.aux_feature_dim < 0 or self.feature_noise < 0:
            raise ValueError("feature sizes and noise must be non-negative")


def _balanced_assignment(n: int, probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    raw = probs * n
    sizes = np.floor(raw).astype(np.int64)
    remainder = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    labels = np.repeat(np.arange(len(probs)), sizes)
    return rng.permutation(labels)


def _bipartite_edges(a: np.ndarray, b: np.ndarray, p_in: float, p_out: float, rng) -> np.ndarray:
    same = a[:, None] == b[None, :]
    prob = np.where(same, p_in, p_out)
    hit = rng.random(prob.shape) < prob
    return np.argwhere(hit).astype(np.int64)


def generate_hsbm(spec: HsbmSpec) -> HeteroGraph:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k = spec.communities
    probs = np.full(k, 1.0 / k) if spec.community_probs is None else np.asarray(spec.community_probs, dtype=float)

    labels = _balanced_assignment(spec.target_count, probs, rng)
    aux_labels = [_balanced_assignment(c, probs, rng) for c in spec.aux_counts]

    def gaussian_features(community: np.ndarray, dim: int) -> np.ndarray | None:
        if dim == 0:
            return None
        means = rng.normal(size=(k, dim))
        means *= spec.feature_separation / np.linalg.norm(means, axis=1, keepdims=True)
        return means[community] + spec.feature_noise * rng.normal(size=(community.size, dim))

    node_types = [NodeType(spec.target_type, spec.target_count, gaussian_features(labels, spec.feature_dim))]
    for name, count, lab in zip(spec.aux_types, spec.aux_counts, aux_labels):
        node_types.append(NodeType(name, count, gaussian_features(lab, spec.aux_feature_dim)))

    edge_types = []
    if spec.target_edges:
        pairs = _bipartite_edges(labels, labels, spec.p_in, spec.p_out, rng)
        pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        edge_types.append(EdgeType(spec.target_type, "link", spec.target_type, pairs))
    for name, lab in zip(spec.aux_types, aux_labels):
        edge_types.append(
            EdgeType(spec.target_type, f"to_{name}", name, _bipartite_edges(labels, lab, spec.p_in, spec.p_out, rng))
        )

    order = rng.permutation(spec.target_count)
    n_train = int(round(0.4 * spec.target_count))
    n_val = int(round(0.3 * spec.target_count))
    splits = {name: np.zeros(spec.target_count, dtype=bool) for name in SPLITS}
    splits["train"][order[:n_train]] = True
    splits["val"][order[n_train : n_train + n_val]] = True
    splits["test"][order[n_train + n_val :]] = True
    return HeteroGraph(node_types, edge_types, spec.target_type, labels, k, splits)


# ----------------------------------------------------------------------
# mini-batch sampling


@dataclass
class Batch:
    """A sampled sub-graph padded to ``max_nodes`` rows for every node type.

    Target-type seed nodes occupy the first ``num_seeds`` local rows.
    ``edges`` maps each edge-type key to local ``(src, dst)`` pairs.
    """

    types: list[str]
    target_type: str
    node_ids: dict[str, np.ndarray]
    num_seeds: int
    max_nodes: int
    features: dict[str, np.ndarray | None]
    edges: dict[tuple[str, str, str], np.ndarray]

    @property
    def counts(self) -> dict[str, int]:
        return {t: int(self.node_ids[t].size) for t in self.types}

    @property
    def masks(self) -> dict[str, np.ndarray]:
        return {t: np.arange(self.max_nodes) < self.node_ids[t].size for t in self.types}

    @property
    def seed_flags(self) -> np.ndarray:
        return np.arange(self.max_nodes) < self.num_seeds

    @property
    def seed_ids(self) -> np.ndarray:
        return self.node_ids[self.target_type][: self.num_seeds]

    def repad(self, max_nodes: int) -> Batch:
        """Same batch with more padding rows."""
        if max_nodes < max(self.counts.values()):
            raise ValueError("max_nodes smaller than the largest node set")
        feats = {}
        for t, f in self.features.items():
            if f is None:
                feats[t] = None
            else:
                padded = np.zeros((max_nodes, f.shape[1]), dtype=f.dtype)
                padded[: self.node_ids[t].size] = f[: self.node_ids[t].size]
                feats[t] = padded
        return Batch(self.types, self.target_type, self.node_ids, self.num_seeds, max_nodes, feats, self.edges)


def sample_subgraph(
    graph: HeteroGraph,
    seeds: np.ndarray,
    budgets: dict[str, int],
    rng: np.random.Generator,
    hops: int = 2,
    max_nodes: int | None = None,
    dtype=np.float64,
) -> Batch:
    """Uniform frontier-expansion sampler.

    Starting from ``seeds`` (target-type ids), each hop draws, for every node
    type, up to ``budgets[type]`` not-yet-included neighbours of the current
    frontier, uniformly without replacement. The batch holds the induced
    sub-graph on everything drawn.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.size == 0:
        raise ValueError("empty seed set")
    if np.unique(seeds).size != seeds.size:
        raise ValueError("duplicate seed ids")
    n_target = graph.num_targets
    if seeds.min() < 0 or seeds.max() >= n_target:
        raise ValueError("seed ids must be target-type nodes")
    missing = [t for t in graph.type_names if t not in budgets]
    if missing:
        raise ValueError(f"no sampling budget for types {missing}")

    neigh = graph.neighbors()
    types = graph.type_names
    chosen: dict[str, list[np.ndarray]] = {t: [] for t in types}
    chosen[graph.target_type].append(seeds)
    included = {t: np.zeros(c, dtype=bool) for t, c in graph.counts.items()}
    included[graph.target_type][seeds] = True
    frontier = {graph.target_type: seeds}

    for _ in range(hops):
        nxt = {}
        for t in types:
            pools = [
                neigh[(s, t)][i]
                for s, ids in frontier.items()
                if (s, t) in neigh
                for i in ids.tolist()
            ]
            if not pools or budgets[t] <= 0:
                continue
            cand = np.unique(np.concatenate(pools))
            cand = cand[~included[t][cand]]
            if cand.size == 0:
                continue
            take = cand if cand.size <= budgets[t] else np.sort(rng.choice(cand, size=budgets[t], replace=False))
            included[t][take] = True
            chosen[t].append(take)
            nxt[t] = take
        frontier = nxt
        if not frontier:
            break

    node_ids = {t: (np.concatenate(chosen[t]) if chosen[t] else np.zeros(0, dtype=np.int64)) for t in types}
    largest = max(ids.size for ids in node_ids.values())
    if max_nodes is None:
        max_nodes = largest
    elif max_nodes < largest:
        raise ValueError(f"max_nodes={max_nodes} below sampled node count {largest}")

    local = {}
    for t in types:
        lut = np.full(graph.counts[t], -1, dtype=np.int64)
        lut[node_ids[t]] = np.arange(node_ids[t].size)
        local[t] = lut
    edges = {}
    for et in graph.edge_types:
        s = local[et.src][et.edges[:, 0]]
        d = local[et.dst][et.edges[:, 1]]
        keep = (s >= 0) & (d >= 0)
        edges[et.key] = np.stack([s[keep], d[keep]], axis=1)

    features = {}
    for nt in graph.node_types:
        if nt.features is None:
            features[nt.name] = None
        else:
            padded = np.zeros((max_nodes, nt.feature_dim), dtype=dtype)
            padded[: node_ids[nt.name].size] = nt.features[node_ids[nt.name]]
            features[nt.name] = padded
    return Batch(types, graph.target_type, node_ids, int(seeds.size), max_nodes, features, edges)
