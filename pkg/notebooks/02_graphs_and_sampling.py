"""
Synthetic heterogeneous graphs and mini-batches
===============================================

The generator plants communities in a heterogeneous stochastic block
model: one labelled target type plus auxiliary types, with edges far more
likely inside a community than across. Training never sees the whole
graph at once; it sees sampled subgraphs padded to a common width.
"""

import numpy as np

from gitcd.graph import HsbmSpec, generate_hsbm, sample_subgraph

graph = generate_hsbm(HsbmSpec(target_count=200, aux_counts=(100, 80), communities=4, seed=1))
print("node types:", graph.counts)
for et in graph.edge_types:
    print(f"  {et.src} -[{et.rel}]-> {et.dst}: {len(et.edges)} edges")

# How assortative is the target-target relation?
link = next(et for et in graph.edge_types if et.src == et.dst)
same = graph.labels[link.edges[:, 0]] == graph.labels[link.edges[:, 1]]
print(f"fraction of target links inside a community: {same.mean():.2f}")

# Features are Gaussian blobs around one random direction per community.
x = graph.node_type("target").features
centroids = np.stack([x[graph.labels == c].mean(axis=0) for c in range(4)])
print("centroid distances:\n", np.linalg.norm(centroids[:, None] - centroids[None], axis=-1).round(2))

# Sample a two-hop subgraph around 16 seed targets, at most 8 new nodes
# of each type per hop. Every type is padded to the same max_nodes.
batch = sample_subgraph(graph, np.arange(16), {t: 8 for t in graph.type_names}, np.random.default_rng(0), hops=2)
print("real nodes per type:", batch.counts, "padded width:", batch.max_nodes)
print("seeds come first among target rows:", batch.node_ids[graph.target_type][:5], "...")
print("induced edges per relation:", {k[1]: len(v) for k, v in batch.edges.items()})
