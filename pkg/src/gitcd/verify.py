"""Self-check suite: finite-difference gradients, metric oracles, worked examples.

Every check reports the largest error it observed against its tolerance.
``run_checks(inject="kl-sign-flip")`` deliberately breaks the KL loss so the
suite can be shown to catch it.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import attention, clustering, metrics, trainer
from . import autodiff as ad
from .autodiff import Tensor
from .graph import HsbmSpec, generate_hsbm, sample_subgraph

GRAD_TOL = 1e-4
EXAMPLE_TOL = 1e-6
ORACLE_TOL = 1e-12
PADDING_TOL = 1e-10
INJECTIONS = ("kl-sign-flip",)


@dataclass
class CheckResult:
    module: str
    name: str
    max_error: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.module:<16} {self.name:<34} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


# ----------------------------------------------------------------------
# gradients


def _op_cases():
    mask = np.array([[True, False, True], [False, False, True]])
    score_mask = np.array([[False, True, False], [False, False, False]])
    return [
        ("add_broadcast", lambda a, b: ad.sum((a + b) ** 2), [(3, 4), (4,)]),
        ("sub_neg", lambda a, b: ad.sum((a - b) * -a), [(3, 2), (3, 2)]),
        ("mul_div", lambda a, b: ad.sum(a * b / (b * b + 1.0)), [(3, 2), (3, 2)]),
        ("power", lambda a: ad.sum(a**3), [(2, 3)]),
        ("exp_log", lambda a: ad.sum(ad.log(ad.exp(a) + 1.0)), [(3, 3)]),
        ("sqrt", lambda a: ad.sum(ad.sqrt(a * a + 1.0)), [(4,)]),
        ("relu", lambda a: ad.sum(ad.relu(a) * a), [(4, 3)]),
        ("softplus", lambda a: ad.sum(ad.softplus(a) ** 2), [(5,)]),
        ("where", lambda a, b: ad.sum(ad.where(np.array([True, False, True]), a, b) ** 2), [(3,), (3,)]),
        ("matmul", lambda a, b: ad.sum(ad.matmul(a, b) ** 2), [(2, 3), (3, 4)]),
        ("batched_matmul", lambda a, b: ad.sum((a @ b) ** 2), [(2, 3, 4), (2, 4, 2)]),
        ("reshape_transpose", lambda a: ad.sum(ad.transpose(ad.reshape(a, (2, 3, 2)), (1, 0, 2)) * np.arange(12.0).reshape(3, 2, 2)), [(4, 3)]),
        ("getitem", lambda a: ad.sum(a[np.array([0, 2, 2]), np.array([1, 0, 0])] ** 2), [(3, 2)]),
        ("take_rows", lambda a: ad.sum(ad.take_rows(a, np.array([0, 2, 2])) ** 2), [(3, 2)]),
        ("concat", lambda a, b: ad.sum(ad.concat([a, b], axis=1) ** 2 * np.arange(5.0)), [(2, 2), (2, 3)]),
        ("sum_axis", lambda a: ad.sum(ad.sum(a, axis=0) ** 2), [(3, 4)]),
        ("mean_axis", lambda a: ad.sum(ad.mean(a, axis=1) ** 3), [(3, 4)]),
        ("masked_fill", lambda a: ad.sum(ad.softmax(ad.masked_fill(a, score_mask)) ** 2), [(2, 3)]),
        ("masked_fill_zero", lambda a: ad.sum(ad.masked_fill(a, mask, 0.0) ** 2), [(2, 3)]),
        ("softmax", lambda a: ad.sum(ad.softmax(a, axis=-1) * np.arange(4.0)), [(3, 4)]),
        ("log_softmax", lambda a: ad.sum(ad.log_softmax(a) * np.arange(4.0)), [(3, 4)]),
        ("layer_norm", lambda x, g, b: ad.sum(ad.layer_norm(x, g, b) * np.arange(5.0)), [(3, 5), (5,), (5,)]),
        ("pairwise_sq_dist", lambda x, y: ad.sum(ad.sqrt(ad.pairwise_sq_dist(x, y) + 1.0)), [(4, 3), (2, 3)]),
        ("dropout", lambda a: ad.sum(ad.dropout(a, 0.5, np.random.default_rng(0), True) ** 2), [(4, 4)]),
    ]


def check_ops(seeds: int = 3) -> list[CheckResult]:
    out = []
    for name, fn, shapes in _op_cases():
        start = time.perf_counter()
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            params = [rng.normal(size=s) for s in shapes]
            worst = max(worst, ad.finite_diff_check(fn, params, step=1e-6))
        out.append(CheckResult("autodiff", f"grad {name}", worst, GRAD_TOL, time.perf_counter() - start))
    return out


def _tiny_setup():
    spec = HsbmSpec(target_count=24, aux_counts=(12, 10), communities=2, p_in=0.4, p_out=0.05, feature_dim=3, aux_feature_dim=2, seed=3)
    graph = generate_hsbm(spec)
    cfg = trainer.TrainConfig(d_model=8, heads=2, blocks=1, batch_size=8, budget=4, dropout=0.0, dtype="float64")
    budgets = cfg.budgets_for(graph.type_names)
    batch = sample_subgraph(graph, np.arange(8), budgets, np.random.default_rng(1), 2)
    state = trainer.lazy_init(trainer.Skeleton.from_graph(graph), batch, cfg)
    rng = np.random.default_rng(2)
    for name, value in state.params.items():  # move off the symmetric initial point
        state.params[name] = value + 0.1 * rng.normal(size=value.shape)
    state.centers = rng.normal(size=(2, 8))
    return graph, state, batch


def check_pipeline() -> CheckResult:
    """Encoder -> attention block -> classifier + KL + silhouette, all parameters at once."""
    start = time.perf_counter()
    graph, state, batch = _tiny_setup()
    names = state.names
    seeds = batch.seed_ids
    labels = graph.labels[seeds]
    labelled = np.ones(seeds.size, dtype=bool)
    z0, _ = trainer.forward(state, batch)
    q0 = clustering.soft_assign(z0, state.centers, state.cluster_state.temperature).data
    p = clustering.target_distribution(q0)

    def loss(*arrays):
        params = dict(zip(names, arrays))
        z, logits = trainer.forward(state, batch, params)
        return trainer.batch_losses(state, z, logits, labels, labelled, p, params, trainer.LossToggles()).total

    err = ad.finite_diff_check(loss, [state.params[n] for n in names], step=1e-6)
    return CheckResult("trainer", "grad encoder->attention->losses", err, GRAD_TOL, time.perf_counter() - start)


# ----------------------------------------------------------------------
# worked examples


def check_examples(inject: str | None = None) -> list[CheckResult]:
    out = []

    def add(module, name, got, want):
        err = float(np.max(np.abs(np.asarray(got, dtype=np.float64) - np.asarray(want, dtype=np.float64))))
        out.append(CheckResult(module, name, err, EXAMPLE_TOL))

    q = clustering.soft_assign(np.zeros((1, 2)), np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0).data
    add("cluster_head", "soft_assign [2/3, 1/3]", q, [[2 / 3, 1 / 3]])
    add("cluster_head", "target fixed point", clustering.target_distribution(np.array([[0.8, 0.2]])), [[0.8, 0.2]])
    p = clustering.target_distribution(np.array([[0.8, 0.2], [0.6, 0.4]]))
    add("cluster_head", "target sharpening", np.round(p[0], 4), [0.8727, 0.1273])
    kl = clustering.kl_clustering_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]), 1e-12, verbatim_sign=inject == "kl-sign-flip")
    add("cluster_head", "KL([1,0] || [.5,.5]) = ln 2", float(kl.data), math.log(2))
    s = clustering.silhouette_values(np.array([[0.0], [1.0], [5.0]]), np.array([0, 0, 1])).data
    add("cluster_head", "silhouette {0.8, 0.75, 0}", s, [0.8, 0.75, 0.0])
    centers, _ = clustering.kmeans(np.array([[0.0], [0.1], [10.0], [10.1]]), 2, np.random.default_rng(0))
    add("cluster_head", "k-means {0.05, 10.05}", np.sort(centers[:, 0]), [0.05, 10.05])
    add("hetero_attention", "identity scores 0.7071", attention.type_scores(np.eye(2), np.eye(2)).data, np.eye(2) / math.sqrt(2))
    add("metrics", "silhouette score 0.51667", metrics.silhouette_score([[0.0], [1.0], [5.0]], [0, 0, 1]), 31 / 60)
    add("metrics", "ACC [[3,1],[0,4]] = 7/8", metrics.clustering_accuracy([0] * 4 + [1] * 4, [0, 0, 0, 1, 1, 1, 1, 1]), 7 / 8)
    return out


# ----------------------------------------------------------------------
# metric oracles


def _partitions(n: int, max_blocks: int = 3):
    def grow(prefix, used):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for b in range(min(used + 1, max_blocks)):
            yield from grow(prefix + [b], max(used, b + 1))

    yield from grow([], 0)


def _brute_nmi(a, b) -> float:
    n = len(a)
    pa, pb, pab = Counter(a), Counter(b), Counter(zip(a, b))
    ha = -sum(c / n * math.log(c / n) for c in pa.values())
    hb = -sum(c / n * math.log(c / n) for c in pb.values())
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    mi = sum(c / n * math.log(c * n / (pa[x] * pb[y])) for (x, y), c in pab.items())
    return mi / ((ha + hb) / 2)


def _brute_ari(a, b) -> float:
    pairs = list(combinations(range(len(a)), 2))
    same_a = sum(a[i] == a[j] for i, j in pairs)
    same_b = sum(b[i] == b[j] for i, j in pairs)
    both = sum(a[i] == a[j] and b[i] == b[j] for i, j in pairs)
    expected = same_a * same_b / len(pairs)
    maximum = (same_a + same_b) / 2
    return 1.0 if maximum == expected else (both - expected) / (maximum - expected)


def check_metric_oracles(max_n: int = 6) -> list[CheckResult]:
    start = time.perf_counter()
    worst_nmi = worst_ari = 0.0
    for n in range(1, max_n + 1):
        parts = list(_partitions(n))
        for a in parts:
            for b in parts:
                worst_nmi = max(worst_nmi, abs(metrics.nmi(a, b) - _brute_nmi(a, b)))
                if n >= 2:
                    worst_ari = max(worst_ari, abs(metrics.ari(a, b) - _brute_ari(a, b)))
    took = time.perf_counter() - start
    return [
        CheckResult("metrics", f"NMI exhaustive n<={max_n}", worst_nmi, ORACLE_TOL, took),
        CheckResult("metrics", f"ARI exhaustive n<={max_n}", worst_ari, ORACLE_TOL, took),
    ]


# ----------------------------------------------------------------------
# attention invariants


def _random_block(counts, d, max_nodes, seed):
    rng = np.random.default_rng(seed)
    params = {k: rng.normal(scale=0.5, size=s) for k, s in attention.param_shapes(list(counts), d, 2 * d, "blk.0").items()}
    h, masks = {}, {}
    for t, n in counts.items():
        x = np.zeros((max_nodes, d))
        x[:n] = rng.normal(size=(n, d))
        h[t] = Tensor(x)
        masks[t] = np.arange(max_nodes) < n
    return h, masks, params


def check_padding_invariance() -> CheckResult:
    counts = {"t": 6, "a": 4, "b": 5}
    h, masks, params = _random_block(counts, 8, 6, seed=9)
    big = {t: Tensor(np.vstack([x.data, np.zeros((3, 8))])) for t, x in h.items()}
    big_masks = {t: np.arange(9) < n for t, n in counts.items()}
    worst = 0.0
    for cross in (False, True):
        cfg = attention.AttentionConfig(heads=2, cross_type_values=cross)
        small = attention.transformer_block(h, masks, params, "blk.0", "t", cfg)
        large = attention.transformer_block(big, big_masks, params, "blk.0", "t", cfg)
        for t, n in counts.items():
            worst = max(worst, float(np.abs(large[t].data[:n] - small[t].data[:n]).max()))
    return CheckResult("hetero_attention", "padding 6 -> 9 rows invariance", worst, PADDING_TOL)


def check_reduction() -> CheckResult:
    counts = {"t": 5, "a": 7}
    h, masks, p = _random_block(counts, 8, 7, seed=10)
    out = attention.multi_head_attention(h, masks, p, "blk.0", "t", attention.AttentionConfig(heads=4, attended=()))
    x = h["t"].data[:5]
    q, k, v = x @ p["blk.0.q.t"], x @ p["blk.0.k.t"], x @ p["blk.0.v.t"]
    heads = []
    for i in range(4):
        sl = slice(2 * i, 2 * i + 2)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(2)
        a = np.exp(s - s.max(axis=1, keepdims=True))
        heads.append((a / a.sum(axis=1, keepdims=True)) @ v[:, sl])
    ref = np.concatenate(heads, axis=1) @ p["blk.0.o"]
    return CheckResult("hetero_attention", "reduces to single-type attention", float(np.abs(out["t"].data[:5] - ref).max()), PADDING_TOL)


# ----------------------------------------------------------------------


def run_checks(inject: str | None = None) -> list[CheckResult]:
    if inject is not None and inject not in INJECTIONS:
        raise ValueError(f"unknown injection {inject!r}; choose from {INJECTIONS}")
    results = check_ops()
    results.append(check_pipeline())
    results += check_examples(inject)
    results += check_metric_oracles()
    results.append(check_padding_invariance())
    results.append(check_reduction())
    return results


def report(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    failed = [r for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        lines.append(f"failed: {r.module}: {r.name}")
    return "\n".join(lines)
