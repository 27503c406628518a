import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gitcd import autodiff as ad
from gitcd import metrics
from gitcd.autodiff import ContractError, Tensor
from gitcd.clustering import (
    SoftClusterState,
    kl_clustering_loss,
    kmeans,
    silhouette_loss,
    silhouette_values,
    soft_assign,
    target_distribution,
    temperature,
)


def exhaustive_two_means(x):
    """Best 2-clustering of 1-D points by trying every labelling."""
    best = None
    for labels in itertools.product([0, 1], repeat=len(x)):
        labels = np.array(labels)
        if labels.min() == labels.max():
            continue
        centers = np.array([x[labels == j].mean() for j in (0, 1)])
        cost = ((x - centers[labels]) ** 2).sum()
        if best is None or cost < best[0]:
            best = (cost, centers, labels)
    return best


class TestKmeans:
    def test_two_clear_groups(self):
        x = np.array([0.0, 0.1, 10.0, 10.1])
        _, oracle_centers, oracle_labels = exhaustive_two_means(x)
        centers, labels = kmeans(x[:, None], 2, np.random.default_rng(0))
        np.testing.assert_allclose(np.sort(centers[:, 0]), np.sort(oracle_centers), atol=1e-6)
        np.testing.assert_allclose(np.sort(centers[:, 0]), [0.05, 10.05], atol=1e-6)
        assert metrics.ari(labels, oracle_labels) == 1.0

    def test_single_cluster_is_mean(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        centers, labels = kmeans(x, 1, np.random.default_rng(0))
        np.testing.assert_allclose(centers[0], x.mean(axis=0), atol=1e-12)
        assert np.all(labels == 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_objective_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(60, 4)) + rng.integers(0, 3, size=(60, 1)) * 2.0
        history = []
        kmeans(x, 4, rng, history=history)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((2, 2)), 3, np.random.default_rng(0))

    def test_duplicate_points_do_not_break_seeding(self):
        centers, labels = kmeans(np.zeros((5, 2)), 2, np.random.default_rng(0))
        assert centers.shape == (2, 2) and labels.shape == (5,)


class TestSoftAssign:
    def test_direct_evaluation(self):
        q = soft_assign(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0).data
        np.testing.assert_allclose(q, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_equidistant_is_uniform(self):
        centers = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        q = soft_assign(np.zeros((1, 2)), centers, 0.7).data
        np.testing.assert_allclose(q, np.full((1, 4), 0.25), atol=1e-15)

    def test_hot_limit_is_uniform(self):
        rng = np.random.default_rng(2)
        q = soft_assign(rng.normal(size=(5, 3)), rng.normal(size=(3, 3)), 1e9).data
        np.testing.assert_allclose(q, np.full((5, 3), 1.0 / 3.0), atol=1e-6)

    @pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
    def test_rows_sum_to_one(self, t):
        rng = np.random.default_rng(int(t * 10))
        q = soft_assign(rng.normal(size=(30, 5)) * 3, rng.normal(size=(4, 5)), t).data
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((q >= 0) & (q <= 1))

    def test_temperature_reparameterization(self):
        raw = SoftClusterState.raw_from_temperature(1.0)
        assert temperature(raw).data[0] == pytest.approx(1.0, abs=1e-15)
        state = SoftClusterState(np.zeros((2, 3)), raw)
        assert state.temperature == pytest.approx(1.0, abs=1e-15) and state.k == 2


class TestTargetDistribution:
    def test_uniform_rows(self):
        np.testing.assert_allclose(target_distribution(np.full((4, 3), 1 / 3)), np.full((4, 3), 1 / 3), atol=1e-15)

    def test_single_row_fixed_point(self):
        np.testing.assert_allclose(target_distribution(np.array([[0.8, 0.2]])), [[0.8, 0.2]], atol=1e-12)

    def test_sharpening(self):
        q = np.array([[0.8, 0.2], [0.6, 0.4]])
        # f = (1.4, 0.6); row 1 weights 0.64/1.4 and 0.04/0.6
        w = np.array([0.64 / 1.4, 0.04 / 0.6])
        p = target_distribution(q)
        np.testing.assert_allclose(p[0], w / w.sum(), atol=1e-12)
        np.testing.assert_allclose(p[0], [0.8727, 0.1273], atol=1e-4)
        assert p[0, 0] > q[0, 0]

    def test_empty_cluster_column(self):
        p = target_distribution(np.array([[1.0, 0.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(p, [[1.0, 0.0], [1.0, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_argmax_preserved_with_equal_frequencies(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        # cyclic shifts of one row give every column the same frequency
        row = rng.dirichlet(np.ones(k))
        q = np.stack([np.roll(row, s) for s in range(k)])
        p = target_distribution(q)
        np.testing.assert_allclose(q.sum(axis=0), q.sum(axis=0)[0])
        for qi, pi in zip(q, p):
            if np.sum(qi == qi.max()) == 1:
                assert pi.argmax() == qi.argmax()


class TestKlLoss:
    def test_identity(self):
        q = np.array([[0.3, 0.7], [0.5, 0.5]])
        assert kl_clustering_loss(q, q, eps=0.0).data == pytest.approx(0.0, abs=1e-15)

    def test_ln2(self):
        loss = kl_clustering_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]), eps=1e-12).data
        assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_verbatim_sign(self):
        p, q = np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])
        assert float(kl_clustering_loss(p, q, 1e-12, verbatim_sign=True).data) == pytest.approx(-math.log(2), abs=1e-6)

    def test_gibbs_lower_bound(self):
        rng = np.random.default_rng(3)
        eps = 1e-8
        for _ in range(100):
            k = int(rng.integers(2, 6))
            p, q = rng.dirichlet(np.ones(k), size=4), rng.dirichlet(np.ones(k), size=4)
            assert float(kl_clustering_loss(p, q, eps).data) >= -k * eps

    def test_decreases_along_interpolation(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p, q0 = rng.dirichlet(np.ones(3), size=5), rng.dirichlet(np.ones(3), size=5)
            losses = [float(kl_clustering_loss(p, (1 - w) * q0 + w * p, 0.0).data) for w in np.linspace(0, 1, 11)]
            assert all(b < a for a, b in zip(losses, losses[1:]))
            assert losses[-1] == pytest.approx(0.0, abs=1e-12)


class TestSilhouette:
    def test_separated_coincident_pairs(self):
        x = np.array([[0.0], [0.0], [5.0], [5.0]])
        np.testing.assert_array_equal(silhouette_values(x, np.array([0, 0, 1, 1])).data, np.ones(4))

    def test_hand_oracle(self):
        s = silhouette_values(np.array([[0.0], [1.0], [5.0]]), np.array(["A", "A", "B"])).data
        np.testing.assert_allclose(s, [0.8, 0.75, 0.0], atol=1e-12)
        assert float(silhouette_loss(s).data) == pytest.approx(-0.5166666666666667, abs=1e-12)

    def test_all_coincident(self):
        s = silhouette_values(np.zeros((4, 2)), np.array([0, 1, 0, 1])).data
        np.testing.assert_array_equal(s, np.zeros(4))

    def test_single_cluster_rejected(self):
        with pytest.raises(ContractError):
            silhouette_values(np.zeros((3, 1)), np.zeros(3, dtype=int))

    def test_loss_extremes(self):
        assert float(silhouette_loss(np.ones(5)).data) == -1.0

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(np.float64, (12, 3), elements=st.floats(-5, 5, allow_nan=False)),
        st.lists(st.integers(0, 3), min_size=12, max_size=12),
    )
    def test_agrees_with_metrics_and_stays_in_range(self, x, labels):
        labels = np.array(labels)
        if np.unique(labels).size < 2:
            return
        s = silhouette_values(x, labels).data
        np.testing.assert_allclose(s, metrics.silhouette_samples(x, labels), atol=1e-9)
        assert -1.0 - 1e-12 <= -float(silhouette_loss(s).data) <= 1.0 + 1e-12


class TestGradients:
    def test_kl_gradient(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 3))
        centers = rng.normal(size=(3, 3))
        p = target_distribution(soft_assign(x + 0.3, centers, 1.0).data)

        def f(xt, t_raw):
            return kl_clustering_loss(p, soft_assign(xt, centers, temperature(t_raw)))

        assert ad.finite_diff_check(f, [x, np.array([0.4])], step=1e-6) < 1e-4

    def test_silhouette_gradient(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(9, 2)) + np.repeat(np.eye(3, 2) * 4, 3, axis=0)
        labels = np.repeat([0, 1, 2], 3)
        assert ad.finite_diff_check(lambda t: silhouette_loss(silhouette_values(t, labels)), [x], 1e-6) < 1e-4

    def test_silhouette_gradient_with_singleton(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 2))
        labels = np.array([0, 0, 1, 1, 2])
        assert ad.finite_diff_check(lambda t: silhouette_loss(silhouette_values(t, labels)), [x], 1e-6) < 1e-4
