import numpy as np
import pytest

from fedinit.client import (ShareEntry, ClientShare, compute_all_shares,
                            compute_class_covariances, compute_gram_stats)
from fedinit.errors import FedInitError, InsufficientMeansError
from fedinit.partition import ClientAssignment, dirichlet_partition
from fedinit.server import (ServerAccumulator, aggregate_gram,
                            aggregate_means, aggregate_oracle_covariances,
                            estimate_covariances)

from conftest import make_dataset, pooled_class_cov, random_dataset


def share(client_id, entries, dim):
    return ClientShare(client_id,
                       tuple(ShareEntry(l, float(n), np.asarray(m, float))
                             for l, n, m in entries), dim)


class TestAggregateMeans:
    def test_weighted_average(self):
        shares = [
            share(0, [(0, 3, [1.0]), (1, 1, [5.0])], 1),
            share(1, [(0, 1, [9.0])], 1),
        ]
        g = aggregate_means(shares, 2)
        # class 0: (3*1 + 1*9) / 4
        np.testing.assert_allclose(g.class_means[0], [3.0])
        np.testing.assert_allclose(g.class_means[1], [5.0])
        np.testing.assert_array_equal(g.class_counts, [4.0, 1.0])
        np.testing.assert_allclose(g.global_mean, [(3 + 9 + 5) / 5.0])
        assert g.total_count == 5.0

    def test_matches_centralized_means(self, rng):
        data = random_dataset(rng, 4, 6)
        assignment = dirichlet_partition(data, 5, 0.4, seed=2)
        g = aggregate_means(compute_all_shares(data, assignment), 4)
        for c in range(4):
            rows = data.features[data.labels == c]
            np.testing.assert_allclose(g.class_means[c], rows.mean(axis=0),
                                       rtol=1e-10)
        np.testing.assert_allclose(g.global_mean,
                                   data.features.mean(axis=0), rtol=1e-10)

    def test_client_order_invariance_bitwise(self, rng):
        # reduction is fixed to ascending client id regardless of list order
        data = random_dataset(rng, 3, 4)
        assignment = dirichlet_partition(data, 6, 0.5, seed=3)
        shares = compute_all_shares(data, assignment)
        g1 = aggregate_means(shares, 3)
        g2 = aggregate_means(list(reversed(shares)), 3)
        np.testing.assert_array_equal(g1.class_means, g2.class_means)
        np.testing.assert_array_equal(g1.global_mean, g2.global_mean)

    def test_absent_class_zero_mean(self):
        g = aggregate_means([share(0, [(0, 2, [1.0])], 1)], 3)
        assert g.present.tolist() == [True, False, False]
        np.testing.assert_array_equal(g.class_means[1], [0.0])

    def test_duplicate_client_rejected(self):
        s = share(0, [(0, 1, [1.0])], 1)
        with pytest.raises(FedInitError, match="duplicate"):
            aggregate_means([s, s], 1)

    def test_wrong_type_rejected(self):
        with pytest.raises(FedInitError, match="ClientShare"):
            aggregate_means([object()], 1)

    def test_empty_rejected(self):
        with pytest.raises(FedInitError):
            aggregate_means([], 1)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(FedInitError, match="range"):
            aggregate_means([share(0, [(5, 1, [1.0])], 1)], 2)

    def test_nonpositive_count_rejected(self):
        with pytest.raises(FedInitError, match="positive"):
            aggregate_means([share(0, [(0, 0, [1.0])], 1)], 1)


class TestEstimateCovariances:
    def test_two_means_hand_case(self):
        # one class, means +1 and -1 with count 2 each: aggregate mean 0,
        # so sum w_i delta_i^2 = 2 + 2 = 4 over denominator m - 1 = 1
        shares = [share(0, [(0, 2, [1.0])], 1), share(1, [(0, 2, [-1.0])], 1)]
        g = aggregate_means(shares, 1)
        np.testing.assert_allclose(g.class_means[0], [0.0])
        est = estimate_covariances(shares, g, gamma=0.0)
        np.testing.assert_allclose(est.covariances[0], [[4.0]])

    def test_gamma_adds_identity(self):
        shares = [share(0, [(0, 2, [1.0])], 1), share(1, [(0, 2, [-1.0])], 1)]
        g = aggregate_means(shares, 1)
        est = estimate_covariances(shares, g, gamma=0.5)
        np.testing.assert_allclose(est.covariances[0], [[4.5]])

    def test_single_mean_raises_by_default(self):
        shares = [share(0, [(0, 3, [1.0, 2.0])], 2)]
        g = aggregate_means(shares, 1)
        with pytest.raises(InsufficientMeansError, match=r"\[0\]"):
            estimate_covariances(shares, g, gamma=1.0)

    def test_single_mean_fallback_flagged(self):
        shares = [share(0, [(0, 3, [1.0, 2.0])], 2)]
        g = aggregate_means(shares, 1)
        est = estimate_covariances(shares, g, gamma=2.0,
                                   allow_single_mean=True)
        np.testing.assert_allclose(est.covariances[0], 2.0 * np.eye(2))
        assert est.fallback.tolist() == [True]
        assert est.mean_counts.tolist() == [1]

    def test_scale_equivariance(self, rng):
        # scaling every feature by s scales the estimate by s^2
        data = random_dataset(rng, 3, 4)
        assignment = dirichlet_partition(data, 5, 1.0, seed=4)
        shares = compute_all_shares(data, assignment)
        g = aggregate_means(shares, 3)
        base = estimate_covariances(shares, g, 0.0, allow_single_mean=True)

        scaled = make_dataset(2.0 * data.features, data.labels, 3)
        s_shares = compute_all_shares(scaled, assignment)
        sg = aggregate_means(s_shares, 3)
        s_est = estimate_covariances(s_shares, sg, 0.0, allow_single_mean=True)
        np.testing.assert_array_equal(s_est.covariances,
                                      4.0 * base.covariances)

        scaled3 = make_dataset(3.0 * data.features, data.labels, 3)
        shares3 = compute_all_shares(scaled3, assignment)
        g3 = aggregate_means(shares3, 3)
        est3 = estimate_covariances(shares3, g3, 0.0, allow_single_mean=True)
        np.testing.assert_allclose(est3.covariances, 9.0 * base.covariances,
                                   rtol=1e-10, atol=1e-10)

    def test_negative_gamma_rejected(self):
        shares = [share(0, [(0, 1, [1.0])], 1)]
        g = aggregate_means(shares, 1)
        with pytest.raises(ValueError):
            estimate_covariances(shares, g, -0.1)

    def test_mean_counts(self, rng):
        data = random_dataset(rng, 2, 3)
        assignment = dirichlet_partition(data, 4, 5.0, seed=1)
        shares = compute_all_shares(data, assignment)
        g = aggregate_means(shares, 2)
        est = estimate_covariances(shares, g, 1.0, allow_single_mean=True)
        held = sum((len([e for e in s.entries if e.label == 0])) for s in shares)
        assert est.mean_counts[0] == held


class TestOraclePooling:
    def test_hand_case(self):
        # two clients, one class, samples {0, 2} and {4, 6}:
        # pooled covariance of {0,2,4,6} has variance 20/3
        data = make_dataset([[0.0], [2.0], [4.0], [6.0]], [0] * 4)
        assignment = ClientAssignment(2, np.array([0, 0, 1, 1]))
        stats = [compute_class_covariances(data, assignment, k)
                 for k in range(2)]
        g, est = aggregate_oracle_covariances(stats, 1, gamma=0.0)
        np.testing.assert_allclose(g.class_means[0], [3.0])
        np.testing.assert_allclose(est.covariances[0], [[20.0 / 3.0]],
                                   rtol=1e-12)

    def test_matches_centralized(self, rng):
        data = random_dataset(rng, 4, 5, per_class_low=6)
        assignment = dirichlet_partition(data, 6, 1.0, seed=5)
        stats = [compute_class_covariances(data, assignment, k)
                 for k in range(6)]
        _, est = aggregate_oracle_covariances(stats, 4, gamma=0.0)
        for c in range(4):
            np.testing.assert_allclose(est.covariances[c],
                                       pooled_class_cov(data, c),
                                       rtol=1e-10, atol=1e-12)

    def test_single_sample_class_rejected(self):
        data = make_dataset([[1.0], [2.0], [3.0]], [0, 1, 1])
        stats = [compute_class_covariances(data,
                                           ClientAssignment(1, np.zeros(3, dtype=np.int64)),
                                           0)]
        with pytest.raises(FedInitError, match="single"):
            aggregate_oracle_covariances(stats, 2, gamma=0.0)

    def test_gamma_added_once(self, rng):
        data = random_dataset(rng, 2, 3, per_class_low=8)
        assignment = dirichlet_partition(data, 3, 1.0, seed=6)
        stats = [compute_class_covariances(data, assignment, k)
                 for k in range(3)]
        _, base = aggregate_oracle_covariances(stats, 2, gamma=0.0)
        _, reg = aggregate_oracle_covariances(stats, 2, gamma=0.7)
        np.testing.assert_allclose(reg.covariances,
                                   base.covariances + 0.7 * np.eye(3),
                                   rtol=1e-10, atol=1e-12)


class TestAggregateGram:
    def test_sums_parts(self, rng):
        data = random_dataset(rng, 3, 4)
        assignment = dirichlet_partition(data, 5, 0.8, seed=7)
        stats = [compute_gram_stats(data, assignment, k) for k in range(5)]
        gram, label_sums = aggregate_gram(stats)
        np.testing.assert_allclose(gram, data.features.T @ data.features,
                                   rtol=1e-12)
        for c in range(3):
            np.testing.assert_allclose(
                label_sums[:, c], data.features[data.labels == c].sum(axis=0),
                rtol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(FedInitError):
            aggregate_gram([])


class TestServerAccumulator:
    def test_share_once(self, rng):
        data = random_dataset(rng, 2, 3)
        assignment = dirichlet_partition(data, 4, 1.0, seed=8)
        shares = compute_all_shares(data, assignment)
        acc = ServerAccumulator(num_classes=2)
        acc.accumulate_round(shares[:2])
        acc.accumulate_round(shares[1:])  # client 1 repeats, ignored
        collected = acc.collected()
        assert [s.client_id for s in collected] == [0, 1, 2, 3]
        assert collected[1] is shares[1]
        assert acc.rounds == 2

    def test_coverage(self):
        acc = ServerAccumulator(num_classes=1)
        acc.accumulate_round([share(2, [(0, 1, [1.0])], 1)])
        assert acc.coverage(4) == 0.25

    def test_repeat_warning_logged(self, caplog):
        acc = ServerAccumulator(num_classes=1)
        s = share(0, [(0, 1, [1.0])], 1)
        acc.accumulate_round([s])
        with caplog.at_level("WARNING"):
            acc.accumulate_round([s])
        assert any("already contributed" in r.message for r in caplog.records)

    def test_rejects_unknown_type(self):
        acc = ServerAccumulator(num_classes=1)
        with pytest.raises(FedInitError):
            acc.accumulate_round([42])
