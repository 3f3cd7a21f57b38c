"""Server-side aggregation of client statistics.

Everything here reduces over clients in ascending client_id order. That makes
the floating-point result a function of the set of shares alone, so a
federation reaching full coverage over many rounds produces bit-identical
aggregates to a single-round run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .client import (ClientOracleStats, ClientSecondOrder, ClientShare,
                     ShareEntry)
from .errors import FedInitError, InsufficientMeansError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalMeans:
    """Aggregated class means and counts.

    class_counts are real-valued: integral in the clean path, fractional after
    count perturbation or secure aggregation. Absent classes have count 0 and a
    zero mean row.
    """

    class_means: np.ndarray   # (C, d)
    class_counts: np.ndarray  # (C,)
    global_mean: np.ndarray   # (d,)
    total_count: float

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @property
    def present(self) -> np.ndarray:
        return self.class_counts > 0


def _sorted_shares(shares, kind):
    by_id: dict[int, object] = {}
    for share in shares:
        if not isinstance(share, kind):
            raise FedInitError(f"expected {kind.__name__}, got {type(share).__name__}")
        if share.client_id in by_id:
            raise FedInitError(f"duplicate share for client {share.client_id}")
        by_id[share.client_id] = share
    return [by_id[k] for k in sorted(by_id)]


def aggregate_means(shares: list[ClientShare], num_classes: int) -> GlobalMeans:
    """Count-weighted class means: mu_c = (1/N_c) sum_k n_{k,c} mu_{k,c},
    followed by the count-weighted global mean mu_g = (1/N) sum_c N_c mu_c."""
    shares = _sorted_shares(shares, ClientShare)
    if not shares:
        raise FedInitError("no shares to aggregate")
    dim = shares[0].dim
    sums = np.zeros((num_classes, dim))
    counts = np.zeros(num_classes)
    for share in shares:
        if share.dim != dim:
            raise FedInitError("shares disagree on feature dimension")
        for entry in share.entries:
            if entry.label >= num_classes:
                raise FedInitError(f"label {entry.label} out of range")
            if entry.count <= 0:
                raise FedInitError("share counts must be positive")
            sums[entry.label] += entry.count * entry.mean
            counts[entry.label] += entry.count
    present = counts > 0
    means = np.zeros_like(sums)
    means[present] = sums[present] / counts[present, None]
    total = float(counts.sum())
    if total <= 0:
        raise FedInitError("aggregated counts are empty")
    global_mean = (counts[present, None] * means[present]).sum(axis=0) / total
    return GlobalMeans(means, counts, global_mean, total)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Per-class covariance matrices plus bookkeeping.

    mean_counts m_c is the number of means that arrived for each class; the
    fallback mask marks classes whose covariance was replaced by gamma * I
    because fewer than two means arrived.
    """

    covariances: np.ndarray   # (C, d, d)
    gamma: float
    mean_counts: np.ndarray   # (C,)
    fallback: np.ndarray      # (C,) bool


def estimate_covariances(shares: list[ClientShare], global_means: GlobalMeans,
                         gamma: float, *,
                         allow_single_mean: bool = False) -> CovarianceEstimate:
    """Class covariances from means alone.

    For class c with m_c received means (count w_i, mean mu_i):

        Sigma_c = (1 / (m_c - 1)) * sum_i w_i (mu_i - mu_c)(mu_i - mu_c)^T
                  + gamma * I

    The m_c - 1 denominator makes the estimate unbiased over however many
    means actually arrived. Classes with m_c < 2 raise by default; with
    allow_single_mean=True they fall back to gamma * I and are flagged.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    shares = _sorted_shares(shares, ClientShare)
    c_total, dim = global_means.class_means.shape
    per_class: list[list] = [[] for _ in range(c_total)]
    for share in shares:
        for entry in share.entries:
            per_class[entry.label].append(entry)
    mean_counts = np.array([len(v) for v in per_class], dtype=np.int64)
    starved = [c for c in range(c_total)
               if global_means.class_counts[c] > 0 and mean_counts[c] < 2]
    if starved and not allow_single_mean:
        raise InsufficientMeansError(
            f"classes {starved} received fewer than two means; "
            "cannot estimate a covariance")
    covs = np.zeros((c_total, dim, dim))
    fallback = np.zeros(c_total, dtype=bool)
    eye = np.eye(dim)
    for c in range(c_total):
        if global_means.class_counts[c] <= 0:
            continue
        if mean_counts[c] < 2:
            covs[c] = gamma * eye
            fallback[c] = True
            continue
        weights = np.array([e.count for e in per_class[c]])
        deltas = np.stack([e.mean for e in per_class[c]]) - global_means.class_means[c]
        covs[c] = (weights[:, None] * deltas).T @ deltas / (mean_counts[c] - 1)
        covs[c] += gamma * eye
    return CovarianceEstimate(covs, gamma, mean_counts, fallback)


def aggregate_oracle_covariances(stats: list[ClientOracleStats],
                                 num_classes: int,
                                 gamma: float) -> tuple[GlobalMeans,
                                                        CovarianceEstimate]:
    """Pool local covariances and means into exact global class covariances:

        Sigma_c = sum_k ((n_kc - 1) / (N_c - 1)) S_kc
                + sum_k (n_kc / (N_c - 1)) mu_kc mu_kc^T
                - (N_c / (N_c - 1)) mu_c mu_c^T
                + gamma * I

    which reproduces the covariance of the pooled samples exactly. Requires
    N_c >= 2 for every present class.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    stats = _sorted_shares(stats, ClientOracleStats)
    if not stats:
        raise FedInitError("no oracle statistics to aggregate")
    dim = stats[0].dim
    mean_shares = [ClientShare(s.client_id,
                               tuple(ShareEntry(e.label, e.count, e.mean)
                                     for e in s.entries), dim)
                   for s in stats]
    global_means = aggregate_means(mean_shares, num_classes)
    counts = global_means.class_counts
    singles = [c for c in range(num_classes) if 0 < counts[c] < 2]
    if singles:
        raise FedInitError(f"classes {singles} hold a single sample; "
                           "pooled covariance undefined")
    covs = np.zeros((num_classes, dim, dim))
    for s in stats:
        for e in s.entries:
            n_c = counts[e.label]
            covs[e.label] += ((e.count - 1.0) / (n_c - 1.0)) * e.cov
            covs[e.label] += (e.count / (n_c - 1.0)) * np.outer(e.mean, e.mean)
    eye = np.eye(dim)
    mean_counts = np.zeros(num_classes, dtype=np.int64)
    for s in stats:
        for e in s.entries:
            mean_counts[e.label] += 1
    for c in range(num_classes):
        if counts[c] <= 0:
            continue
        mu = global_means.class_means[c]
        covs[c] -= (counts[c] / (counts[c] - 1.0)) * np.outer(mu, mu)
        covs[c] += gamma * eye
    return global_means, CovarianceEstimate(covs, gamma, mean_counts,
                                            np.zeros(num_classes, dtype=bool))


def aggregate_gram(stats: list[ClientSecondOrder]) -> tuple[np.ndarray, np.ndarray]:
    """Sum Gram matrices and per-class feature sums: G = sum_k G_k,
    B = sum_k B_k."""
    stats = _sorted_shares(stats, ClientSecondOrder)
    if not stats:
        raise FedInitError("no second-order statistics to aggregate")
    gram = np.zeros_like(stats[0].gram)
    label_sums = np.zeros_like(stats[0].label_sums)
    for s in stats:
        gram += s.gram
        label_sums += s.label_sums
    return gram, label_sums


# Share payload types the accumulator understands.
_SHARE_KINDS = (ClientShare, ClientSecondOrder, ClientOracleStats)


@dataclass
class ServerAccumulator:
    """Share-once store for multi-round federations.

    Each client's first submission is kept; later submissions from the same
    client are ignored with a logged warning. Aggregation always runs over the
    stored set, so the round schedule cannot influence the result.
    """

    num_classes: int
    shares: dict[int, object] = field(default_factory=dict)
    seen: set[int] = field(default_factory=set)
    rounds: int = 0

    def accumulate_round(self, new_shares: list) -> "ServerAccumulator":
        self.rounds += 1
        for share in new_shares:
            if not isinstance(share, _SHARE_KINDS):
                raise FedInitError(f"unsupported share type {type(share).__name__}")
            if share.client_id in self.seen:
                logger.warning("client %d already contributed; share ignored",
                               share.client_id)
                continue
            self.seen.add(share.client_id)
            self.shares[share.client_id] = share
        return self

    def coverage(self, num_clients: int) -> float:
        return len(self.seen) / num_clients

    def collected(self) -> list:
        return [self.shares[k] for k in sorted(self.shares)]
