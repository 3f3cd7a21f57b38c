"""Per-client statistics computed from locally owned rows.

Clients never expose raw features to the server; everything downstream runs on
the summaries defined here: class means with counts, optional multiple means
per class, second-order Gram statistics, and (for the oracle upper bound only)
local class covariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FedInitError
from .features import FeatureDataset
from .partition import ClientAssignment
from .rng import STREAM_MULTIMEAN, derive_rng


@dataclass(frozen=True)
class ShareEntry:
    """One (class, count, mean) triple. Counts are real-valued so that count
    perturbation can be applied without changing the container type."""

    label: int
    count: float
    mean: np.ndarray


@dataclass(frozen=True)
class ClientShare:
    """All class-mean entries one client uploads. Entries are ordered by label;
    a label may repeat when the client shares several means for one class."""

    client_id: int
    entries: tuple[ShareEntry, ...]
    dim: int

    def labels(self) -> list[int]:
        return [e.label for e in self.entries]

    @property
    def num_values(self) -> int:
        """Uplink size in scalar values: d per shared mean (counts ride free,
        matching the cost model used for the headline byte counts)."""
        return len(self.entries) * self.dim


def _client_class_rows(dataset: FeatureDataset, assignment: ClientAssignment,
                       client_id: int) -> list[tuple[int, np.ndarray]]:
    if assignment.num_samples != dataset.num_samples:
        raise FedInitError("assignment does not match dataset")
    rows = assignment.client_rows(client_id)
    out = []
    for label in np.unique(dataset.labels[rows]):
        out.append((int(label), rows[dataset.labels[rows] == label]))
    return out


def compute_class_means(dataset: FeatureDataset, assignment: ClientAssignment,
                        client_id: int) -> ClientShare:
    """Count and mean per class held by the client.

    The weighted sum over a federation's shares recovers the per-class feature
    sums exactly: sum_k n_{k,c} mu_{k,c} == sum over class-c rows of f.
    """
    entries = []
    for label, rows in _client_class_rows(dataset, assignment, client_id):
        feats = dataset.features[rows]
        entries.append(ShareEntry(label, float(rows.size), feats.mean(axis=0)))
    return ClientShare(client_id, tuple(entries), dataset.dim)


def sample_multi_means(dataset: FeatureDataset, assignment: ClientAssignment,
                       client_id: int, means_per_class: int,
                       seed: int) -> ClientShare:
    """Split each held class into up to `means_per_class` disjoint subsets and
    emit one (count, mean) entry per subset.

    Subsets keep size >= 2, so a class with n samples yields at most
    min(means_per_class, n // 2) means; leftover samples merge into the last
    subset. A class with a single sample emits that sample as a count-1 mean.
    With means_per_class == 1 the output is identical to compute_class_means.
    """
    if means_per_class < 1:
        raise ValueError("means_per_class must be at least 1")
    entries = []
    for label, rows in _client_class_rows(dataset, assignment, client_id):
        n = rows.size
        m_eff = min(means_per_class, n // 2)
        if m_eff <= 1:
            # Whole-class mean over rows in dataset order; bitwise equal to the
            # single-mean path. Covers the n == 1 case as a count-1 mean.
            entries.append(ShareEntry(label, float(n),
                                      dataset.features[rows].mean(axis=0)))
            continue
        rng = derive_rng(seed, STREAM_MULTIMEAN, client_id, label)
        shuffled = rows[rng.permutation(n)]
        base = n // m_eff
        for i in range(m_eff):
            lo = i * base
            hi = (i + 1) * base if i < m_eff - 1 else n
            subset = shuffled[lo:hi]
            entries.append(ShareEntry(label, float(subset.size),
                                      dataset.features[subset].mean(axis=0)))
    return ClientShare(client_id, tuple(entries), dataset.dim)


def compute_all_shares(dataset: FeatureDataset, assignment: ClientAssignment,
                       client_ids=None, means_per_class: int = 1,
                       seed: int = 0) -> list[ClientShare]:
    """Class-mean shares for many clients in one pass.

    With means_per_class == 1 this runs a single grouped reduction over the
    dataset instead of one scan per client; results agree with
    compute_class_means up to summation order. Clients owning no rows emit an
    empty share so that coverage bookkeeping still sees them.
    """
    if assignment.num_samples != dataset.num_samples:
        raise FedInitError("assignment does not match dataset")
    if client_ids is None:
        client_ids = range(assignment.num_clients)
    wanted = set(int(k) for k in client_ids)
    if means_per_class > 1:
        return [sample_multi_means(dataset, assignment, k, means_per_class, seed)
                for k in sorted(wanted)]
    owners = assignment.owners
    labels = dataset.labels
    order = np.lexsort((labels, owners))
    key = owners[order] * dataset.num_classes + labels[order]
    starts = np.flatnonzero(np.r_[True, np.diff(key) != 0])
    counts = np.diff(np.r_[starts, key.size])
    sums = np.add.reduceat(dataset.features[order], starts, axis=0)
    entries: dict[int, list[ShareEntry]] = {k: [] for k in wanted}
    for i, start in enumerate(starts):
        owner = int(owners[order[start]])
        if owner not in entries:
            continue
        label = int(labels[order[start]])
        entries[owner].append(ShareEntry(label, float(counts[i]),
                                         sums[i] / counts[i]))
    return [ClientShare(k, tuple(entries[k]), dataset.dim)
            for k in sorted(wanted)]


@dataclass(frozen=True)
class ClientSecondOrder:
    """Gram accumulator G_k = sum_i f_i f_i^T plus per-class feature sums
    (the client's slice of the ridge regression normal equations)."""

    client_id: int
    gram: np.ndarray        # (d, d)
    label_sums: np.ndarray  # (d, C), column c = sum of class-c features
    counts: np.ndarray      # (C,)


def compute_gram_stats(dataset: FeatureDataset, assignment: ClientAssignment,
                       client_id: int) -> ClientSecondOrder:
    if assignment.num_samples != dataset.num_samples:
        raise FedInitError("assignment does not match dataset")
    rows = assignment.client_rows(client_id)
    feats = dataset.features[rows]
    labels = dataset.labels[rows]
    gram = feats.T @ feats
    label_sums = np.zeros((dataset.dim, dataset.num_classes))
    np.add.at(label_sums.T, labels, feats)
    counts = np.bincount(labels, minlength=dataset.num_classes).astype(np.float64)
    return ClientSecondOrder(client_id, gram, label_sums, counts)


@dataclass(frozen=True)
class OracleEntry:
    """Class mean plus the local sample covariance (denominator n - 1).

    A single-sample class cannot define a covariance; it carries a zero matrix
    flagged by cov_defined = False, which the pooling formula weights by zero.
    """

    label: int
    count: float
    mean: np.ndarray
    cov: np.ndarray
    cov_defined: bool = field(default=True)


@dataclass(frozen=True)
class ClientOracleStats:
    client_id: int
    entries: tuple[OracleEntry, ...]
    dim: int


def compute_class_covariances(dataset: FeatureDataset,
                              assignment: ClientAssignment,
                              client_id: int) -> ClientOracleStats:
    """Per-class local covariances, the oracle-cost payload."""
    entries = []
    for label, rows in _client_class_rows(dataset, assignment, client_id):
        feats = dataset.features[rows]
        mean = feats.mean(axis=0)
        if rows.size >= 2:
            centered = feats - mean
            cov = centered.T @ centered / (rows.size - 1)
            entries.append(OracleEntry(label, float(rows.size), mean, cov))
        else:
            entries.append(OracleEntry(label, 1.0, mean,
                                       np.zeros((dataset.dim, dataset.dim)),
                                       cov_defined=False))
    return ClientOracleStats(client_id, tuple(entries), dataset.dim)
