"""End-to-end method pipelines: shares in, solved classifier out.

This is the seam between the statistics layers and the callers (orchestrator,
verification studies, command line). Each method is a pair of steps:

    shares_for(...)        what the sampled clients upload
    solve_from_shares(...) what the server builds from the accumulated set
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import (ClassifierWeights, ScatterVariant, build_B,
                         build_G_variant, fedncm_weights, ridge_solve,
                         solve_and_normalize)
from .client import (ClientOracleStats, ClientSecondOrder,
                     compute_all_shares, compute_class_covariances,
                     compute_gram_stats)
from .errors import ConfigError, FedInitError
from .features import FeatureDataset
from .partition import ClientAssignment
from .privacy import NoiseSpec, perturb_counts, secure_phase1, secure_phase2

METHODS = ("fedncm", "fed3r", "fedcof", "fedcof-oracle")

_VARIANT_METHODS = {
    ScatterVariant.WITHIN_ONLY: "fedcof",
    ScatterVariant.WITHIN_PLUS_BETWEEN: "fedcof-within+between",
    ScatterVariant.BETWEEN_ONLY: "fedcof-between",
}


def mean_share_values(shares) -> int:
    """Uplink scalar count for a batch of class-mean shares (d per mean)."""
    return sum(s.num_values for s in shares)


def shares_for(method: str, dataset: FeatureDataset,
               assignment: ClientAssignment, client_ids, *,
               means_per_class: int = 1, seed: int = 0,
               noise: NoiseSpec | None = None) -> list:
    """Compute the per-client uploads for a method.

    Count noise applies only to class-mean shares; the second-order and
    oracle payloads have no count-perturbation mode.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if method in ("fedncm", "fedcof"):
        shares = compute_all_shares(dataset, assignment, client_ids,
                                    means_per_class, seed)
        if noise is not None:
            shares = [perturb_counts(s, noise) for s in shares]
        return shares
    if noise is not None:
        raise ConfigError(f"count noise is not defined for {method}")
    if means_per_class != 1:
        raise ConfigError("means_per_class applies only to class-mean methods")
    if method == "fed3r":
        return [compute_gram_stats(dataset, assignment, k)
                for k in sorted(set(map(int, client_ids)))]
    return [compute_class_covariances(dataset, assignment, k)
            for k in sorted(set(map(int, client_ids)))]


@dataclass
class SolveOutcome:
    """Solved weights plus the diagnostics callers report."""

    weights: ClassifierWeights
    condition_number: float | None = None
    ridge_lambda: float | None = None
    fallback_classes: int = 0
    mask_residual: float | None = None
    masked_shares: list = field(default_factory=list)


def solve_from_shares(method: str, shares: list, num_classes: int, *,
                      gamma: float = 1.0, ridge_lambda: float | None = None,
                      variant: ScatterVariant = ScatterVariant.WITHIN_ONLY,
                      allow_single_mean: bool = True,
                      secure: bool = False, secure_seed: int = 0,
                      mask_scale: float = 1.0) -> SolveOutcome:
    """Aggregate the accumulated shares and solve the classifier head."""
    # Local import keeps server the only module that owns aggregation logic.
    from . import server
    from .privacy import verify_mask_cancellation

    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    if secure and method != "fedcof":
        raise ConfigError("secure aggregation is defined for fedcof only")

    if method == "fedncm":
        global_means = server.aggregate_means(shares, num_classes)
        w = fedncm_weights(global_means)
        return SolveOutcome(w, condition_number=w.condition_number)

    if method == "fed3r":
        gram, label_sums = server.aggregate_gram(shares)
        w, lam = ridge_solve(gram, label_sums, ridge_lambda)
        return SolveOutcome(w, condition_number=w.condition_number,
                            ridge_lambda=lam)

    if method == "fedcof-oracle":
        global_means, covs = server.aggregate_oracle_covariances(
            shares, num_classes, gamma)
        g_hat = build_G_variant(global_means, covs, variant)
        w = solve_and_normalize(g_hat, build_B(global_means), global_means,
                                "fedcof-oracle")
        return SolveOutcome(w, condition_number=w.condition_number)

    if secure:
        masked, global_means, mean_counts = secure_phase1(
            shares, num_classes, secure_seed, mask_scale)
        masked, g_hat = secure_phase2(shares, global_means, mean_counts,
                                      gamma, secure_seed, mask_scale, masked)
        residual = verify_mask_cancellation(masked).max()
        w = solve_and_normalize(g_hat, build_B(global_means), global_means,
                                "fedcof")
        return SolveOutcome(w, condition_number=w.condition_number,
                            mask_residual=residual, masked_shares=masked)

    global_means = server.aggregate_means(shares, num_classes)
    covs = server.estimate_covariances(shares, global_means, gamma,
                                       allow_single_mean=allow_single_mean)
    g_hat = build_G_variant(global_means, covs, variant)
    method_name = _VARIANT_METHODS[variant]
    w = solve_and_normalize(g_hat, build_B(global_means), global_means,
                            method_name)
    return SolveOutcome(w, condition_number=w.condition_number,
                        fallback_classes=int(covs.fallback.sum()))


def share_values(method: str, shares: list, num_classes: int, *,
                 secure: bool = False) -> int:
    """Scalar values uploaded by a batch of shares under the cost model.

    Class-mean methods upload d per shared mean. The oracle adds d^2 per mean
    for the local covariance. Second-order clients upload their per-class sum
    columns (d per held class) plus a d x d Gram block. Secure aggregation
    masks every class for every client: C * (d + 2) in phase 1 (count, mean,
    multiplicity per class) plus d^2 in phase 2.
    """
    if not shares:
        return 0
    if secure:
        dim = shares[0].dim
        return len(shares) * (num_classes * (dim + 2) + dim * dim)
    first = shares[0]
    if isinstance(first, ClientSecondOrder):
        total = 0
        for s in shares:
            dim = s.gram.shape[0]
            total += int((s.counts > 0).sum()) * dim + dim * dim
        return total
    if isinstance(first, ClientOracleStats):
        return sum(len(s.entries) * (s.dim + s.dim * s.dim) for s in shares)
    return mean_share_values(shares)
