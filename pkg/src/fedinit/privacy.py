"""Count perturbation and a pairwise-masking secure-aggregation simulation.

Count perturbation trades accuracy for hiding exact per-class sample counts:
noisy counts stay real-valued and entries whose noisy count would round to
zero are removed entirely.

The secure-aggregation path simulates the two-phase protocol in one process.
Every pair of clients derives cancelling mask tensors from a shared seed, so
the server only ever sees masked per-client payloads whose sum equals the sum
of the underlying statistics. Phase 1 recovers class means, counts, and mean
multiplicities; phase 2 recovers the within-class scatter total. The final
matrix equals the one the plain pipeline builds, up to floating-point noise
from mask cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .client import ClientShare, ShareEntry
from .errors import FedInitError
from .rng import (STREAM_MASK_PHASE1, STREAM_MASK_PHASE2, STREAM_NOISE,
                  derive_rng)
from .server import GlobalMeans

NOISE_KINDS = ("uniform", "gaussian", "laplace")
# Noisy counts below this round to zero and drop the entry.
COUNT_KEEP_THRESHOLD = 0.5


@dataclass(frozen=True)
class NoiseSpec:
    """Which distribution perturbs counts and how strongly.

    epsilon in (0, 1] controls intensity: uniform noise spans
    +/- (1 - epsilon) * n, gaussian and laplace use scale 1 / epsilon.
    Uniform with epsilon = 1 is exactly no-op.
    """

    kind: str
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise FedInitError(f"unknown noise kind {self.kind!r}")
        if not 0 < self.epsilon <= 1:
            raise FedInitError("epsilon must lie in (0, 1]")


def perturb_counts(share: ClientShare, spec: NoiseSpec) -> ClientShare:
    """Return a copy of the share with noisy counts.

    Each entry's count becomes max(n + sigma, 0); entries whose noisy count
    rounds to zero are dropped. Noise is drawn from a stream derived from
    (spec.seed, client_id), so the result is independent of processing order.
    """
    rng = derive_rng(spec.seed, STREAM_NOISE, share.client_id)
    entries = []
    for entry in share.entries:
        if spec.kind == "uniform":
            half = (1.0 - spec.epsilon) * entry.count
            sigma = rng.uniform(-half, half)
        elif spec.kind == "gaussian":
            sigma = rng.normal(0.0, 1.0 / spec.epsilon)
        else:
            sigma = rng.laplace(0.0, 1.0 / spec.epsilon)
        noisy = max(entry.count + sigma, 0.0)
        if noisy >= COUNT_KEEP_THRESHOLD:
            entries.append(ShareEntry(entry.label, noisy, entry.mean))
    return ClientShare(share.client_id, tuple(entries), share.dim)


@dataclass(frozen=True)
class MaskedShare:
    """One client's masked uplink.

    counts, mean_sums, and multiplicities cover every class (absent classes
    contribute only mask), hiding which classes the client holds. The applied
    masks are retained purely so the simulation can audit cancellation; a real
    deployment never reveals them.
    """

    client_id: int
    counts: np.ndarray          # (C,)  mask + n_{k,c}
    mean_sums: np.ndarray       # (C, d) mask + n_{k,c} * mu_{k,c}
    multiplicities: np.ndarray  # (C,)  mask + number of means for the class
    mask_counts: np.ndarray
    mask_means: np.ndarray
    mask_mult: np.ndarray
    scatter: np.ndarray | None = None       # (d, d) phase-2 payload
    mask_scatter: np.ndarray | None = None


def _pair_masks_phase1(ids, num_classes, dim, seed, scale):
    """Per-client phase-1 mask tensors; pair draws cancel exactly in pairs."""
    masks = {k: [np.zeros(num_classes), np.zeros((num_classes, dim)),
                 np.zeros(num_classes)] for k in ids}
    for i, j in combinations(sorted(ids), 2):
        rng = derive_rng(seed, STREAM_MASK_PHASE1, i, j)
        q = scale * rng.standard_normal(num_classes)
        p = scale * rng.standard_normal((num_classes, dim))
        r = scale * rng.standard_normal(num_classes)
        masks[i][0] += q
        masks[i][1] += p
        masks[i][2] += r
        masks[j][0] -= q
        masks[j][1] -= p
        masks[j][2] -= r
    return masks


def secure_phase1(shares: list[ClientShare], num_classes: int, seed: int,
                  mask_scale: float = 1.0
                  ) -> tuple[list[MaskedShare], GlobalMeans, np.ndarray]:
    """Masked aggregation of counts, weighted means, and mean multiplicities.

    Returns the masked uplinks, the recovered global means (classes whose
    summed count rounds to zero are dropped as absent), and the per-class
    number of means m_c the server will broadcast alongside.
    """
    ids = [s.client_id for s in shares]
    if len(set(ids)) != len(ids):
        raise FedInitError("duplicate client ids in secure aggregation")
    if len(ids) < 2:
        raise FedInitError("secure aggregation needs at least two clients")
    dim = shares[0].dim
    masks = _pair_masks_phase1(ids, num_classes, dim, seed, mask_scale)
    masked = []
    for share in sorted(shares, key=lambda s: s.client_id):
        q, p, r = masks[share.client_id]
        u = q.copy()
        v = p.copy()
        w = r.copy()
        for entry in share.entries:
            u[entry.label] += entry.count
            v[entry.label] += entry.count * entry.mean
            w[entry.label] += 1.0
        masked.append(MaskedShare(share.client_id, u, v, w, q, p, r))

    count_sum = np.zeros(num_classes)
    mean_sum = np.zeros((num_classes, dim))
    mult_sum = np.zeros(num_classes)
    for m in masked:
        count_sum += m.counts
        mean_sum += m.mean_sums
        mult_sum += m.multiplicities
    present = count_sum >= COUNT_KEEP_THRESHOLD
    counts = np.where(present, count_sum, 0.0)
    means = np.zeros((num_classes, dim))
    means[present] = mean_sum[present] / counts[present, None]
    total = float(counts.sum())
    if total <= 0:
        raise FedInitError("no class survived masked aggregation")
    global_mean = (counts[present, None] * means[present]).sum(axis=0) / total
    mean_counts = np.where(present, np.rint(mult_sum), 0.0)
    return masked, GlobalMeans(means, counts, global_mean, total), mean_counts


def secure_phase2(shares: list[ClientShare], broadcast: GlobalMeans,
                  mean_counts: np.ndarray, gamma: float, seed: int,
                  mask_scale: float = 1.0,
                  masked: list[MaskedShare] | None = None
                  ) -> tuple[list[MaskedShare], np.ndarray]:
    """Masked within-class scatter aggregation, then server assembly.

    Each client uploads

        S_k = sum_c ((N_c - 1) / (m_c - 1)) * n_{k,c}
              (mu_{k,c} - mu_c)(mu_{k,c} - mu_c)^T  +  mask_k

    over broadcast classes with m_c >= 2. The server adds the shrinkage fold
    gamma * sum_c (N_c - 1) I over present classes and the global-mean term
    N mu_g mu_g^T, matching the plain pipeline's matrix exactly.
    """
    ids = sorted(s.client_id for s in shares)
    dim = shares[0].dim
    pair_masks = {k: np.zeros((dim, dim)) for k in ids}
    for i, j in combinations(ids, 2):
        rng = derive_rng(seed, STREAM_MASK_PHASE2, i, j)
        m = mask_scale * rng.standard_normal((dim, dim))
        pair_masks[i] += m
        pair_masks[j] -= m
    by_id = {m.client_id: m for m in masked} if masked else {}

    counts = broadcast.class_counts
    out_masked = []
    scatter_total = np.zeros((dim, dim))
    for share in sorted(shares, key=lambda s: s.client_id):
        s_k = np.zeros((dim, dim))
        for entry in share.entries:
            c = entry.label
            if counts[c] <= 0 or mean_counts[c] < 2:
                continue
            delta = entry.mean - broadcast.class_means[c]
            weight = (counts[c] - 1.0) / (mean_counts[c] - 1.0) * entry.count
            s_k += weight * np.outer(delta, delta)
        mask = pair_masks[share.client_id]
        uplink = s_k + mask
        scatter_total += uplink
        prev = by_id.get(share.client_id)
        if prev is not None:
            out_masked.append(MaskedShare(prev.client_id, prev.counts,
                                          prev.mean_sums, prev.multiplicities,
                                          prev.mask_counts, prev.mask_means,
                                          prev.mask_mult, uplink, mask))
        else:
            zero_c = np.zeros(broadcast.num_classes)
            zero_cd = np.zeros((broadcast.num_classes, dim))
            out_masked.append(MaskedShare(share.client_id, zero_c, zero_cd,
                                          zero_c.copy(), zero_c.copy(),
                                          zero_cd.copy(), zero_c.copy(),
                                          uplink, mask))

    g_hat = scatter_total.copy()
    present = np.flatnonzero(broadcast.present)
    eye = np.eye(dim)
    for c in present:
        g_hat += gamma * (counts[c] - 1.0) * eye
    g_hat += broadcast.total_count * np.outer(broadcast.global_mean,
                                              broadcast.global_mean)
    return out_masked, g_hat


@dataclass(frozen=True)
class MaskResiduals:
    """Max-abs residual of each mask stream summed over clients; all four are
    zero up to floating-point cancellation when no payload was tampered with."""

    counts: float
    means: float
    multiplicities: float
    scatter: float

    def max(self) -> float:
        return max(self.counts, self.means, self.multiplicities, self.scatter)


def verify_mask_cancellation(masked: list[MaskedShare]) -> MaskResiduals:
    if not masked:
        raise FedInitError("no masked shares to verify")
    q = sum(m.mask_counts for m in masked)
    p = sum(m.mask_means for m in masked)
    r = sum(m.mask_mult for m in masked)
    scatters = [m.mask_scatter for m in masked if m.mask_scatter is not None]
    s = sum(scatters) if scatters else np.zeros(1)
    return MaskResiduals(float(np.abs(q).max()), float(np.abs(p).max()),
                         float(np.abs(r).max()), float(np.abs(s).max()))
