"""Assign dataset rows to clients, Dirichlet-style or from a stored file.

The on-disk layout ("FEDA", little-endian) is:

    magic   4 bytes  b"FEDA"
    version u32      currently 1
    K       u32      number of clients
    N       u64      number of rows
    owners  N x u32  owning client per dataset row
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .features import FeatureDataset
from .rng import STREAM_PARTITION, derive_rng

FEDA_MAGIC = b"FEDA"
FEDA_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class ClientAssignment:
    """Owner client id per dataset row; ids lie in [0, num_clients)."""

    num_clients: int
    owners: np.ndarray

    def __post_init__(self):
        owners = np.ascontiguousarray(np.asarray(self.owners, dtype=np.int64))
        if owners.ndim != 1 or owners.shape[0] < 1:
            raise DataFormatError("owners must be a non-empty vector")
        if self.num_clients < 1:
            raise DataFormatError("num_clients must be at least 1")
        if owners.min() < 0 or owners.max() >= self.num_clients:
            raise DataFormatError("owner ids must lie in [0, num_clients)")
        object.__setattr__(self, "owners", owners)

    @property
    def num_samples(self) -> int:
        return self.owners.shape[0]

    def client_rows(self, client_id: int) -> np.ndarray:
        """Row indices owned by a client, in dataset order."""
        return np.flatnonzero(self.owners == client_id)

    def counts_matrix(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        """Header counts n_{k,c}: shape (num_clients, num_classes)."""
        if labels.shape != self.owners.shape:
            raise DataFormatError("labels and owners describe different datasets")
        flat = self.owners * num_classes + labels
        counts = np.bincount(flat, minlength=self.num_clients * num_classes)
        return counts.reshape(self.num_clients, num_classes)


def dirichlet_partition(dataset: FeatureDataset, num_clients: int, alpha: float,
                        seed: int) -> ClientAssignment:
    """Partition rows across clients with per-class Dirichlet(alpha) proportions.

    For every class a proportion vector p ~ Dirichlet(alpha * 1_K) is drawn and
    each sample of that class picks its owner from Categorical(p). Each class
    uses its own derived stream, so the assignment of one class is unaffected
    by the presence or sizes of the others.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    owners = np.empty(dataset.num_samples, dtype=np.int64)
    for c in range(dataset.num_classes):
        rows = dataset.class_rows(c)
        if rows.size == 0:
            continue
        rng = derive_rng(seed, STREAM_PARTITION, c)
        probs = rng.dirichlet(np.full(num_clients, alpha))
        owners[rows] = rng.choice(num_clients, size=rows.size, p=probs)
    return ClientAssignment(num_clients, owners)


def write_assignment(assignment: ClientAssignment, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEDA_MAGIC, FEDA_VERSION, assignment.num_clients,
                              assignment.num_samples))
        fh.write(np.ascontiguousarray(assignment.owners, dtype="<u4").tobytes())


def load_assignment(path: str | Path) -> ClientAssignment:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, num_clients, n = _HEADER.unpack_from(raw)
    if magic != FEDA_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FEDA_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if len(raw) != _HEADER.size + n * 4:
        raise DataFormatError(f"{path}: payload is {len(raw)} bytes, "
                              f"expected {_HEADER.size + n * 4}")
    owners = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size)
    if n and owners.max() >= num_clients:
        raise DataFormatError(f"{path}: owner id out of range for {num_clients} clients")
    return ClientAssignment(num_clients, owners.astype(np.int64))


@dataclass(frozen=True)
class PartitionStats:
    """Recounted structure of an assignment against its dataset."""

    counts: np.ndarray            # (K, C) samples per client per class
    classes_per_client: np.ndarray  # C_k: classes held by each client
    clients_per_class: np.ndarray   # K_c: clients holding each class
    total_class_entries: int        # M = sum_k C_k, one shared mean per entry
    samples_per_client: np.ndarray  # (K,)

    @property
    def mean_clients_per_class(self) -> float:
        return float(self.clients_per_class.mean())


def partition_stats(assignment: ClientAssignment,
                    dataset: FeatureDataset) -> PartitionStats:
    """Recount n_{k,c} and derive spread/imbalance summaries.

    Conservation holds exactly: counts sum per class to the dataset's class
    sizes and per client to the client's row counts.
    """
    counts = assignment.counts_matrix(dataset.labels, dataset.num_classes)
    held = counts > 0
    return PartitionStats(
        counts=counts,
        classes_per_client=held.sum(axis=1),
        clients_per_class=held.sum(axis=0),
        total_class_entries=int(held.sum()),
        samples_per_client=counts.sum(axis=1),
    )
