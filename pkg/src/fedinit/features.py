"""Feature datasets: in-memory container, binary file format, synthetic sampling.

A dataset is a dense matrix of real-valued feature vectors with one integer
class label per row. Files use a fixed little-endian layout ("FEDF"):

    magic   4 bytes  b"FEDF"
    version u32      currently 1
    d       u32      feature dimension
    C       u32      number of classes
    N       u64      number of rows
    labels  N x u32
    features N x d float32, row-major

Features are stored in single precision on disk and promoted to float64 in
memory; all downstream statistics run in double precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .rng import STREAM_SYNTH, derive_rng

FEDF_MAGIC = b"FEDF"
FEDF_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


@dataclass(frozen=True)
class FeatureDataset:
    """Feature matrix (N, d) float64 with labels (N,) in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataFormatError("features must be a non-empty (N, d) matrix")
        if labels.shape != (feats.shape[0],):
            raise DataFormatError("labels must be one integer per feature row")
        if self.num_classes < 1:
            raise DataFormatError("num_classes must be at least 1")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DataFormatError("labels must lie in [0, num_classes)")
        if not np.isfinite(feats).all():
            raise DataFormatError("features must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_rows(self, label: int) -> np.ndarray:
        """Row indices of the given class, in dataset order."""
        return np.flatnonzero(self.labels == label)

    def class_counts(self) -> np.ndarray:
        """Per-class sample counts, shape (num_classes,)."""
        return np.bincount(self.labels, minlength=self.num_classes)


def write_dataset(dataset: FeatureDataset, path: str | Path) -> None:
    """Serialize a dataset to the FEDF layout (float32 on disk)."""
    path = Path(path)
    feats = np.ascontiguousarray(dataset.features, dtype="<f4")
    labels = np.ascontiguousarray(dataset.labels, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEDF_MAGIC, FEDF_VERSION, dataset.dim,
                              dataset.num_classes, dataset.num_samples))
        fh.write(labels.tobytes())
        fh.write(feats.tobytes())


def read_dataset(path: str | Path) -> FeatureDataset:
    """Read a FEDF file back into memory, validating header and payload size."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, dim, num_classes, n = _HEADER.unpack_from(raw)
    if magic != FEDF_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FEDF_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + n * 4 + n * dim * 4
    if len(raw) != expected:
        raise DataFormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size)
    feats = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=_HEADER.size + n * 4)
    if n and labels.max() >= num_classes:
        raise DataFormatError(f"{path}: label out of range for {num_classes} classes")
    return FeatureDataset(feats.reshape(n, dim).astype(np.float64),
                          labels.astype(np.int64), num_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian mixture recipe: one mean per class and shared or per-class SPD
    covariances. `class_covariances` is either (d, d) shared or (C, d, d)."""

    class_means: np.ndarray
    class_covariances: np.ndarray
    samples_per_class: np.ndarray
    seed: int

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.class_means, dtype=np.float64))
        covs = np.asarray(self.class_covariances, dtype=np.float64)
        counts = np.atleast_1d(np.asarray(self.samples_per_class, dtype=np.int64))
        c, d = means.shape
        if covs.ndim == 2:
            covs = np.broadcast_to(covs, (c, d, d)).copy()
        if covs.shape != (c, d, d):
            raise DataFormatError("covariances must be (d,d) shared or (C,d,d)")
        if counts.shape == (1,):
            counts = np.full(c, counts[0])
        if counts.shape != (c,):
            raise DataFormatError("samples_per_class must be scalar or length C")
        if (counts < 1).any():
            raise DataFormatError("each class needs at least one sample")
        for i, cov in enumerate(covs):
            if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
                raise DataFormatError(f"covariance for class {i} is not symmetric")
            eig = np.linalg.eigvalsh(cov)
            # PSD up to round-off: smallest eigenvalue >= -1e-8 * largest.
            if eig[0] < -1e-8 * max(eig[-1], 0.0):
                raise DataFormatError(f"covariance for class {i} is not PSD")
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_covariances", covs)
        object.__setattr__(self, "samples_per_class", counts)

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]


def _factor(cov: np.ndarray) -> np.ndarray:
    """Square root factor L with L @ L.T == cov; tolerates singular PSD input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> FeatureDataset:
    """Sample a dataset from the spec's Gaussian mixture.

    Rows are grouped by class. Each class draws from its own derived stream,
    so the sample for class c does not depend on the other classes' sizes.
    """
    seed = spec.seed if seed is None else seed
    blocks = []
    labels = []
    for c in range(spec.num_classes):
        rng = derive_rng(seed, STREAM_SYNTH, c)
        n = int(spec.samples_per_class[c])
        z = rng.standard_normal((n, spec.dim))
        blocks.append(spec.class_means[c] + z @ _factor(spec.class_covariances[c]).T)
        labels.append(np.full(n, c, dtype=np.int64))
    return FeatureDataset(np.concatenate(blocks), np.concatenate(labels),
                          spec.num_classes)


@dataclass(frozen=True)
class DatasetSummary:
    class_counts: np.ndarray
    global_mean: np.ndarray
    covariance_trace: float


def summarize(dataset: FeatureDataset) -> DatasetSummary:
    """Per-class counts, global mean, and trace of the global covariance."""
    mean = dataset.features.mean(axis=0)
    centered = dataset.features - mean
    denom = max(dataset.num_samples - 1, 1)
    trace = float(np.einsum("ij,ij->", centered, centered) / denom)
    return DatasetSummary(dataset.class_counts(), mean, trace)


def anisotropic_covariance(dim: int, condition: float, scale: float = 1.0,
                           seed: int = 0) -> np.ndarray:
    """SPD matrix with eigenvalues log-spaced over `condition`, randomly rotated."""
    if condition < 1.0:
        raise ValueError("condition number must be >= 1")
    eigs = scale * np.logspace(0.0, -np.log10(condition), dim)
    rng = derive_rng(seed, STREAM_SYNTH, dim)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (q * eigs) @ q.T


def gaussian_benchmark_spec(num_classes: int, dim: int, samples_per_class: int,
                            mean_scale: float, covariance: np.ndarray,
                            seed: int) -> SyntheticSpec:
    """Spec with class means drawn N(0, mean_scale^2 I) and a shared covariance."""
    rng = derive_rng(seed, STREAM_SYNTH, num_classes, dim)
    means = mean_scale * rng.standard_normal((num_classes, dim))
    return SyntheticSpec(means, covariance,
                         np.full(num_classes, samples_per_class), seed)
