"""Build, solve, store, and apply linear classifier heads.

Four initialization methods share this module:

  fedncm        normalized class means,
  fed3r         ridge regression on pooled second-order statistics,
  fedcof        ridge-style solve against a scatter matrix rebuilt from
                class-mean statistics only,
  fedcof-oracle same solve with exactly pooled class covariances.

Weight files use a fixed little-endian layout ("FEDW"):

    magic    4 bytes  b"FEDW"
    version  u32      currently 1
    d        u32      feature dimension
    C        u32      number of classes
    method   u32      tag, see METHOD_TAGS
    W        d x C float32, column-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from .errors import DataFormatError, FedInitError, SolveError
from .features import FeatureDataset
from .server import CovarianceEstimate, GlobalMeans

FEDW_MAGIC = b"FEDW"
FEDW_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

METHOD_TAGS = {
    "fedncm": 0,
    "fed3r": 1,
    "fedcof": 2,
    "fedcof-oracle": 3,
    "fedcof-within+between": 4,
    "fedcof-between": 5,
}
_TAG_METHODS = {v: k for k, v in METHOD_TAGS.items()}

# Solve accuracy gates: accept a Cholesky solution only if the relative
# residual is small; treat eigenvalues below a fraction of the largest as zero.
RESIDUAL_TOL = 1e-8
EIG_FLOOR = 1e-10


class ScatterVariant(Enum):
    """Which scatter terms form the matrix to invert."""

    WITHIN_ONLY = "within"
    WITHIN_PLUS_BETWEEN = "within+between"
    BETWEEN_ONLY = "between"


@dataclass(frozen=True)
class ClassifierWeights:
    """Solved head: matrix (d, C) with L2-normalized non-zero columns."""

    matrix: np.ndarray
    method: str
    condition_number: float | None = None
    used_fallback: bool = False
    absent_classes: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]


def _normalize_columns(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=0)
    out = w.copy()
    nz = norms > 0
    out[:, nz] /= norms[nz]
    return out


def build_B(global_means: GlobalMeans) -> np.ndarray:
    """Right-hand side of the normal equations: column c = N_c * mu_c."""
    return (global_means.class_counts[:, None] * global_means.class_means).T


def fedncm_weights(global_means: GlobalMeans) -> ClassifierWeights:
    """Classifier of unit-normalized class means."""
    b = build_B(global_means)
    norms = np.linalg.norm(b, axis=0)
    bad = [c for c in range(global_means.num_classes)
           if global_means.class_counts[c] > 0 and norms[c] == 0.0]
    if bad:
        raise FedInitError(f"classes {bad} have zero-norm means; "
                           "cannot normalize")
    absent = tuple(np.flatnonzero(~global_means.present).tolist())
    return ClassifierWeights(_normalize_columns(b), "fedncm",
                             condition_number=1.0, absent_classes=absent)


def build_G_variant(global_means: GlobalMeans,
                    covariances: CovarianceEstimate | None,
                    variant: ScatterVariant) -> np.ndarray:
    """Assemble the uncentered second-moment surrogate from chosen terms.

    within  term: sum over present classes of (N_c - 1) Sigma_c
    between term: sum over present classes of N_c (mu_c - mu_g)(mu_c - mu_g)^T
    plus always N mu_g mu_g^T. With exact covariances and both scatter terms
    this equals the Gram matrix F F^T of the pooled features.
    """
    dim = global_means.dim
    g = np.zeros((dim, dim))
    present = np.flatnonzero(global_means.present)
    if variant is not ScatterVariant.BETWEEN_ONLY:
        if covariances is None:
            raise FedInitError("within-class terms need covariance estimates")
        for c in present:
            g += (global_means.class_counts[c] - 1.0) * covariances.covariances[c]
    if variant is not ScatterVariant.WITHIN_ONLY:
        for c in present:
            delta = global_means.class_means[c] - global_means.global_mean
            g += global_means.class_counts[c] * np.outer(delta, delta)
    g += global_means.total_count * np.outer(global_means.global_mean,
                                             global_means.global_mean)
    return g


def condition_number(matrix: np.ndarray) -> float:
    """Ratio of the largest eigenvalue to the smallest treated-as-nonzero one.

    Eigenvalues whose magnitude falls below 1e-12 times the largest count as
    zero; an all-zero matrix has no condition number.
    """
    eigs = np.linalg.eigvalsh(np.asarray(matrix, dtype=np.float64))
    top = float(np.abs(eigs).max(initial=0.0))
    if top == 0.0:
        raise FedInitError("zero matrix has no condition number")
    kept = eigs[np.abs(eigs) > 1e-12 * top]
    return float(top / np.abs(kept).min())


def _solve_spd(g: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, bool]:
    """Cholesky solve with residual check; eigendecomposition fallback with a
    relative eigenvalue floor when the matrix is not numerically SPD."""
    sym = 0.5 * (g + g.T)
    try:
        factor = sla.cho_factor(sym, lower=True, check_finite=False)
        w = sla.cho_solve(factor, b, check_finite=False)
        residual = np.linalg.norm(sym @ w - b) / max(np.linalg.norm(b), 1e-300)
        if residual <= RESIDUAL_TOL:
            return w, False
    except np.linalg.LinAlgError:
        pass
    except sla.LinAlgError:
        pass
    eigs, vecs = np.linalg.eigh(sym)
    floor = EIG_FLOOR * max(float(eigs.max(initial=0.0)), 0.0)
    if floor <= 0.0:
        raise SolveError("scatter matrix is numerically zero")
    clipped = np.maximum(eigs, floor)
    w = vecs @ ((vecs.T @ b) / clipped[:, None])
    return w, True


def solve_and_normalize(g_hat: np.ndarray, b: np.ndarray,
                        global_means: GlobalMeans,
                        method: str = "fedcof") -> ClassifierWeights:
    """Solve g_hat @ W = B and L2-normalize the columns.

    Absent classes (zero B columns) stay zero and are listed on the result.
    The identity matrix for g_hat reduces this to normalized class means.
    """
    if g_hat.shape[0] != g_hat.shape[1] or g_hat.shape[0] != b.shape[0]:
        raise FedInitError("shape mismatch between scatter matrix and targets")
    w, fell_back = _solve_spd(g_hat, b)
    absent = tuple(np.flatnonzero(~global_means.present).tolist())
    return ClassifierWeights(_normalize_columns(w), method,
                             condition_number=condition_number(g_hat),
                             used_fallback=fell_back, absent_classes=absent)


def ridge_solve(gram: np.ndarray, label_sums: np.ndarray,
                lam: float | None = None) -> tuple[ClassifierWeights, float]:
    """Ridge regression head W = (G + lam I)^{-1} B, columns normalized.

    With lam=None the penalty defaults to 0.01 * trace(G) / d, which keeps the
    regularization proportional to the average feature energy. Returns the
    weights and the penalty actually used.
    """
    dim = gram.shape[0]
    if lam is None:
        lam = 0.01 * float(np.trace(gram)) / dim
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    sym = 0.5 * (gram + gram.T) + lam * np.eye(dim)
    try:
        factor = sla.cho_factor(sym, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise SolveError(f"ridge system singular at lam={lam}") from exc
    w = sla.cho_solve(factor, label_sums, check_finite=False)
    counts_present = np.linalg.norm(label_sums, axis=0) > 0
    absent = tuple(np.flatnonzero(~counts_present).tolist())
    weights = ClassifierWeights(_normalize_columns(w), "fed3r",
                                condition_number=condition_number(sym),
                                absent_classes=absent)
    return weights, float(lam)


def predict(weights: ClassifierWeights, features: np.ndarray) -> np.ndarray:
    """Arg-max class scores; ties resolve to the smallest class index."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[1] != weights.dim:
        raise FedInitError("feature dimension does not match weights")
    return np.argmax(feats @ weights.matrix, axis=1)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    per_class: np.ndarray  # nan for classes with no test rows


def evaluate(weights: ClassifierWeights, dataset: FeatureDataset) -> EvalResult:
    if dataset.num_classes != weights.num_classes:
        raise FedInitError("test set and weights disagree on class count")
    preds = predict(weights, dataset.features)
    correct = preds == dataset.labels
    per_class = np.full(dataset.num_classes, np.nan)
    for c in range(dataset.num_classes):
        rows = dataset.class_rows(c)
        if rows.size:
            per_class[c] = float(correct[rows].mean())
    return EvalResult(float(correct.mean()), per_class)


def write_weights(weights: ClassifierWeights, path: str | Path) -> None:
    path = Path(path)
    tag = METHOD_TAGS.get(weights.method)
    if tag is None:
        raise DataFormatError(f"unknown method {weights.method!r}")
    w32 = weights.matrix.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEDW_MAGIC, FEDW_VERSION, weights.dim,
                              weights.num_classes, tag))
        # column-major: serialize the transpose contiguously
        fh.write(np.ascontiguousarray(w32.T).tobytes())


def read_weights(path: str | Path) -> ClassifierWeights:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, dim, num_classes, tag = _HEADER.unpack_from(raw)
    if magic != FEDW_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != FEDW_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if tag not in _TAG_METHODS:
        raise DataFormatError(f"{path}: unknown method tag {tag}")
    expected = _HEADER.size + dim * num_classes * 4
    if len(raw) != expected:
        raise DataFormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    matrix = flat.reshape(num_classes, dim).T.astype(np.float64)
    return ClassifierWeights(matrix, _TAG_METHODS[tag])
