import numpy as np
import pytest

from fedinit.features import FeatureDataset
from fedinit.partition import ClientAssignment


def make_dataset(features, labels, num_classes=None):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return FeatureDataset(features, labels, num_classes)


def random_dataset(rng, num_classes, dim, per_class_low=3, per_class_high=30,
                   spread=1.0):
    """Class-blocked Gaussian blobs with random per-class sizes."""
    counts = rng.integers(per_class_low, per_class_high + 1, num_classes)
    means = spread * rng.standard_normal((num_classes, dim))
    feats = rng.standard_normal((int(counts.sum()), dim))
    feats += means.repeat(counts, axis=0)
    labels = np.repeat(np.arange(num_classes), counts)
    return make_dataset(feats, labels, num_classes)


def single_owner(dataset):
    return ClientAssignment(1, np.zeros(dataset.num_samples, dtype=np.int64))


def pooled_class_cov(dataset, label):
    """Centralized sample covariance of one class, ddof 1."""
    rows = dataset.features[dataset.labels == label]
    return np.cov(rows, rowvar=False, ddof=1).reshape(dataset.dim, dataset.dim)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
