"""Synthetic Gaussian-cluster classification data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def classes(self) -> int:
        return int(max(self.train_y.max(), self.test_y.max())) + 1


def gaussian_clusters(dim=64, classes=4, clusters_per_class=4, n_train=4000, n_test=2000,
                      separation=5.0, noise=1.0, outlier_features=0, outlier_scale=10.0,
                      seed=0) -> Dataset:
    """Gaussian clusters, ``clusters_per_class`` per label, centres about
    ``separation`` noise-units apart. More than one cluster per class makes
    the task non-linear.

    The first ``outlier_features`` features are multiplied by
    ``outlier_scale``, mimicking the few high-magnitude activation channels of
    large language models.
    """
    rng = np.random.default_rng(seed)
    n_centres = classes * clusters_per_class
    centres = rng.normal(0.0, separation / np.sqrt(2 * dim), size=(n_centres, dim))
    scales = np.ones(dim)
    scales[:outlier_features] = outlier_scale

    def draw(n):
        c = rng.integers(0, n_centres, size=n)
        x = centres[c] + rng.normal(0.0, noise, size=(n, dim))
        return x * scales, c % classes

    tx, ty = draw(n_train)
    vx, vy = draw(n_test)
    return Dataset(tx, ty, vx, vy)
