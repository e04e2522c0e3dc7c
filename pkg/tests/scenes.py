"""Synthetic inputs shared by several test modules."""

import numpy as np

from trafficdt.lds import LdsParams, lds_sample
from trafficdt.motionseg import PatchGrid


def two_source_patches(seed, per_source=200, m=9, T=10):
    """Half the patches from a strongly dynamic LDS, half from white noise."""
    rng = np.random.default_rng(seed)
    n = 2
    a = LdsParams(0.95 * np.eye(n), rng.normal(size=(m, n)), np.eye(n), 0.1 * np.eye(m),
                  np.zeros(n), np.eye(n) / (1 - 0.95**2))
    b = LdsParams(np.zeros((n, n)), rng.normal(size=(m, n)), np.eye(n), 0.1 * np.eye(m),
                  np.zeros(n), np.eye(n))
    data = [lds_sample(a, T, 10_000 * seed + i) for i in range(per_source)]
    data += [lds_sample(b, T, 10_000 * seed + 5000 + i) for i in range(per_source)]
    labels = np.r_[np.zeros(per_source, int), np.ones(per_source, int)]
    return PatchGrid.from_sequences(np.stack(data)), labels


def label_accuracy(pred, truth):
    """Two-class accuracy up to swapping the labels."""
    return max(np.mean(pred == truth), np.mean(pred != truth))
