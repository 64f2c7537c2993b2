"""1-D k-means helpers: k-means++ seeding and Lloyd iterations."""

from __future__ import annotations

import numpy as np


def kmeans_pp_init(x, k, rng):
    """k-means++ seeding on scalar inputs; returns k centers."""
    x = np.asarray(x, dtype=float)
    if k <= 0 or k > x.size:
        raise ValueError(f"need 1 <= k <= {x.size}, got {k}")
    centers = [x[int(rng.integers(x.size))]]
    d2 = (x - centers[0]) ** 2
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            centers.append(centers[0])
            continue
        probs = d2 / total
        idx = int(rng.choice(x.size, p=probs))
        centers.append(x[idx])
        d2 = np.minimum(d2, (x - centers[-1]) ** 2)
    return np.asarray(centers)


def lloyd(x, centers, max_iter=50, tol=1e-6):
    """Lloyd iterations on scalar inputs.

    Empty clusters keep their previous center.  Returns (centers, labels).
    """
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float).copy()
    labels = np.zeros(x.size, dtype=int)
    for _ in range(max_iter):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        moved = 0.0
        for k in range(centers.size):
            members = x[labels == k]
            if members.size:
                new_c = members.mean()
                moved = max(moved, abs(new_c - centers[k]))
                centers[k] = new_c
        if moved < tol:
            break
    labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    return centers, labels
