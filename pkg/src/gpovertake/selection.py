"""Inducing-guided selection of opponent observations.

Maintains a curated training set under a hard size cap by composing, in
order: a per-lap spatial/time filter (latest observation per spatial bin), a
plausibility range filter, a model-confidence filter, an informativeness gate
based on the predictive distance to the inducing set, and a k-means pruning
pass seeded at the inducing inputs.

All stages are pure functions of their inputs and deterministic; the buffer
object only rebinds its train list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gp
from .cluster import lloyd


@dataclass(frozen=True)
class Observation:
    """One opponent sample: input x (arc length), target y, timestamp, lap."""

    x: float
    y: float
    t: float
    lap: int

    def __post_init__(self):
        if not np.isfinite(self.t):
            raise ValueError("observation timestamp must be finite")
        if self.lap < 0:
            raise ValueError("lap index must be non-negative")


@dataclass
class SelectionConfig:
    """Knobs for one curated buffer (one target quantity)."""

    n_target: int = 400
    delta_s: float = 0.2
    y_min: float = -np.inf
    y_max: float = np.inf
    track_length: float = 0.0


def spatial_time_filter(incoming, track_length, delta_s):
    """Keep, per (lap, spatial bin), only the observation with the largest
    timestamp; ties break toward the latest list position.  Output ordered by
    (lap, bin)."""
    if delta_s <= 0:
        raise ValueError("delta_s must be positive")
    best = {}
    for idx, obs in enumerate(incoming):
        k = int(obs.x // delta_s)
        key = (obs.lap, k)
        prev = best.get(key)
        if prev is None or obs.t >= prev[0].t:
            best[key] = (obs, idx)
    return [best[key][0] for key in sorted(best)]


def range_filter(obs, y_min, y_max):
    """Keep observations with target inside the closed interval [y_min, y_max]."""
    if y_min > y_max:
        raise ValueError("y_min must not exceed y_max")
    return [o for o in obs if y_min <= o.y <= y_max]


def confidence_filter(obs, model, n_train, n_target):
    """Keep observations inside the 95% band of the current model.

    Applies only once the train set exceeds two thirds of the cap; before
    that (or without a model) it passes everything through.
    """
    if model is None or n_train <= (2.0 / 3.0) * n_target or not obs:
        return list(obs)
    xs = np.array([o.x for o in obs])
    post = gp.predict(model, xs)
    sigma = np.sqrt(post.variance)
    lo = post.mean - 1.96 * sigma
    hi = post.mean + 1.96 * sigma
    return [o for o, l, h in zip(obs, lo, hi) if l <= o.y <= h]


def admit_informative(filtered, model, train):
    """Keep candidates whose predictive distance exceeds the train-set mean.

    The mean is computed once against the pre-merge train set.  With no model
    or an empty train set everything passes (bootstrap)."""
    if model is None or not train or not filtered:
        return list(filtered)
    train_x = np.array([o.x for o in train])
    threshold = float(np.mean(gp.predictive_distance(model, train_x)))
    cand_x = np.array([o.x for o in filtered])
    scores = gp.predictive_distance(model, cand_x)
    return [o for o, s in zip(filtered, scores) if s > threshold]


def kmeans_prune(merged, model, n_target):
    """Prune the merged set to the cap using clusters seeded at the inducing
    inputs: drop below-cluster-mean predictive distances, then, if still over
    the cap, keep the top floor(n_target * |C_k| / |merged|) per cluster."""
    if len(merged) < n_target:
        return list(merged)
    xs = np.array([o.x for o in merged])
    scores = gp.predictive_distance(model, xs)
    _, labels = lloyd(xs, model.z, max_iter=50, tol=1e-6)

    kept = []
    survivors_by_cluster = {}
    for k in range(model.z.size):
        members = np.nonzero(labels == k)[0]
        if members.size == 0:
            continue
        mean_k = float(np.mean(scores[members]))
        surv = [i for i in members if scores[i] >= mean_k]
        survivors_by_cluster[k] = (members.size, surv)
        kept.extend(surv)

    if len(kept) <= n_target:
        return [merged[i] for i in sorted(kept)]

    final = []
    total = len(merged)
    for k, (size_k, surv) in survivors_by_cluster.items():
        quota = int(np.floor(n_target * size_k / total))
        ranked = sorted(surv, key=lambda i: (-scores[i], i))
        final.extend(ranked[:quota])
    return [merged[i] for i in sorted(final)]


def select(train, incoming, model, config: SelectionConfig):
    """Full selection pass; returns the new train list (size <= n_target)."""
    filtered = spatial_time_filter(incoming, config.track_length, config.delta_s)
    filtered = range_filter(filtered, config.y_min, config.y_max)
    filtered = confidence_filter(filtered, model, len(train), config.n_target)
    filtered = admit_informative(filtered, model, train)
    merged = list(train) + filtered
    if model is not None and len(merged) >= config.n_target:
        merged = kmeans_prune(merged, model, config.n_target)
    return merged[: config.n_target] if len(merged) > config.n_target else merged


@dataclass
class ObservationBuffer:
    """Curated dataset for one opponent quantity (s -> d or s -> v)."""

    config: SelectionConfig
    train: list = field(default_factory=list)

    def update(self, incoming, model):
        self.train = select(self.train, incoming, model, self.config)
        return self.train

    def arrays(self):
        xs = np.array([o.x for o in self.train])
        ys = np.array([o.y for o in self.train])
        return xs, ys


def save_buffer(observations, path):
    """Snapshot export: one observation per row, lap,t,x,y with a header."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("lap,t_s,x_m,y\n")
        for o in observations:
            fh.write(f"{o.lap},{o.t!r},{o.x!r},{o.y!r}\n")


def load_buffer(path):
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("lap"):
            continue
        parts = text.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path.name}:{lineno}: expected 4 fields")
        out.append(Observation(lap=int(parts[0]), t=float(parts[1]), x=float(parts[2]), y=float(parts[3])))
    return out
