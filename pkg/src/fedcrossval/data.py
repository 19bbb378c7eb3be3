"""Dataset synthesis, partitioning, and attack-success measurement.

The synthetic generator stands in for image corpora at desk scale:
Gaussian clusters with one mean per class, optionally split into named
sub-clusters.  Sub-clusters double as semantic backdoor triggers (the
trigger predicate is nearest-center membership over all sub-cluster
centers, a pure function of the features).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackSpec
from .errors import InputError
from .models import Dataset, ModelSpec, ParameterVector, predict_labels
from .rng import derive_rng


@dataclass(frozen=True, eq=False)
class NearestCenterTrigger:
    """Matches samples whose nearest sub-cluster center is the designated one."""

    centers: np.ndarray   # (n_centers, input_dim)
    target_index: int

    def __call__(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        d2 = ((features[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1) == self.target_index


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """Fixed cluster geometry from which any number of splits can be sampled."""

    num_classes: int
    input_dim: int
    separation: float
    cluster_spread: float
    subclusters: int
    seed: int
    centers: np.ndarray  # (num_classes, subclusters, input_dim)

    def sample(self, per_class: int, split: str = "train") -> Dataset:
        if per_class < 1:
            raise InputError("per_class must be >= 1")
        rng = derive_rng(self.seed, "synth-samples", split)
        feats, labels = [], []
        for c in range(self.num_classes):
            sizes = _near_equal_split(per_class, self.subclusters)
            for s, count in enumerate(sizes):
                pts = self.centers[c, s] + rng.normal(
                    0.0, self.cluster_spread, size=(count, self.input_dim))
                feats.append(pts)
                labels.append(np.full(count, c, dtype=np.int64))
        return Dataset(np.vstack(feats), np.concatenate(labels), self.num_classes)

    def trigger(self, class_index: int, subcluster: int) -> NearestCenterTrigger:
        if not 0 <= class_index < self.num_classes:
            raise InputError(f"class {class_index} outside [0, {self.num_classes})")
        if not 0 <= subcluster < self.subclusters:
            raise InputError(f"subcluster {subcluster} outside [0, {self.subclusters})")
        flat = self.centers.reshape(-1, self.input_dim)
        return NearestCenterTrigger(flat, class_index * self.subclusters + subcluster)


def _near_equal_split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def make_synthetic_problem(num_classes: int, input_dim: int, separation: float,
                           cluster_spread: float, seed: int,
                           subclusters: int = 1) -> SyntheticProblem:
    """Place class means at pairwise distance >= separation, seeded."""
    if num_classes < 2:
        raise InputError("need at least two classes")
    if not separation > 0:
        raise InputError("separation must be positive")
    if cluster_spread < 0:
        raise InputError("cluster_spread must be >= 0")
    if subclusters < 1:
        raise InputError("subclusters must be >= 1")
    rng = derive_rng(seed, "synth-centers")
    means = rng.normal(size=(num_classes, input_dim))
    # rescale so the closest pair sits exactly at the requested separation
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    min_dist = dist[np.triu_indices(num_classes, k=1)].min()
    if min_dist <= 0:
        raise InputError("degenerate class means; use a different seed")
    means *= separation / min_dist
    centers = np.repeat(means[:, None, :], subclusters, axis=1).astype(np.float64)
    if subclusters > 1:
        offsets = rng.normal(size=(num_classes, subclusters, input_dim))
        norms = np.linalg.norm(offsets, axis=2, keepdims=True)
        centers = centers + offsets / norms * (separation / 4.0)
    return SyntheticProblem(num_classes, input_dim, separation, cluster_spread,
                            subclusters, int(seed), centers)


def synth_dataset(num_classes: int, input_dim: int, per_class: int,
                  separation: float, cluster_spread: float, seed: int,
                  subclusters: int = 1, split: str = "train") -> Dataset:
    problem = make_synthetic_problem(num_classes, input_dim, separation,
                                     cluster_spread, seed, subclusters)
    return problem.sample(per_class, split)


def partition_iid(data: Dataset, n: int, rng: np.random.Generator) -> list[Dataset]:
    """Random permutation split into n parts with sizes differing by at most 1."""
    if n < 1:
        raise InputError("need at least one part")
    if n > len(data):
        raise InputError(f"cannot split {len(data)} samples into {n} nonempty parts")
    perm = rng.permutation(len(data))
    return [data.subset(chunk) for chunk in np.array_split(perm, n)]


def partition_noniid_shards(data: Dataset, n: int,
                            rng: np.random.Generator) -> list[Dataset]:
    """Label-sorted split into 2n contiguous shards; each client draws 2.

    Shards are dealt without replacement, so every client ends up with at
    most two label-contiguous segments (strong label skew).
    """
    if n < 1:
        raise InputError("need at least one client")
    if len(data) < 2 * n:
        raise InputError(f"{len(data)} samples cannot fill 2N = {2 * n} shards")
    order = np.argsort(data.labels, kind="stable")
    shards = np.array_split(order, 2 * n)
    deal = rng.permutation(2 * n)
    out = []
    for i in range(n):
        a, b = shards[deal[2 * i]], shards[deal[2 * i + 1]]
        out.append(data.subset(np.concatenate([a, b])))
    return out


def measure_subtask(spec: ModelSpec, params: ParameterVector,
                    attack: AttackSpec, test_data: Dataset) -> float:
    """Attacker subtask success rate on held-out data.

    label-flip: fraction of true src-class samples predicted as dst.
    backdoor: fraction of trigger-matching samples predicted as target.
    """
    if attack.kind == "label-flip":
        mask = test_data.labels == attack.src_class
        if not mask.any():
            raise InputError(
                f"test data holds no samples of source class {attack.src_class}")
        preds = predict_labels(spec, params, test_data.features[mask])
        return float(np.mean(preds == attack.dst_class))
    mask = np.asarray(attack.trigger(test_data.features), dtype=bool)
    if not mask.any():
        raise InputError("test data holds no trigger-matching samples")
    preds = predict_labels(spec, params, test_data.features[mask])
    return float(np.mean(preds == attack.target_class))
