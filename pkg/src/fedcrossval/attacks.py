"""Poisoning behaviors: dataset manipulation, update crafting, false reports.

Dataset poisoning never mutates its input; each operation returns a new
Dataset so honest state cannot be tampered with by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .defense import Assignment, EvaluationReport
from .errors import InputError
from .models import Dataset, ParameterVector

SCALING_MODES = ("none", "scale-by-factor", "full-replacement")

# A backdoor trigger is any callable mapping an (n, input_dim) feature
# matrix to a boolean mask of matching rows.
Trigger = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScalingSpec:
    mode: str = "none"
    factor: float | None = None

    def __post_init__(self):
        if self.mode not in SCALING_MODES:
            raise InputError(f"unknown scaling mode {self.mode!r}")
        if self.mode == "scale-by-factor":
            if self.factor is None or not self.factor > 0:
                raise InputError("scale-by-factor requires factor > 0")
        elif self.factor is not None:
            raise InputError("factor is only meaningful for scale-by-factor")


@dataclass(frozen=True)
class ReportStrategy:
    """How a malicious evaluator fills in its reports.

    always-clear: never flag anything (shield co-conspirators).
    frame-honest: additionally flag each evaluated class of non-poisoned
    sub-models with probability frame_rate.
    """

    kind: str = "always-clear"
    frame_rate: float | None = None

    def __post_init__(self):
        if self.kind not in ("always-clear", "frame-honest"):
            raise InputError(f"unknown report strategy {self.kind!r}")
        if self.kind == "frame-honest":
            if self.frame_rate is None or not 0 <= self.frame_rate <= 1:
                raise InputError("frame-honest requires frame_rate in [0, 1]")
        elif self.frame_rate is not None:
            raise InputError("frame_rate is only meaningful for frame-honest")


@dataclass(frozen=True)
class AttackSpec:
    kind: str  # "label-flip" or "backdoor"
    src_class: int | None = None
    dst_class: int | None = None
    trigger: Trigger | None = None
    target_class: int | None = None
    augment_copies: int = 0
    jitter_scale: float = 0.0
    scaling: ScalingSpec = field(default_factory=ScalingSpec)

    def __post_init__(self):
        if self.kind == "label-flip":
            if self.src_class is None or self.dst_class is None:
                raise InputError("label-flip requires src_class and dst_class")
            if self.src_class == self.dst_class:
                raise InputError("label-flip source and destination must differ")
        elif self.kind == "backdoor":
            if self.trigger is None or self.target_class is None:
                raise InputError("backdoor requires a trigger and a target_class")
            if self.augment_copies < 0:
                raise InputError("augment_copies must be >= 0")
            if self.jitter_scale < 0:
                raise InputError("jitter_scale must be >= 0")
        else:
            raise InputError(f"unknown attack kind {self.kind!r}")


def poison_labelflip(data: Dataset, src: int, dst: int) -> Dataset:
    """Relabel every src-class sample as dst; features and order untouched."""
    for c in (src, dst):
        if not 0 <= c < data.num_classes:
            raise InputError(f"class {c} outside [0, {data.num_classes})")
    if src == dst:
        raise InputError("source and destination class must differ")
    labels = data.labels.copy()
    labels[labels == src] = dst
    return Dataset(data.features.copy(), labels, data.num_classes)


def poison_fraction(data: Dataset, fraction: float, target_class: int,
                    rng: np.random.Generator) -> Dataset:
    """Relabel ceil(fraction * n) uniformly chosen samples as target_class."""
    if len(data) == 0:
        raise InputError("cannot poison an empty dataset")
    if not 0 < fraction <= 1:
        raise InputError("fraction must lie in (0, 1]")
    if not 0 <= target_class < data.num_classes:
        raise InputError(f"class {target_class} outside [0, {data.num_classes})")
    k = int(np.ceil(fraction * len(data)))
    idx = rng.choice(len(data), size=k, replace=False)
    labels = data.labels.copy()
    labels[idx] = target_class
    return Dataset(data.features.copy(), labels, data.num_classes)


def poison_backdoor(data: Dataset, trigger: Trigger, target: int,
                    augment_copies: int, jitter_scale: float,
                    rng: np.random.Generator) -> Dataset:
    """Relabel trigger-matching samples as target and append jittered copies.

    The appended copies are trigger samples plus zero-mean Gaussian noise of
    scale jitter_scale, all labeled target.
    """
    if not 0 <= target < data.num_classes:
        raise InputError(f"class {target} outside [0, {data.num_classes})")
    mask = np.asarray(trigger(data.features), dtype=bool)
    n_match = int(mask.sum())
    if n_match == 0:
        raise InputError("trigger matches no samples; the attack is undefined")
    labels = data.labels.copy()
    labels[mask] = target
    features = data.features.copy()
    if augment_copies > 0:
        pick = rng.choice(np.nonzero(mask)[0], size=augment_copies, replace=True)
        extra = data.features[pick] + rng.normal(
            0.0, jitter_scale, size=(augment_copies, data.input_dim))
        features = np.vstack([features, extra])
        labels = np.concatenate([labels, np.full(augment_copies, target, dtype=np.int64)])
    return Dataset(features, labels, data.num_classes)


def craft_update(scaling: ScalingSpec, x_target: ParameterVector,
                 global_model: ParameterVector,
                 others: Sequence[ParameterVector] | None = None,
                 ) -> ParameterVector:
    """Turn the attacker's desired model X into the delta it submits.

    none:            X - G
    scale-by-factor: factor * (X - G)
    full-replacement: gamma*(X - G) - sum(others) with gamma = len(others)+1,
        so that plain update averaging over this delta and the others yields
        exactly X.  Requires knowledge of the other deltas.
    """
    x_target = np.asarray(x_target, dtype=np.float64)
    global_model = np.asarray(global_model, dtype=np.float64)
    if x_target.shape != global_model.shape:
        raise InputError("target and global model dims differ")
    if scaling.mode == "none":
        return x_target - global_model
    if scaling.mode == "scale-by-factor":
        return scaling.factor * (x_target - global_model)
    if others is None:
        raise InputError("full-replacement requires the other clients' deltas")
    others = [np.asarray(o, dtype=np.float64) for o in others]
    for o in others:
        if o.shape != global_model.shape:
            raise InputError("honest delta dims differ from the global model")
    gamma = len(others) + 1
    return gamma * (x_target - global_model) - sum(others)


def malicious_report(assignments: Iterable[Assignment], poisoned_ids: set[int],
                     strategy: ReportStrategy, rng: np.random.Generator,
                     ) -> list[EvaluationReport]:
    """Fabricate reports for a colluding evaluator.

    Poisoned sub-models are always reported clean.  Under frame-honest,
    each evaluated class of a non-poisoned sub-model is flagged
    independently with probability frame_rate.
    """
    reports = []
    for a in assignments:
        if strategy.kind == "frame-honest" and a.submodel_id not in poisoned_ids:
            flags = {int(c): bool(rng.random() < strategy.frame_rate) for c in a.classes}
        else:
            flags = {int(c): False for c in a.classes}
        reports.append(EvaluationReport(a.evaluator, a.submodel_id, flags))
    return reports
