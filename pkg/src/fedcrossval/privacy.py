"""Client-level privacy: L2 clipping and Gaussian perturbation of aggregates.

The mechanism clips each update delta to norm S, adds a single Gaussian
draw of per-coordinate scale sigma*S to the group sum, and divides by the
group size.  Because a round's updates are partitioned into disjoint
sub-model groups before noising, one draw per group spends the privacy
budget only once (parallel composition).  Formal (epsilon, delta)
accounting is out of scope; the mechanism parameters are surfaced so an
accountant could be layered on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .defense import SubModel
from .errors import InputError
from .models import ParameterVector


@dataclass(frozen=True)
class DpConfig:
    clip: float                      # S: L2 bound per update
    sigma: float                     # noise scale multiplier on S
    apply_to: frozenset[str] = frozenset({"submodels"})

    def __post_init__(self):
        if not self.clip > 0:
            raise InputError("clip bound S must be positive")
        if self.sigma < 0:
            raise InputError("sigma must be >= 0")
        unknown = set(self.apply_to) - {"submodels", "global"}
        if unknown:
            raise InputError(f"unknown dp targets {sorted(unknown)}")


def clip_delta(delta: ParameterVector, s: float) -> ParameterVector:
    """Scale delta down to L2 norm s if it exceeds it: delta / max(1, |delta|/s)."""
    if not s > 0:
        raise InputError("clip bound must be positive")
    norm = float(np.linalg.norm(delta))
    return delta / max(1.0, norm / s)


def gaussian_noise(shape, s: float, sigma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """One zero-mean draw with per-coordinate standard deviation sigma * s."""
    return rng.normal(0.0, sigma * s, size=shape)


def dp_mean(deltas: Sequence[ParameterVector], s: float, sigma: float,
            rng: np.random.Generator) -> ParameterVector:
    """(1/K) * (sum of clipped deltas + N(0, sigma^2 s^2)) per coordinate."""
    if len(deltas) == 0:
        raise InputError("dp_mean requires at least one delta")
    total = np.sum([clip_delta(d, s) for d in deltas], axis=0)
    if sigma > 0:
        total = total + gaussian_noise(total.shape, s, sigma, rng)
    return total / len(deltas)


def perturb_submodel(sub: SubModel, member_deltas: Sequence[ParameterVector],
                     w_t: ParameterVector, s: float, sigma: float,
                     rng: np.random.Generator) -> SubModel:
    """Rebuild a sub-model from member-clipped deltas plus one noise draw."""
    if len(member_deltas) != len(sub.members):
        raise InputError("member delta count does not match the sub-model")
    noisy = dp_mean(member_deltas, s, sigma, rng)
    return SubModel(sub.id, sub.members, noisy, w_t + noisy)


def assert_disjoint_groups(submodels: Sequence[SubModel]) -> None:
    """Parallel composition needs disjoint member groups; verify before noising."""
    seen: set[int] = set()
    for sub in submodels:
        overlap = seen & set(sub.members)
        if overlap:
            raise InputError(f"sub-model groups overlap on clients {sorted(overlap)}")
        seen.update(sub.members)
