"""Client-side cross-validation defense.

The round's updates are grouped into sub-models, each sub-model is
delegated to non-member clients for evaluation on their local data, and
anomaly reports feed a quadratic penalty that down-weights suspicious
sub-models in the aggregate:

  c(r) = max(v * (1 - 4 ((r-1)/(e-2))^2), 0)   for r >= 1, c(0) = 1

where r counts distinct reporting evaluators, e is the evaluator count
per sub-model (or per class in the non-IID variant) and v is the
coefficient applied on the first report.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ProtocolError
from .models import Dataset, ModelSpec, ParameterVector, PerClassAccuracy, evaluate_per_class

MAX_RESTARTS = 1000  # bounded backtracking for randomized delegation


@dataclass(frozen=True)
class SubModel:
    """Average of u update deltas, materialized onto the round's global model."""

    id: int
    members: tuple[int, ...]          # owner client ids, sorted
    mean_delta: ParameterVector
    materialized: ParameterVector     # w_t + mean_delta


@dataclass(frozen=True)
class Assignment:
    submodel_id: int
    evaluator: int
    classes: tuple[int, ...]


@dataclass(frozen=True)
class DelegationPlan:
    assignments: tuple[Assignment, ...]
    d: int
    e: int
    m: int
    mode: str  # "iid" or "noniid"

    def for_submodel(self, submodel_id: int) -> list[Assignment]:
        return [a for a in self.assignments if a.submodel_id == submodel_id]

    def for_evaluator(self, client_id: int) -> list[Assignment]:
        return [a for a in self.assignments if a.evaluator == client_id]

    def load(self, client_id: int) -> int:
        return len({a.submodel_id for a in self.assignments if a.evaluator == client_id})


@dataclass(frozen=True)
class EvaluationReport:
    evaluator: int
    submodel_id: int
    flags: dict[int, bool]  # class index -> anomalous on the evaluator's data

    def any_flag(self) -> bool:
        return any(self.flags.values())

    def flagged_classes(self) -> tuple[int, ...]:
        return tuple(sorted(c for c, f in self.flags.items() if f))


@dataclass(frozen=True)
class PenaltyRecord:
    submodel_id: int
    reports: int        # r: distinct evaluators that flagged the sub-model
    coefficient: float  # c in [0, 1]


@dataclass(frozen=True)
class ClassPresenceVector:
    """present[c] is true when the client holds >= threshold samples of class c."""

    client: int
    present: np.ndarray
    threshold: int


def build_submodels(w_t: ParameterVector, updates: Sequence, u: int,
                    rng: np.random.Generator) -> list[SubModel]:
    """Shuffle the round's updates and average every u of them.

    ``updates`` are records with .owner and .delta attributes.  The member
    sets of the resulting d = K/u sub-models partition the round's owners.
    """
    k = len(updates)
    if u < 1:
        raise InputError("u must be >= 1")
    if k == 0 or k % u != 0:
        raise InputError(f"u={u} does not divide the update count K={k}")
    order = rng.permutation(k)
    subs = []
    for i in range(k // u):
        group = [updates[j] for j in order[i * u:(i + 1) * u]]
        mean_delta = np.mean([g.delta for g in group], axis=0)
        subs.append(SubModel(
            id=i,
            members=tuple(sorted(g.owner for g in group)),
            mean_delta=mean_delta,
            materialized=w_t + mean_delta,
        ))
    return subs


def _pick_least_loaded(eligible: list[int], load: dict[int, int], e: int,
                       rng: np.random.Generator) -> list[int]:
    # random tie-break keeps the choice uniform among equally loaded clients
    keys = rng.random(len(eligible))
    ranked = sorted(range(len(eligible)), key=lambda i: (load[eligible[i]], keys[i]))
    return [eligible[i] for i in ranked[:e]]


def delegate_iid(submodels: Sequence[SubModel], pool: Iterable[int], num_classes: int,
                 e: int, m: int, rng: np.random.Generator) -> DelegationPlan:
    """Assign each sub-model to e distinct non-member evaluators, load <= m each.

    Randomized but seed-deterministic; retries with fresh shuffles up to
    MAX_RESTARTS before declaring the parameters infeasible.
    """
    pool = sorted(pool)
    d = len(submodels)
    k = len(pool)
    if e < 1:
        raise InputError("e must be >= 1")
    if e * d > m * k:
        raise ConfigurationError(
            f"delegation needs e*d = {e * d} evaluation slots but only m*K = {m * k} exist")
    members = {s.id: set(s.members) for s in submodels}
    for s in submodels:
        avail = k - len(members[s.id] & set(pool))
        if e > avail:
            raise ConfigurationError(
                f"sub-model {s.id} has only {avail} non-member clients, needs e = {e}")

    all_classes = tuple(range(num_classes))
    for _ in range(MAX_RESTARTS):
        order = rng.permutation(d)
        load = {c: 0 for c in pool}
        chosen: dict[int, list[int]] = {}
        feasible = True
        for idx in order:
            sid = submodels[idx].id
            eligible = [c for c in pool if c not in members[sid] and load[c] < m]
            if len(eligible) < e:
                feasible = False
                break
            take = _pick_least_loaded(eligible, load, e, rng)
            for c in take:
                load[c] += 1
            chosen[sid] = take
        if feasible:
            assignments = tuple(
                Assignment(s.id, c, all_classes)
                for s in submodels for c in chosen[s.id])
            return DelegationPlan(assignments, d=d, e=e, m=m, mode="iid")
    raise ConfigurationError(
        f"no feasible delegation found after {MAX_RESTARTS} restarts "
        f"(d={d}, e={e}, m={m}, K={k})")


def collect_presence(datasets: Mapping[int, Dataset], threshold: int,
                     ) -> dict[int, ClassPresenceVector]:
    """Binary per-class vectors: 1 when a client holds >= threshold samples."""
    if threshold < 1:
        raise InputError("presence threshold must be >= 1")
    out = {}
    for client, data in datasets.items():
        counts = data.class_counts()
        out[client] = ClassPresenceVector(client, counts >= threshold, threshold)
    return out


def _divisors_desc(n: int) -> list[int]:
    return sorted((d for d in range(1, n + 1) if n % d == 0), reverse=True)


def choose_d_noniid(presence: Mapping[int, ClassPresenceVector], k: int) -> int:
    """Smallest per-class holder count, clamped down to a divisor of K."""
    vectors = np.array([v.present for v in presence.values()], dtype=int)
    coverage = vectors.sum(axis=0)
    raw = int(coverage.min())
    if raw < 1:
        starved = int(np.argmin(coverage))
        raise ConfigurationError(f"class {starved} is held by no client")
    for div in _divisors_desc(k):
        if div <= raw:
            return div
    raise ConfigurationError(f"no divisor of K={k} is <= {raw}")  # unreachable: 1 divides K


def delegate_noniid(submodels: Sequence[SubModel],
                    presence: Mapping[int, ClassPresenceVector],
                    e: int, m: int, rng: np.random.Generator) -> DelegationPlan:
    """Cover every (sub-model, class) pair with e distinct holders of that class.

    Evaluators are reused across classes of the same sub-model greedily
    (largest remaining coverage first, random tie-break), which keeps the
    number of distinct evaluators per sub-model small.
    """
    pool = sorted(presence)
    d = len(submodels)
    k = len(pool)
    if e < 1:
        raise InputError("e must be >= 1")
    num_classes = len(next(iter(presence.values())).present)
    members = {s.id: set(s.members) for s in submodels}

    for s in submodels:
        for c in range(num_classes):
            holders = sum(
                1 for p in pool
                if p not in members[s.id] and presence[p].present[c])
            if holders < e:
                raise ConfigurationError(
                    f"class {c} has only {holders} non-member holders for "
                    f"sub-model {s.id}, needs e = {e}")
    if e * d > m * k:
        raise ConfigurationError(
            f"delegation needs at least e*d = {e * d} evaluation slots "
            f"but only m*K = {m * k} exist")

    last_starved = None
    for _ in range(MAX_RESTARTS):
        order = rng.permutation(d)
        load = {c: 0 for c in pool}
        per_sub: dict[int, list[tuple[int, tuple[int, ...]]]] = {}
        feasible = True
        for idx in order:
            sid = submodels[idx].id
            needed = np.full(num_classes, e, dtype=int)
            used: set[int] = set()
            picks: list[tuple[int, tuple[int, ...]]] = []
            while needed.any():
                cands = [c for c in pool
                         if c not in members[sid] and c not in used and load[c] < m]
                best, best_gain, best_key = None, 0, float("inf")
                keys = rng.random(len(cands))
                for key, c in zip(keys, cands):
                    gain = int(np.sum((needed > 0) & presence[c].present))
                    if gain > best_gain or (gain == best_gain > 0 and key < best_key):
                        best, best_gain, best_key = c, gain, key
                if best is None:
                    last_starved = int(np.argmax(needed))
                    feasible = False
                    break
                covered = tuple(int(c) for c in np.nonzero(
                    (needed > 0) & presence[best].present)[0])
                needed[list(covered)] -= 1
                used.add(best)
                load[best] += 1
                picks.append((best, covered))
            if not feasible:
                break
            per_sub[sid] = picks
        if feasible:
            assignments = tuple(
                Assignment(s.id, client, classes)
                for s in submodels for client, classes in per_sub[s.id])
            return DelegationPlan(assignments, d=d, e=e, m=m, mode="noniid")
    raise ConfigurationError(
        f"no feasible non-IID delegation after {MAX_RESTARTS} restarts; "
        f"class {last_starved} starves under the load limit m={m}")


def check_plan_invariants(plan: DelegationPlan, submodels: Sequence[SubModel],
                          presence: Mapping[int, ClassPresenceVector] | None = None,
                          num_classes: int | None = None) -> None:
    """Raise InputError when a plan violates any delegation invariant."""
    members = {s.id: set(s.members) for s in submodels}
    for a in plan.assignments:
        if a.evaluator in members[a.submodel_id]:
            raise InputError(
                f"client {a.evaluator} evaluates its own sub-model {a.submodel_id}")
    evaluators = {a.evaluator for a in plan.assignments}
    for c in evaluators:
        if plan.load(c) > plan.m:
            raise InputError(f"client {c} is assigned {plan.load(c)} > m sub-models")
    for s in submodels:
        per_sub = plan.for_submodel(s.id)
        distinct = {a.evaluator for a in per_sub}
        if len(distinct) != len(per_sub):
            raise InputError(f"duplicate evaluator on sub-model {s.id}")
        if plan.mode == "iid":
            if len(distinct) != plan.e:
                raise InputError(
                    f"sub-model {s.id} has {len(distinct)} evaluators, expected e = {plan.e}")
            if num_classes is not None:
                for a in per_sub:
                    if a.classes != tuple(range(num_classes)):
                        raise InputError("iid assignment must span all classes")
        else:
            n_cls = num_classes
            if n_cls is None and presence is not None:
                n_cls = len(next(iter(presence.values())).present)
            cover = np.zeros(n_cls, dtype=int)
            for a in per_sub:
                for c in a.classes:
                    cover[c] += 1
                    if presence is not None and not presence[a.evaluator].present[c]:
                        raise InputError(
                            f"client {a.evaluator} assigned class {c} it does not hold")
            if not np.all(cover == plan.e):
                raise InputError(
                    f"sub-model {s.id} class coverage {cover.tolist()} != e = {plan.e}")


def evaluate_submodel(spec: ModelSpec, data: Dataset, evaluator: int,
                      sub: SubModel, classes: Iterable[int],
                      baseline_accuracy: np.ndarray, margin: float,
                      ) -> EvaluationReport:
    """Flag a class when the sub-model's local accuracy drops margin below baseline.

    ``baseline_accuracy`` is the evaluator's own per-class accuracy of the
    current global model (nan for classes it holds no samples of); classes
    that cannot be measured locally are never flagged.
    """
    local = evaluate_per_class(spec, sub.materialized, data)
    flags = {}
    for c in classes:
        measurable = local.count[c] > 0 and np.isfinite(baseline_accuracy[c])
        flags[int(c)] = bool(
            measurable and local.accuracy[c] < baseline_accuracy[c] - margin)
    return EvaluationReport(evaluator=evaluator, submodel_id=sub.id, flags=flags)


def baseline_accuracy(spec: ModelSpec, params: ParameterVector,
                      data: Dataset) -> np.ndarray:
    """Per-class accuracy of the current global model on an evaluator's data."""
    return evaluate_per_class(spec, params, data).accuracy


def penalty(r: int, e: int, v: float) -> float:
    """Penalizing coefficient for a sub-model reported anomalous by r clients.

    r = 0 leaves the sub-model unpenalized; from the first report the
    coefficient starts at v and falls on a parabola that hits zero once
    (r-1)/(e-2) reaches 1/2, i.e. when half the evaluators agree.
    """
    if e < 3:
        raise ConfigurationError("penalty requires e >= 3")
    if r < 0:
        raise InputError("report count must be >= 0")
    if not 0 < v <= 1:
        raise InputError("v must lie in (0, 1]")
    if r == 0:
        return 1.0
    ratio = (r - 1) / (e - 2)
    return max(v * (1.0 - 4.0 * ratio * ratio), 0.0)


def tally_reports(reports: Iterable[EvaluationReport], plan: DelegationPlan,
                  ) -> dict[int, int]:
    """Count, per sub-model, the distinct evaluators that flagged any class."""
    allowed = {(a.submodel_id, a.evaluator): set(a.classes) for a in plan.assignments}
    counts = {a.submodel_id: set() for a in plan.assignments}
    for rep in reports:
        key = (rep.submodel_id, rep.evaluator)
        if key not in allowed:
            raise ProtocolError(
                f"report from client {rep.evaluator} on sub-model {rep.submodel_id} "
                "is outside the delegation plan")
        if set(rep.flags) != allowed[key]:
            raise ProtocolError(
                f"report from client {rep.evaluator} on sub-model {rep.submodel_id} "
                "covers classes outside its assignment")
        if rep.any_flag():
            counts[rep.submodel_id].add(rep.evaluator)
    return {sid: len(who) for sid, who in counts.items()}


def penalty_vector(tallies: Mapping[int, int], e: int, v: float,
                   ) -> dict[int, PenaltyRecord]:
    return {sid: PenaltyRecord(sid, r, penalty(r, e, v)) for sid, r in tallies.items()}


def weighted_aggregate(w_t: ParameterVector, submodels: Sequence[SubModel],
                       penalties: Mapping[int, PenaltyRecord],
                       literal: bool = False) -> ParameterVector:
    """Penalty-weighted aggregation of the round's sub-models.

    Default applies coefficients to the mean deltas:
       w_{t+1} = w_t + (1/d) sum_i c_i * mean_delta_i
    which reduces to plain update averaging when every c_i = 1.  The
    ``literal`` switch instead scales the materialized sub-models
    (w_{t+1} = (1/d) sum_i c_i * (w_t + mean_delta_i)), which shrinks the
    global model whenever any c_i < 1; it exists for comparison only.
    """
    missing = [s.id for s in submodels if s.id not in penalties]
    if missing:
        raise InputError(f"penalties missing for sub-models {missing}")
    d = len(submodels)
    if d == 0:
        raise InputError("no sub-models to aggregate")
    if literal:
        acc = np.zeros_like(w_t)
        for s in submodels:
            acc += penalties[s.id].coefficient * s.materialized
        return acc / d
    acc = np.zeros_like(w_t)
    for s in submodels:
        acc += penalties[s.id].coefficient * s.mean_delta
    return w_t + acc / d
