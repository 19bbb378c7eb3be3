"""Round orchestration: selection, update collection, aggregation, defense.

The whole simulation is a pure function of (config, master seed).  Every
random choice draws from a named stream (selection, per-client training,
grouping, delegation, noise, reports), so the baseline and defended modes
consume identical randomness for the steps they share and can be compared
round by round.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .attacks import craft_update, malicious_report, poison_backdoor, poison_labelflip
from .config import MODES, ExperimentConfig
from .data import measure_subtask
from .defense import (SubModel, baseline_accuracy, build_submodels, choose_d_noniid,
                      collect_presence, delegate_iid, delegate_noniid,
                      evaluate_submodel, penalty_vector, tally_reports,
                      weighted_aggregate)
from .errors import ConfigurationError, InputError
from .models import (Dataset, ModelSpec, ParameterVector, TrainConfig,
                     cross_entropy_loss, evaluate_per_class, init_model, local_train)
from .privacy import assert_disjoint_groups, dp_mean, gaussian_noise, perturb_submodel
from .rng import StreamFactory
from .world import ClientState, World, build_world


@dataclass(frozen=True)
class RoundContext:
    t: int
    selected: tuple[int, ...]
    global_model: ParameterVector


@dataclass(frozen=True)
class UpdateRecord:
    owner: int
    delta: ParameterVector


@dataclass(frozen=True)
class SubModelLog:
    id: int
    members: tuple[int, ...]
    reports: int
    coefficient: float
    flagged_classes: tuple[int, ...]


@dataclass
class MetricsRecord:
    t: int
    main_accuracy: float
    subtask_rate: float       # nan when no attack is configured
    train_loss: float
    per_class: np.ndarray     # test-set accuracy per class, nan for absent
    submodels: list[SubModelLog] = field(default_factory=list)
    wall_ms: float = 0.0


@dataclass
class RunResult:
    config: ExperimentConfig
    mode: str
    records: list[MetricsRecord]
    final_model: ParameterVector


def select_clients(pool, k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniformly random K-subset of the pool, reported in sorted order."""
    pool = sorted(pool)
    if k > len(pool):
        raise InputError(f"cannot select {k} clients from a pool of {len(pool)}")
    picked = rng.choice(pool, size=k, replace=False)
    return tuple(sorted(int(c) for c in picked))


def fedavg_aggregate(w_t: ParameterVector,
                     updates: Sequence[UpdateRecord]) -> ParameterVector:
    """Plain update averaging: w_t + mean of deltas, reduced in owner order."""
    if len(updates) == 0:
        raise InputError("cannot aggregate zero updates")
    for u in updates:
        if u.delta.shape != w_t.shape:
            raise InputError(f"update from client {u.owner} has mismatched dim")
    ordered = sorted(updates, key=lambda u: u.owner)
    return w_t + np.mean([u.delta for u in ordered], axis=0)


def _attacker_dataset(st: ClientState, streams: StreamFactory) -> Dataset:
    if st.poisoned is None:
        atk = st.attack
        if atk.kind == "label-flip":
            st.poisoned = poison_labelflip(st.data, atk.src_class, atk.dst_class)
        else:
            st.poisoned = poison_backdoor(
                st.data, atk.trigger, atk.target_class, atk.augment_copies,
                atk.jitter_scale, streams.stream("poison", st.id))
    return st.poisoned


def collect_updates(spec: ModelSpec, ctx: RoundContext,
                    clients: Mapping[int, ClientState], cfg: TrainConfig,
                    streams: StreamFactory,
                    attacks_active: bool = True) -> list[UpdateRecord]:
    """One update per selected client; attackers run their poisoning pipeline.

    Each client trains from its own ("train", round, client) stream, so a
    record can be replayed by a standalone local_train call.  Inactive
    attackers behave honestly.  A full-replacement attacker is resolved
    last because its delta depends on everyone else's.
    """
    deltas: dict[int, ParameterVector] = {}
    pending_replacement: list[int] = []
    targets: dict[int, ParameterVector] = {}
    for cid in sorted(ctx.selected):
        st = clients[cid]
        attacking = attacks_active and st.role == "malicious" and st.attack is not None
        rng = streams.stream("train", ctx.t, cid)
        try:
            if not attacking:
                deltas[cid] = local_train(spec, ctx.global_model, st.data, cfg, rng)
                continue
            poisoned = _attacker_dataset(st, streams)
            x = ctx.global_model + local_train(spec, ctx.global_model, poisoned, cfg, rng)
            if st.attack.scaling.mode == "full-replacement":
                pending_replacement.append(cid)
                targets[cid] = x
            else:
                deltas[cid] = craft_update(st.attack.scaling, x, ctx.global_model)
        except InputError as exc:
            raise InputError(f"client {cid}: {exc}") from exc
    if len(pending_replacement) > 1:
        raise ConfigurationError(
            "full-replacement is defined for a single attacker per round; "
            f"clients {pending_replacement} all request it")
    for cid in pending_replacement:
        others = [deltas[c] for c in sorted(deltas)]
        deltas[cid] = craft_update(clients[cid].attack.scaling, targets[cid],
                                   ctx.global_model, others)
    return [UpdateRecord(cid, deltas[cid]) for cid in sorted(ctx.selected)]


def _defended_aggregate(world: World, ctx: RoundContext,
                        updates: list[UpdateRecord], attacks_active: bool,
                        ) -> tuple[ParameterVector, list[SubModelLog]]:
    cfg = world.config
    dfn = cfg.defense
    spec = cfg.model
    streams = world.streams
    t = ctx.t
    k = len(updates)

    if cfg.data.partition == "noniid-shards":
        presence = collect_presence(
            {cid: world.clients[cid].data for cid in ctx.selected},
            dfn.presence_threshold)
        d = choose_d_noniid(presence, k)
        u = k // d
    else:
        presence = None
        u = dfn.group_size if dfn.group_size is not None else k // dfn.num_submodels

    subs = build_submodels(ctx.global_model, updates, u, streams.stream("group", t))

    if cfg.dp is not None and "submodels" in cfg.dp.apply_to:
        assert_disjoint_groups(subs)
        by_owner = {r.owner: r.delta for r in updates}
        subs = [perturb_submodel(s, [by_owner[c] for c in s.members],
                                 ctx.global_model, cfg.dp.clip, cfg.dp.sigma,
                                 streams.stream("noise", t, s.id))
                for s in subs]

    if presence is None:
        plan = delegate_iid(subs, ctx.selected, spec.num_classes, dfn.evaluators,
                            dfn.max_tasks, streams.stream("delegate", t))
    else:
        plan = delegate_noniid(subs, presence, dfn.evaluators, dfn.max_tasks,
                               streams.stream("delegate", t))

    active_malicious = {cid for cid in ctx.selected
                        if attacks_active and world.clients[cid].role == "malicious"}
    poisoned_ids = {s.id for s in subs if set(s.members) & active_malicious}
    sub_by_id = {s.id: s for s in subs}

    reports = []
    for cid in sorted({a.evaluator for a in plan.assignments}):
        st = world.clients[cid]
        tasks = plan.for_evaluator(cid)
        if st.role == "malicious" and st.report_strategy is not None:
            reports.extend(malicious_report(tasks, poisoned_ids, st.report_strategy,
                                            streams.stream("report", t, cid)))
        else:
            base = baseline_accuracy(spec, ctx.global_model, st.data)
            for a in tasks:
                reports.append(evaluate_submodel(
                    spec, st.data, cid, sub_by_id[a.submodel_id], a.classes,
                    base, dfn.margin))

    tallies = tally_reports(reports, plan)
    pens = penalty_vector(tallies, dfn.evaluators, dfn.initial_penalty)
    w_next = weighted_aggregate(ctx.global_model, subs, pens,
                                literal=dfn.literal_aggregation)
    if cfg.dp is not None and "global" in cfg.dp.apply_to:
        w_next = w_next + gaussian_noise(
            w_next.shape, cfg.dp.clip, cfg.dp.sigma,
            streams.stream("noise-global", t)) / k

    flagged: dict[int, set[int]] = {s.id: set() for s in subs}
    for rep in reports:
        flagged[rep.submodel_id].update(rep.flagged_classes())
    logs = [SubModelLog(s.id, s.members, tallies[s.id], pens[s.id].coefficient,
                        tuple(sorted(flagged[s.id])))
            for s in subs]
    return w_next, logs


def _attack_becomes_active(cfg: ExperimentConfig, t: int, prev_accuracy: float) -> bool:
    a = cfg.attack
    if a.start_round is not None:
        return t >= a.start_round
    return prev_accuracy >= a.start_accuracy


def iter_training(config: ExperimentConfig, mode: str | None = None,
                  ) -> Iterator[tuple[MetricsRecord, ParameterVector]]:
    """Validate, build the world, and yield (metrics, global model) per round."""
    mode = mode if mode is not None else config.mode
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}")
    if mode == "defended" and config.defense is None:
        raise ConfigurationError("defended mode requires a [defense] section")
    world = build_world(config)
    return run_rounds(world, mode)


def run_rounds(world: World, mode: str):
    """Low-level driver over a prebuilt world; yields (metrics, model) per round."""
    cfg = world.config
    spec = cfg.model
    streams = world.streams
    w = init_model(spec, cfg.seed)
    attack_active = False
    prev_acc = 0.0
    for t in range(1, cfg.rounds + 1):
        started = time.perf_counter()
        if cfg.attack is not None and not attack_active:
            attack_active = _attack_becomes_active(cfg, t, prev_acc)
        selected = select_clients(range(cfg.clients), cfg.per_round,
                                  streams.stream("select", t))
        ctx = RoundContext(t, selected, w)
        updates = collect_updates(spec, ctx, world.clients, cfg.train, streams,
                                  attacks_active=attack_active)
        if mode == "defended":
            w_next, logs = _defended_aggregate(world, ctx, updates, attack_active)
        else:
            logs = []
            if cfg.dp is not None and "global" in cfg.dp.apply_to:
                w_next = w + dp_mean([u.delta for u in updates], cfg.dp.clip,
                                     cfg.dp.sigma, streams.stream("noise-global", t))
            else:
                w_next = fedavg_aggregate(w, updates)

        test_eval = evaluate_per_class(spec, w_next, world.test_data)
        subtask = (measure_subtask(spec, w_next, world.attack, world.test_data)
                   if world.attack is not None else float("nan"))
        loss = cross_entropy_loss(spec, w_next, world.train_data)
        record = MetricsRecord(
            t=t, main_accuracy=test_eval.overall, subtask_rate=subtask,
            train_loss=loss, per_class=test_eval.accuracy, submodels=logs,
            wall_ms=(time.perf_counter() - started) * 1000.0)
        prev_acc = test_eval.overall
        w = w_next
        yield record, w


def run_training(config: ExperimentConfig, mode: str | None = None) -> RunResult:
    """Execute all rounds eagerly and return the metrics and final model."""
    mode = mode if mode is not None else config.mode
    records = []
    final = init_model(config.model, config.seed)
    for record, w in iter_training(config, mode):
        records.append(record)
        final = w
    return RunResult(config, mode, records, final)
