"""Materialize an experiment configuration into clients and datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackSpec, ReportStrategy
from .config import ExperimentConfig
from .data import (NearestCenterTrigger, make_synthetic_problem, partition_iid,
                   partition_noniid_shards)
from .errors import ConfigurationError
from .fileio import load_dataset_npz, load_idx
from .models import Dataset
from .rng import StreamFactory


@dataclass
class ClientState:
    id: int
    data: Dataset
    role: str  # "honest" or "malicious"
    attack: AttackSpec | None = None
    report_strategy: ReportStrategy | None = None
    poisoned: Dataset | None = None  # lazy cache of the attacker's training data

    def __post_init__(self):
        if self.role not in ("honest", "malicious"):
            raise ConfigurationError(f"unknown role {self.role!r}")
        if self.role == "honest" and (self.attack or self.report_strategy):
            raise ConfigurationError(
                f"honest client {self.id} cannot carry an attack or report strategy")


@dataclass
class World:
    config: ExperimentConfig
    clients: dict[int, ClientState]
    train_data: Dataset
    test_data: Dataset
    attack: AttackSpec | None
    centers: np.ndarray | None  # (classes, subclusters, dim) when known
    streams: StreamFactory


def _load_datasets(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "synthetic":
        problem = make_synthetic_problem(
            cfg.model.num_classes, cfg.model.input_dim, d.separation,
            d.cluster_spread, cfg.seed, d.subclusters)
        return problem.sample(d.per_class, "train"), problem.sample(
            d.test_per_class, "test"), problem.centers
    if d.source == "idx":
        return load_idx(d.train_images, d.train_labels), load_idx(
            d.test_images, d.test_labels), None
    train, test, centers = load_dataset_npz(d.path)
    return train, test, centers


def _check_data_matches_model(cfg: ExperimentConfig, train: Dataset) -> None:
    if train.input_dim != cfg.model.input_dim:
        raise ConfigurationError(
            f"data dimension {train.input_dim} != model input_dim {cfg.model.input_dim}")
    if train.num_classes != cfg.model.num_classes:
        raise ConfigurationError(
            f"data has {train.num_classes} classes, model expects {cfg.model.num_classes}")


def _resolve_trigger(cfg: ExperimentConfig, centers: np.ndarray | None):
    atk = cfg.attack
    if atk.kind != "backdoor":
        return None
    if centers is None:
        raise ConfigurationError("backdoor attack needs cluster centers in the data source")
    classes, subclusters, dim = centers.shape
    if not 0 <= atk.trigger_class < classes:
        raise ConfigurationError(f"trigger_class {atk.trigger_class} outside [0, {classes})")
    if not 0 <= atk.trigger_subcluster < subclusters:
        raise ConfigurationError(
            f"trigger_subcluster {atk.trigger_subcluster} outside [0, {subclusters})")
    index = atk.trigger_class * subclusters + atk.trigger_subcluster
    return NearestCenterTrigger(centers.reshape(-1, dim), index)


def _malicious_roster(cfg: ExperimentConfig, streams: StreamFactory) -> tuple[int, ...]:
    atk = cfg.attack
    if atk is None:
        return ()
    if atk.malicious_ids is not None:
        return tuple(sorted(atk.malicious_ids))
    count = int(round(atk.proportion * cfg.clients))
    rng = streams.stream("roster")
    return tuple(sorted(rng.choice(cfg.clients, size=count, replace=False).tolist()))


def build_world(config: ExperimentConfig) -> World:
    """Load data, partition it across N clients, and mark the malicious ones."""
    streams = StreamFactory(config.seed)
    train, test, centers = _load_datasets(config)
    _check_data_matches_model(config, train)

    if config.data.partition == "iid":
        parts = partition_iid(train, config.clients, streams.stream("partition"))
    else:
        parts = partition_noniid_shards(train, config.clients, streams.stream("partition"))

    attack = None
    if config.attack is not None:
        a = config.attack
        attack = AttackSpec(
            kind=a.kind, src_class=a.src_class, dst_class=a.dst_class,
            trigger=_resolve_trigger(config, centers), target_class=a.target_class,
            augment_copies=a.augment_copies, jitter_scale=a.jitter_scale,
            scaling=a.scaling)

    roster = set(_malicious_roster(config, streams))
    clients = {}
    for cid in range(config.clients):
        if cid in roster:
            clients[cid] = ClientState(cid, parts[cid], "malicious", attack,
                                       config.attack.report)
        else:
            clients[cid] = ClientState(cid, parts[cid], "honest")

    min_local = min(len(parts[cid]) for cid in range(config.clients))
    if config.train.batch_size > min_local:
        raise ConfigurationError(
            f"batch_size {config.train.batch_size} exceeds the smallest local "
            f"dataset ({min_local} samples)")
    return World(config, clients, train, test, attack, centers, streams)
