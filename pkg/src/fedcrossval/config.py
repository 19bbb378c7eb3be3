"""Experiment configuration: INI-style files with strict validation.

Every key is checked; unknown sections or keys are errors, as are missing
required keys.  The learning rate has no default on purpose: runs must
state it explicitly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import ReportStrategy, ScalingSpec
from .errors import ConfigurationError
from .models import MLP_1HIDDEN, SOFTMAX_LINEAR, ModelSpec, TrainConfig
from .privacy import DpConfig

MODES = ("fedavg-baseline", "defended")
PARTITIONS = ("iid", "noniid-shards")
DATA_SOURCES = ("synthetic", "idx", "npz")
ATTACK_KINDS = ("label-flip", "backdoor")


@dataclass(frozen=True)
class DataConfig:
    source: str
    partition: str
    per_class: int = 600
    test_per_class: int = 100
    separation: float = 6.0
    cluster_spread: float = 1.0
    subclusters: int = 1
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    path: str | None = None   # npz bundle


@dataclass(frozen=True)
class AttackConfig:
    """Declarative attack description; triggers are resolved against the data."""

    kind: str
    src_class: int | None = None
    dst_class: int | None = None
    trigger_class: int | None = None
    trigger_subcluster: int = 0
    target_class: int | None = None
    augment_copies: int = 0
    jitter_scale: float = 0.0
    scaling: ScalingSpec = field(default_factory=ScalingSpec)
    malicious_ids: tuple[int, ...] | None = None
    proportion: float | None = None
    start_round: int | None = None
    start_accuracy: float = 0.9
    report: ReportStrategy = field(default_factory=ReportStrategy)


@dataclass(frozen=True)
class DefenseConfig:
    evaluators: int            # e
    max_tasks: int             # m
    group_size: int | None = None   # u; exactly one of u/d for IID rounds
    num_submodels: int | None = None  # d
    initial_penalty: float = 0.5    # v
    margin: float = 0.1             # anomaly margin on per-class accuracy
    presence_threshold: int = 1
    literal_aggregation: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    clients: int       # N
    per_round: int     # K
    rounds: int        # T
    mode: str
    model: ModelSpec
    train: TrainConfig
    data: DataConfig
    attack: AttackConfig | None = None
    defense: DefenseConfig | None = None
    dp: DpConfig | None = None


class _Section:
    """Typed, consumed-key view over one config section."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = dict(items)
        self.seen: set[str] = set()

    def _raw(self, key: str, required: bool):
        if key not in self.items:
            if required:
                raise ConfigurationError(f"[{self.name}] is missing required key '{key}'")
            return None
        self.seen.add(key)
        return self.items[key]

    def _convert(self, key: str, raw: str, kind: str):
        try:
            if kind == "int":
                return int(raw)
            if kind == "float":
                return float(raw)
            if kind == "bool":
                low = raw.strip().lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
                raise ValueError(f"not a boolean: {raw!r}")
            return raw.strip()
        except ValueError as exc:
            raise ConfigurationError(f"[{self.name}] {key}: {exc}") from exc

    def get(self, key: str, kind: str = "str", required: bool = False, default=None):
        raw = self._raw(key, required)
        if raw is None:
            return default
        return self._convert(key, raw, kind)

    def choice(self, key: str, options, required: bool = False, default=None):
        value = self.get(key, "str", required, default)
        if value is not None and value not in options:
            raise ConfigurationError(
                f"[{self.name}] {key} must be one of {list(options)}, got {value!r}")
        return value

    def int_list(self, key: str):
        raw = self._raw(key, required=False)
        if raw is None:
            return None
        try:
            return tuple(int(part) for part in raw.replace(",", " ").split())
        except ValueError as exc:
            raise ConfigurationError(f"[{self.name}] {key}: {exc}") from exc

    def reject_unknown(self):
        unknown = set(self.items) - self.seen
        if unknown:
            raise ConfigurationError(
                f"[{self.name}] has unknown keys: {sorted(unknown)}")


def _parse_ini(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from exc
    return {name: dict(parser.items(name)) for name in parser.sections()}


def _parse_model(sec: _Section) -> ModelSpec:
    kind = sec.choice("kind", (SOFTMAX_LINEAR, MLP_1HIDDEN), required=True)
    input_dim = sec.get("input_dim", "int", required=True)
    num_classes = sec.get("num_classes", "int", required=True)
    hidden = sec.get("hidden_dim", "int")
    if kind == SOFTMAX_LINEAR and hidden is not None:
        raise ConfigurationError("[model] hidden_dim is only valid for mlp-1hidden")
    try:
        return ModelSpec(kind, input_dim, num_classes, hidden)
    except ValueError as exc:
        raise ConfigurationError(f"[model] {exc}") from exc


def _parse_data(sec: _Section) -> DataConfig:
    source = sec.choice("source", DATA_SOURCES, required=True)
    partition = sec.choice("partition", PARTITIONS, required=True)
    cfg = DataConfig(
        source=source,
        partition=partition,
        per_class=sec.get("per_class", "int", default=600),
        test_per_class=sec.get("test_per_class", "int", default=100),
        separation=sec.get("separation", "float", default=6.0),
        cluster_spread=sec.get("cluster_spread", "float", default=1.0),
        subclusters=sec.get("subclusters", "int", default=1),
        train_images=sec.get("train_images"),
        train_labels=sec.get("train_labels"),
        test_images=sec.get("test_images"),
        test_labels=sec.get("test_labels"),
        path=sec.get("path"),
    )
    if source == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if getattr(cfg, key) is None:
                raise ConfigurationError(f"[data] source=idx requires key '{key}'")
    if source == "npz" and cfg.path is None:
        raise ConfigurationError("[data] source=npz requires key 'path'")
    return cfg


def _parse_attack(sec: _Section) -> AttackConfig:
    kind = sec.choice("kind", ATTACK_KINDS, required=True)
    scaling_mode = sec.choice("scaling", ("none", "scale-by-factor", "full-replacement"),
                              default="none")
    factor = sec.get("factor", "float")
    try:
        scaling = ScalingSpec(scaling_mode, factor)
    except ValueError as exc:
        raise ConfigurationError(f"[attack] {exc}") from exc
    report_kind = sec.choice("report", ("always-clear", "frame-honest"),
                             default="always-clear")
    frame_rate = sec.get("frame_rate", "float")
    try:
        report = ReportStrategy(report_kind, frame_rate)
    except ValueError as exc:
        raise ConfigurationError(f"[attack] {exc}") from exc

    ids = sec.int_list("malicious_ids")
    proportion = sec.get("proportion", "float")
    if (ids is None) == (proportion is None):
        raise ConfigurationError(
            "[attack] exactly one of 'malicious_ids' and 'proportion' is required")
    cfg = AttackConfig(
        kind=kind,
        src_class=sec.get("src_class", "int"),
        dst_class=sec.get("dst_class", "int"),
        trigger_class=sec.get("trigger_class", "int"),
        trigger_subcluster=sec.get("trigger_subcluster", "int", default=0),
        target_class=sec.get("target_class", "int"),
        augment_copies=sec.get("augment_copies", "int", default=0),
        jitter_scale=sec.get("jitter_scale", "float", default=0.0),
        scaling=scaling,
        malicious_ids=ids,
        proportion=proportion,
        start_round=sec.get("start_round", "int"),
        start_accuracy=sec.get("start_accuracy", "float", default=0.9),
        report=report,
    )
    if kind == "label-flip":
        if cfg.src_class is None or cfg.dst_class is None:
            raise ConfigurationError("[attack] label-flip requires src_class and dst_class")
        if cfg.src_class == cfg.dst_class:
            raise ConfigurationError("[attack] src_class and dst_class must differ")
    else:
        if cfg.trigger_class is None or cfg.target_class is None:
            raise ConfigurationError(
                "[attack] backdoor requires trigger_class and target_class")
    return cfg


def _parse_defense(sec: _Section) -> DefenseConfig:
    u = sec.get("u", "int")
    d = sec.get("d", "int")
    if u is not None and d is not None:
        raise ConfigurationError("[defense] give either u or d, not both")
    cfg = DefenseConfig(
        evaluators=sec.get("evaluators", "int", required=True),
        max_tasks=sec.get("max_tasks", "int", required=True),
        group_size=u,
        num_submodels=d,
        initial_penalty=sec.get("initial_penalty", "float", default=0.5),
        margin=sec.get("margin", "float", default=0.1),
        presence_threshold=sec.get("presence_threshold", "int", default=1),
        literal_aggregation=sec.get("literal_aggregation", "bool", default=False),
    )
    if cfg.evaluators < 3:
        raise ConfigurationError(
            "[defense] evaluators must be >= 3 (the penalty curve needs e >= 3)")
    if cfg.max_tasks < 1:
        raise ConfigurationError("[defense] max_tasks must be >= 1")
    if not 0 < cfg.initial_penalty <= 1:
        raise ConfigurationError("[defense] initial_penalty must lie in (0, 1]")
    if cfg.margin < 0:
        raise ConfigurationError("[defense] margin must be >= 0")
    if cfg.presence_threshold < 1:
        raise ConfigurationError("[defense] presence_threshold must be >= 1")
    return cfg


def _parse_dp(sec: _Section) -> DpConfig:
    clip = sec.get("clip", "float", required=True)
    sigma = sec.get("sigma", "float", required=True)
    targets = sec.get("apply_to", "str", default="submodels")
    parts = frozenset(p.strip() for p in targets.replace(",", " ").split())
    try:
        return DpConfig(clip, sigma, parts)
    except ValueError as exc:
        raise ConfigurationError(f"[dp] {exc}") from exc


def parse_experiment_config(text: str) -> ExperimentConfig:
    sections = _parse_ini(text)
    known = {"experiment", "model", "train", "data", "attack", "defense", "dp"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    for required in ("experiment", "model", "train", "data"):
        if required not in sections:
            raise ConfigurationError(f"missing required section [{required}]")

    exp = _Section("experiment", sections["experiment"])
    seed = exp.get("seed", "int", required=True)
    clients = exp.get("clients", "int", required=True)
    per_round = exp.get("per_round", "int", required=True)
    rounds = exp.get("rounds", "int", required=True)
    mode = exp.choice("mode", MODES, required=True)
    exp.reject_unknown()

    model_sec = _Section("model", sections["model"])
    model = _parse_model(model_sec)
    model_sec.reject_unknown()

    train_sec = _Section("train", sections["train"])
    try:
        train = TrainConfig(
            iterations=train_sec.get("iterations", "int", required=True),
            batch_size=train_sec.get("batch_size", "int", required=True),
            learning_rate=train_sec.get("learning_rate", "float", required=True),
        )
    except ValueError as exc:
        raise ConfigurationError(f"[train] {exc}") from exc
    train_sec.reject_unknown()

    data_sec = _Section("data", sections["data"])
    data = _parse_data(data_sec)
    data_sec.reject_unknown()

    attack = defense = dp = None
    if "attack" in sections:
        attack_sec = _Section("attack", sections["attack"])
        attack = _parse_attack(attack_sec)
        attack_sec.reject_unknown()
    if "defense" in sections:
        defense_sec = _Section("defense", sections["defense"])
        defense = _parse_defense(defense_sec)
        defense_sec.reject_unknown()
    if "dp" in sections:
        dp_sec = _Section("dp", sections["dp"])
        dp = _parse_dp(dp_sec)
        dp_sec.reject_unknown()

    cfg = ExperimentConfig(seed=seed, clients=clients, per_round=per_round,
                           rounds=rounds, mode=mode, model=model, train=train,
                           data=data, attack=attack, defense=defense, dp=dp)
    validate_config(cfg)
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    return parse_experiment_config(Path(path).read_text())


def validate_config(cfg: ExperimentConfig) -> None:
    """Cross-field checks that need no data; data-dependent ones run at world build."""
    if cfg.clients < 1:
        raise ConfigurationError("clients must be >= 1")
    if not 1 <= cfg.per_round <= cfg.clients:
        raise ConfigurationError(
            f"per_round K={cfg.per_round} must lie in [1, clients N={cfg.clients}]")
    if cfg.rounds < 0:
        raise ConfigurationError("rounds must be >= 0")
    if cfg.mode == "defended" and cfg.defense is None:
        raise ConfigurationError("mode=defended requires a [defense] section")
    if cfg.defense is not None and cfg.data.partition == "iid":
        dfn = cfg.defense
        if (dfn.group_size is None) == (dfn.num_submodels is None):
            raise ConfigurationError(
                "[defense] IID runs need exactly one of u (group_size) or d")
        u = dfn.group_size if dfn.group_size is not None else None
        d = dfn.num_submodels
        if u is not None:
            if u < 1 or cfg.per_round % u != 0:
                raise ConfigurationError(
                    f"[defense] u={u} must divide per_round K={cfg.per_round}")
            d = cfg.per_round // u
        else:
            if d < 1 or cfg.per_round % d != 0:
                raise ConfigurationError(
                    f"[defense] d={d} must divide per_round K={cfg.per_round}")
            u = cfg.per_round // d
        if dfn.evaluators * d > dfn.max_tasks * cfg.per_round:
            raise ConfigurationError(
                f"[defense] needs e*d = {dfn.evaluators * d} evaluation slots but "
                f"only m*K = {dfn.max_tasks * cfg.per_round} exist")
        if dfn.evaluators > cfg.per_round - u:
            raise ConfigurationError(
                f"[defense] e={dfn.evaluators} exceeds the {cfg.per_round - u} "
                "non-member clients per sub-model")
    if cfg.attack is not None:
        atk = cfg.attack
        if atk.proportion is not None:
            count = atk.proportion * cfg.clients
            if abs(count - round(count)) > 1e-9:
                raise ConfigurationError(
                    f"[attack] proportion*N = {count} is not a whole number of clients")
            if not 0 < atk.proportion < 1:
                raise ConfigurationError("[attack] proportion must lie in (0, 1)")
        else:
            bad = [i for i in atk.malicious_ids if not 0 <= i < cfg.clients]
            if bad:
                raise ConfigurationError(f"[attack] malicious ids {bad} outside [0, N)")
            if len(set(atk.malicious_ids)) != len(atk.malicious_ids):
                raise ConfigurationError("[attack] duplicate malicious ids")
        for cls_key in ("src_class", "dst_class", "trigger_class", "target_class"):
            value = getattr(atk, cls_key)
            if value is not None and not 0 <= value < cfg.model.num_classes:
                raise ConfigurationError(
                    f"[attack] {cls_key}={value} outside [0, num_classes)")
        if atk.start_round is not None and atk.start_round < 1:
            raise ConfigurationError("[attack] start_round must be >= 1")
        if atk.kind == "backdoor" and cfg.data.source == "idx":
            raise ConfigurationError(
                "[attack] backdoor triggers need cluster centers; "
                "use a synthetic or npz data source")
    if cfg.dp is not None and cfg.mode == "fedavg-baseline":
        if "submodels" in cfg.dp.apply_to:
            raise ConfigurationError(
                "[dp] apply_to=submodels is meaningless in fedavg-baseline mode")
