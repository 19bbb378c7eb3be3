"""Experiment driver: run a config, stream metrics to CSV, save the model.

Outputs per run directory:
  metrics.csv    one row per round: t, main_acc, subtask_rate, train_loss,
                 per-class test accuracies, then one (r_i, c_i) pair per
                 sub-model slot in id order (defended runs only).
  detection.csv  one row per (round, sub-model): members, report count,
                 coefficient, flagged classes.
  model.bin      final global model (little-endian float64 + text header).

Rows are flushed as they are produced so an interrupted run leaves a
readable partial CSV.  All numbers are formatted with %.12g, which makes
repeat runs of the same (config, seed) byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig, load_experiment_config
from .defense import choose_d_noniid, collect_presence
from .errors import InputError
from .federation import MetricsRecord, RunResult, run_rounds
from .fileio import save_model
from .models import init_model
from .world import build_world

METRICS_FILE = "metrics.csv"
DETECTION_FILE = "detection.csv"
MODEL_FILE = "model.bin"


@dataclass
class ExperimentOutput:
    result: RunResult
    out_dir: Path
    metrics_path: Path
    detection_path: Path
    model_path: Path


def _fmt(x) -> str:
    if isinstance(x, (int,)):
        return str(x)
    if x != x:  # nan
        return "nan"
    return f"{float(x):.12g}"


def _id_list(ids) -> str:
    return "[" + " ".join(str(i) for i in ids) + "]"


def _nominal_submodel_count(config: ExperimentConfig, mode: str, world) -> int:
    """Upper bound on d, fixing the metrics schema for the whole run."""
    if mode != "defended":
        return 0
    if config.data.partition == "iid":
        dfn = config.defense
        if dfn.group_size is not None:
            return config.per_round // dfn.group_size
        return dfn.num_submodels
    presence = collect_presence(
        {cid: st.data for cid, st in world.clients.items()},
        config.defense.presence_threshold)
    return choose_d_noniid(presence, config.per_round)


def _metrics_header(num_classes: int, d_max: int) -> str:
    cols = ["t", "main_acc", "subtask_rate", "train_loss"]
    cols += [f"acc_class_{c}" for c in range(num_classes)]
    for i in range(d_max):
        cols += [f"r_{i}", f"c_{i}"]
    return ",".join(cols)


def _metrics_row(rec: MetricsRecord, num_classes: int, d_max: int) -> str:
    cells = [str(rec.t), _fmt(rec.main_accuracy), _fmt(rec.subtask_rate),
             _fmt(rec.train_loss)]
    cells += [_fmt(rec.per_class[c]) for c in range(num_classes)]
    by_id = {log.id: log for log in rec.submodels}
    for i in range(d_max):
        if i in by_id:
            cells += [str(by_id[i].reports), _fmt(by_id[i].coefficient)]
        else:
            cells += ["", ""]  # round produced fewer sub-models than the bound
    return ",".join(cells)


def run_experiment(config: ExperimentConfig | str | Path, out_dir,
                   mode: str | None = None, seed: int | None = None,
                   fmt: str = "csv") -> ExperimentOutput:
    """Execute a run end to end, writing metrics as rounds complete."""
    if not isinstance(config, ExperimentConfig):
        config = load_experiment_config(config)
    if seed is not None:
        config = replace(config, seed=seed)
    if fmt != "csv":
        raise InputError(f"unsupported output format {fmt!r}")
    mode = mode if mode is not None else config.mode

    world = build_world(config)  # raises ConfigurationError on bad setups
    d_max = _nominal_submodel_count(config, mode, world)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / METRICS_FILE
    detection_path = out / DETECTION_FILE
    model_path = out / MODEL_FILE

    records = []
    final = init_model(config.model, config.seed)
    with open(metrics_path, "w") as mf, open(detection_path, "w") as df:
        mf.write(_metrics_header(config.model.num_classes, d_max) + "\n")
        df.write("t,submodel,members,reports,coefficient,flagged_classes\n")
        mf.flush(); df.flush()
        for rec, w in run_rounds(world, mode):
            mf.write(_metrics_row(rec, config.model.num_classes, d_max) + "\n")
            for log in rec.submodels:
                df.write(",".join([
                    str(rec.t), str(log.id), _id_list(log.members),
                    str(log.reports), _fmt(log.coefficient),
                    _id_list(log.flagged_classes)]) + "\n")
            mf.flush(); df.flush()
            records.append(rec)
            final = w

    save_model(model_path, config.model, final)
    result = RunResult(config, mode, records, final)
    return ExperimentOutput(result, out, metrics_path, detection_path, model_path)
