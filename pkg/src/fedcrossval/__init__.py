"""Collaborative-learning simulator with client-side cross-validation.

Honest clients train locally and submit update deltas; the server groups
the round's updates into sub-models, delegates each to other clients for
evaluation on their private data, and down-weights sub-models that draw
anomaly reports.  The package also models the attacks this defends
against (label flipping, semantic backdoors, scaled/model-replacement
updates, colluding evaluators), the differential-privacy disguise of
sub-models, and the closed-form probability that a poisoned sub-model
evades detection.
"""

from .analysis import EvasionParams, p_evade_exact, p_evade_montecarlo, penalty_curve
from .attacks import (AttackSpec, ReportStrategy, ScalingSpec, craft_update,
                      malicious_report, poison_backdoor, poison_fraction,
                      poison_labelflip)
from .config import (AttackConfig, DataConfig, DefenseConfig, ExperimentConfig,
                     load_experiment_config, parse_experiment_config)
from .data import (NearestCenterTrigger, SyntheticProblem, make_synthetic_problem,
                   measure_subtask, partition_iid, partition_noniid_shards,
                   synth_dataset)
from .defense import (Assignment, ClassPresenceVector, DelegationPlan,
                      EvaluationReport, PenaltyRecord, SubModel, build_submodels,
                      check_plan_invariants, choose_d_noniid, collect_presence,
                      delegate_iid, delegate_noniid, evaluate_submodel, penalty,
                      penalty_vector, tally_reports, weighted_aggregate)
from .errors import ConfigurationError, FormatError, InputError, ProtocolError
from .experiment import ExperimentOutput, run_experiment
from .federation import (MetricsRecord, RoundContext, RunResult, SubModelLog,
                         UpdateRecord, collect_updates, fedavg_aggregate,
                         iter_training, run_rounds, run_training, select_clients)
from .fileio import (load_dataset_npz, load_idx, load_model, save_dataset_npz,
                     save_idx, save_model)
from .models import (Dataset, ModelSpec, PerClassAccuracy, TrainConfig,
                     cross_entropy_loss, evaluate_per_class, forward, init_model,
                     local_train, predict_labels, predict_proba, sgd_step)
from .privacy import (DpConfig, assert_disjoint_groups, clip_delta, dp_mean,
                      gaussian_noise, perturb_submodel)
from .rng import StreamFactory, derive_rng
from .world import ClientState, World, build_world

__version__ = "0.1.0"
