"""Simulation and analysis of straggler-tolerant synchronous local SGD."""
from .analysis import (
    ConvergenceInputs, bound_report, check_lemma1_conditions, corollary1_descent_check,
    corollary1_rhs, empirical_avg_grad_norm, theorem1_bound,
)
from .config import config_hash, dump_config, load_config, parse_config
from .data import DatasetSpec, build_objective, partition_iid, read_csv, read_idx
from .errors import ConditionsViolated, ConfigError, InsufficientReplicates, NonFiniteError, QuadratureError
from .persist import emit_plot_data, load_trace, persist_trace
from .sgd import LogisticObjective, QuadraticObjective, aggregate, local_update, minibatch_gradient
from .simulator import (
    ExperimentConfig, RoundRecord, Trace, comm_to_target, run_experiment, run_sweep, time_to_target,
)
from .strategies import SchemeSpec, WorkerClock, ksync_round, pasgd_round, stsyn_round
from .timing import (
    OrderStatParams, TimingModel, avg_local_updates, avg_upload_count, erlang_round_time_mean,
    monte_carlo_round_stats,
)

__version__ = "0.1.0"
