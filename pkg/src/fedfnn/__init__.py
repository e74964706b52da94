"""Federated fuzzy neural networks with evolutionary rule learning."""

from .datakit import (
    PartitionSpec,
    RawTable,
    dirichlet_partition,
    inject_noise,
    kfold_split,
    load_csv,
    normalize_mapminmax,
)
from .errors import DataError, DivergenceError, EmptyRuleBankError, NoActiveRulesError
from .federation import (
    ClientState,
    ExperimentConfig,
    ServerState,
    aggregate_rule,
    cooperation_round,
    erl_run,
    evolution_stage,
)
from .fnn import LabeledDataset, Rule, RuleBank, dataset_loss, firing_strengths, predict
from .grad import GradientSet, backward, finite_difference_gradient
from .harness import RunConfig, RunMetrics, fedavg_baseline, param_count, run_experiment
from .trainer import TrainConfig, local_train

__version__ = "0.1.0"
