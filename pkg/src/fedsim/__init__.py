"""Deterministic desk-scale simulator of federated averaging.

Submodules, bottom up: tensor (float32 arrays and ops), rng (splittable
seeded streams), models (softmax regression and a one-hidden-layer MLP),
data (IDX loading, synthetic blobs, client partitioners), codecs (identity
and uniform-quantization transport with bit accounting), federation (the
round loop), metrics (run logs and file output), plots (report figures),
experiments (configs and recipes), cli (command-line front end).
"""
from .codecs import IDENTITY, CodecError, CodecPolicy, compression_ratio
from .data import ClientPartition, Dataset, IdxError, PartitionError
from .experiments import (
    ComparisonResult,
    ConfigError,
    ExperimentConfig,
    RunResult,
    exp1_base_config,
    exp1_compression,
    exp2_base_config,
    exp2_noniid,
    gradcheck_report,
    partition_report,
    run,
)
from .federation import (
    ClientUpdate,
    FedConfig,
    FederationError,
    ServerState,
    aggregate,
    client_update,
    federated_evaluation,
    initialize,
    next_round,
    sample_clients,
)
from .metrics import MetricsError, RoundMetrics, RunLog, RunSummary
from .models import Batch, Evaluation, Mlp, ModelParams, SoftmaxRegression
from .rng import RngStream
from .tensor import DTYPE, DomainError, ShapeError, Tensor

__all__ = [
    "IDENTITY",
    "CodecError",
    "CodecPolicy",
    "compression_ratio",
    "ClientPartition",
    "Dataset",
    "IdxError",
    "PartitionError",
    "ComparisonResult",
    "ConfigError",
    "ExperimentConfig",
    "RunResult",
    "exp1_base_config",
    "exp1_compression",
    "exp2_base_config",
    "exp2_noniid",
    "gradcheck_report",
    "partition_report",
    "run",
    "ClientUpdate",
    "FedConfig",
    "FederationError",
    "ServerState",
    "aggregate",
    "client_update",
    "federated_evaluation",
    "initialize",
    "next_round",
    "sample_clients",
    "MetricsError",
    "RoundMetrics",
    "RunLog",
    "RunSummary",
    "Batch",
    "Evaluation",
    "Mlp",
    "ModelParams",
    "SoftmaxRegression",
    "RngStream",
    "DTYPE",
    "DomainError",
    "ShapeError",
    "Tensor",
]

__version__ = "0.1.0"
