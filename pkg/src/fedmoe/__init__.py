"""Desk-scale federated mixture-of-experts simulator.

Clients train small MoE models (shared embedding, private gate,
private experts); experts are selectively blended across clients via
proxy-similarity over simulated P2P links, while the embedding is
averaged at the server.  All traffic is metered in exact scalar counts
and checked against closed-form predictions.
"""

from .aggregation import (
    AggregationMatrix,
    ProxyBank,
    aggregate_experts,
    identity_matrix,
    proxy_expert_correlation,
    request_sets,
    similarity,
    stack_proxies,
    weights,
)
from .config import (
    EmbeddingInit,
    ExperimentConfig,
    IdxData,
    ModelSpec,
    SyntheticData,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)
from .data import (
    ClientShard,
    Dataset,
    PartitionSpec,
    load_idx,
    make_synthetic,
    mean_pairwise_tv,
    partition,
    shard_label_counts,
)
from .errors import ConfigError, DataError, NonFiniteError, TrainingAborted
from .moe import (
    GateDecision,
    MoEModel,
    gate_scores,
    load_model,
    model_to_tensors,
    moe_forward,
    train_step,
)
from .nn import (
    DenseNet,
    Layer,
    backward,
    forward,
    init_dense,
    load_tensors,
    save_tensors,
    sgd_step,
    softmax,
)
from .pretrain import pretrain_embedding
from .protocol import (
    ClientState,
    CommLedger,
    CommSizes,
    ExperimentResult,
    RoundReport,
    ServerState,
    aggregate_embeddings,
    build_world,
    comm_sizes,
    evaluate,
    expected_comm,
    expected_round_entry,
    is_update_round,
    local_update,
    run_experiment,
    run_round,
)

__version__ = "0.1.0"
