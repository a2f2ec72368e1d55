"""Experiment configuration.

An experiment is described entirely by one versioned JSON document;
command-line flags only pick the subcommand and the config path.  Every
default is materialized on load, so the resolved echo written next to
the results re-runs to identical output.  Unknown keys are rejected at
every level rather than ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import PartitionSpec, SCHEMES
from .errors import ConfigError, DataError

CONFIG_VERSION = 1

MODES = ("fedmoe", "fedavg", "local_only")
EMBEDDING_KINDS = ("fresh", "pretrained", "frozen_pretrained")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    repr_dim: int
    num_classes: int
    embedding_hidden: tuple[int, ...] = ()
    expert_hidden: tuple[int, ...] = ()

    @property
    def embedding_dims(self) -> list[int]:
        return [self.input_dim, *self.embedding_hidden, self.repr_dim]

    @property
    def expert_dims(self) -> list[int]:
        return [self.repr_dim, *self.expert_hidden, self.num_classes]


@dataclass(frozen=True)
class EmbeddingInit:
    kind: str = "fresh"
    path: str | None = None


@dataclass(frozen=True)
class SyntheticData:
    classes: int
    dim: int
    total: int
    spread: float
    seed: int


@dataclass(frozen=True)
class IdxData:
    images: str
    labels: str


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    num_clients: int
    rounds: int
    local_epochs: int
    learning_rate: float
    batch_size: int
    experts_per_client: tuple[int, ...]
    peers_per_expert: int
    matrix_interval: int
    model: ModelSpec
    partition: PartitionSpec
    data: SyntheticData | IdxData
    output_dir: str
    temperature: float = 1.0
    top_k: int = 1
    mode: str = "fedmoe"
    embedding: EmbeddingInit = field(default_factory=EmbeddingInit)

    @property
    def total_experts(self) -> int:
        return sum(self.experts_per_client)

    @property
    def uniform_experts(self) -> int:
        """Shared expert count; raises when clients differ."""
        if len(set(self.experts_per_client)) != 1:
            raise ConfigError("experts_per_client varies across clients")
        return self.experts_per_client[0]

    @property
    def frozen_embedding(self) -> bool:
        return self.embedding.kind == "frozen_pretrained"

    @property
    def comm_mode(self) -> str:
        if self.mode == "fedavg":
            return "fedavg"
        return "fedmoe_frozen" if self.frozen_embedding else "fedmoe"


def _reject_unknown(doc: dict, path: str, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _require(doc: dict, path: str, key: str):
    if key not in doc:
        raise ConfigError(f"{path}.{key}: required field is missing")
    return doc[key]


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_number(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: must be a number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be > 0, got {value}")
    return float(value)


def _as_str(value, path: str, choices: tuple[str, ...] | None = None) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: must be a string, got {value!r}")
    if choices and value not in choices:
        raise ConfigError(f"{path}: must be one of {list(choices)}, got {value!r}")
    return value


def _as_dims(value, path: str) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: must be a list of layer widths")
    return tuple(_as_int(v, f"{path}[{i}]", minimum=1) for i, v in enumerate(value))


def _parse_model(doc, path: str) -> ModelSpec:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(
        doc, path,
        {"input_dim", "repr_dim", "num_classes", "embedding_hidden", "expert_hidden"},
    )
    return ModelSpec(
        input_dim=_as_int(_require(doc, path, "input_dim"), f"{path}.input_dim", 1),
        repr_dim=_as_int(_require(doc, path, "repr_dim"), f"{path}.repr_dim", 1),
        num_classes=_as_int(_require(doc, path, "num_classes"), f"{path}.num_classes", 2),
        embedding_hidden=_as_dims(doc.get("embedding_hidden", []), f"{path}.embedding_hidden"),
        expert_hidden=_as_dims(doc.get("expert_hidden", []), f"{path}.expert_hidden"),
    )


def _parse_embedding(doc, path: str) -> EmbeddingInit:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(doc, path, {"kind", "path"})
    kind = _as_str(_require(doc, path, "kind"), f"{path}.kind", EMBEDDING_KINDS)
    raw_path = doc.get("path")
    if kind == "fresh":
        if raw_path is not None:
            raise ConfigError(f"{path}.path: not allowed for kind 'fresh'")
        return EmbeddingInit("fresh", None)
    if raw_path is None:
        raise ConfigError(f"{path}.path: required for kind {kind!r}")
    return EmbeddingInit(kind, _as_str(raw_path, f"{path}.path"))


def _parse_partition(doc, path: str, default_seed: int) -> PartitionSpec:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: must be an object")
    _reject_unknown(doc, path, {"scheme", "per_client", "seed", "alpha"})
    scheme = _as_str(_require(doc, path, "scheme"), f"{path}.scheme", SCHEMES)
    per_client = _as_int(_require(doc, path, "per_client"), f"{path}.per_client", 5)
    seed = _as_int(doc.get("seed", default_seed), f"{path}.seed")
    alpha = None
    if "alpha" in doc and doc["alpha"] is not None:
        alpha = _as_number(doc["alpha"], f"{path}.alpha", positive=True)
    try:
        return PartitionSpec(scheme=scheme, per_client=per_client, seed=seed, alpha=alpha)
    except DataError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_data(doc, path: str, default_seed: int) -> SyntheticData | IdxData:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: must be an object")
    source = _as_str(_require(doc, path, "source"), f"{path}.source", ("synthetic", "idx"))
    if source == "synthetic":
        _reject_unknown(doc, path, {"source", "classes", "dim", "total", "spread", "seed"})
        return SyntheticData(
            classes=_as_int(_require(doc, path, "classes"), f"{path}.classes", 2),
            dim=_as_int(_require(doc, path, "dim"), f"{path}.dim", 2),
            total=_as_int(_require(doc, path, "total"), f"{path}.total", 2),
            spread=_as_number(_require(doc, path, "spread"), f"{path}.spread"),
            seed=_as_int(doc.get("seed", default_seed), f"{path}.seed"),
        )
    _reject_unknown(doc, path, {"source", "images", "labels"})
    return IdxData(
        images=_as_str(_require(doc, path, "images"), f"{path}.images"),
        labels=_as_str(_require(doc, path, "labels"), f"{path}.labels"),
    )


_TOP_KEYS = {
    "version", "seed", "num_clients", "rounds", "local_epochs", "learning_rate",
    "batch_size", "experts_per_client", "peers_per_expert", "matrix_interval",
    "temperature", "top_k", "mode", "embedding", "model", "partition", "data",
    "output_dir",
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    _reject_unknown(doc, "config", _TOP_KEYS)
    version = _as_int(_require(doc, "config", "version"), "config.version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config.version: expected {CONFIG_VERSION}, got {version}")

    seed = _as_int(_require(doc, "config", "seed"), "config.seed")
    num_clients = _as_int(_require(doc, "config", "num_clients"), "config.num_clients", 1)

    raw_k = _require(doc, "config", "experts_per_client")
    if isinstance(raw_k, list):
        if len(raw_k) != num_clients:
            raise ConfigError(
                f"config.experts_per_client: list must have one entry per client "
                f"({num_clients}), got {len(raw_k)}"
            )
        experts = tuple(
            _as_int(v, f"config.experts_per_client[{i}]", 1) for i, v in enumerate(raw_k)
        )
    else:
        experts = (_as_int(raw_k, "config.experts_per_client", 1),) * num_clients

    peers = _as_int(
        _require(doc, "config", "peers_per_expert"), "config.peers_per_expert", 0
    )
    if peers > sum(experts) - 1:
        raise ConfigError(
            f"config.peers_per_expert: at most {sum(experts) - 1} peers exist, got {peers}"
        )

    mode = _as_str(doc.get("mode", "fedmoe"), "config.mode", MODES)
    top_k = _as_int(doc.get("top_k", 1), "config.top_k", 1)
    if top_k > min(experts):
        raise ConfigError(
            f"config.top_k: cannot exceed the smallest expert count {min(experts)}"
        )
    if mode == "fedavg" and len(set(experts)) != 1:
        raise ConfigError("config.mode: fedavg requires a uniform expert count")

    model = _parse_model(_require(doc, "config", "model"), "config.model")
    data = _parse_data(_require(doc, "config", "data"), "config.data", seed)
    if isinstance(data, SyntheticData):
        if data.classes != model.num_classes:
            raise ConfigError(
                f"config.data.classes: {data.classes} does not match "
                f"config.model.num_classes {model.num_classes}"
            )
        if data.dim != model.input_dim:
            raise ConfigError(
                f"config.data.dim: {data.dim} does not match "
                f"config.model.input_dim {model.input_dim}"
            )

    cfg = ExperimentConfig(
        seed=seed,
        num_clients=num_clients,
        rounds=_as_int(_require(doc, "config", "rounds"), "config.rounds", 1),
        local_epochs=_as_int(_require(doc, "config", "local_epochs"), "config.local_epochs", 1),
        learning_rate=_as_number(
            _require(doc, "config", "learning_rate"), "config.learning_rate", positive=True
        ),
        batch_size=_as_int(_require(doc, "config", "batch_size"), "config.batch_size", 1),
        experts_per_client=experts,
        peers_per_expert=peers,
        matrix_interval=_as_int(
            _require(doc, "config", "matrix_interval"), "config.matrix_interval", 1
        ),
        temperature=_as_number(doc.get("temperature", 1.0), "config.temperature", positive=True),
        top_k=top_k,
        mode=mode,
        embedding=_parse_embedding(doc.get("embedding", {"kind": "fresh"}), "config.embedding"),
        model=model,
        partition=_parse_partition(
            _require(doc, "config", "partition"), "config.partition", seed
        ),
        data=data,
        output_dir=_as_str(_require(doc, "config", "output_dir"), "config.output_dir"),
    )
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved document; loading it back reproduces `cfg` exactly."""
    doc = {
        "version": CONFIG_VERSION,
        "seed": cfg.seed,
        "num_clients": cfg.num_clients,
        "rounds": cfg.rounds,
        "local_epochs": cfg.local_epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "experts_per_client": list(cfg.experts_per_client),
        "peers_per_expert": cfg.peers_per_expert,
        "matrix_interval": cfg.matrix_interval,
        "temperature": cfg.temperature,
        "top_k": cfg.top_k,
        "mode": cfg.mode,
        "embedding": {"kind": cfg.embedding.kind, "path": cfg.embedding.path}
        if cfg.embedding.kind != "fresh"
        else {"kind": "fresh"},
        "model": {
            "input_dim": cfg.model.input_dim,
            "repr_dim": cfg.model.repr_dim,
            "num_classes": cfg.model.num_classes,
            "embedding_hidden": list(cfg.model.embedding_hidden),
            "expert_hidden": list(cfg.model.expert_hidden),
        },
        "partition": {
            "scheme": cfg.partition.scheme,
            "per_client": cfg.partition.per_client,
            "seed": cfg.partition.seed,
        },
        "data": None,
        "output_dir": cfg.output_dir,
    }
    if cfg.partition.alpha is not None:
        doc["partition"]["alpha"] = cfg.partition.alpha
    if isinstance(cfg.data, SyntheticData):
        doc["data"] = {
            "source": "synthetic",
            "classes": cfg.data.classes,
            "dim": cfg.data.dim,
            "total": cfg.data.total,
            "spread": cfg.data.spread,
            "seed": cfg.data.seed,
        }
    else:
        doc["data"] = {"source": "idx", "images": cfg.data.images, "labels": cfg.data.labels}
    return doc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
