"""Config parsing/validation, artifact emission, CLI subcommands."""

import json

import numpy as np
import pytest

from fedmoe.cli import main
from fedmoe.config import config_from_dict, config_to_dict, load_config, save_config
from fedmoe.errors import ConfigError
from fedmoe.runner import comm_audit, partition_report, run_config


def minimal_doc(tmp_path, **overrides):
    doc = {
        "version": 1,
        "seed": 5,
        "num_clients": 2,
        "rounds": 1,
        "local_epochs": 1,
        "learning_rate": 0.05,
        "batch_size": 10,
        "experts_per_client": 2,
        "peers_per_expert": 1,
        "matrix_interval": 2,
        "model": {"input_dim": 4, "repr_dim": 4, "num_classes": 2},
        "partition": {"scheme": "homogeneous", "per_client": 20},
        "data": {"source": "synthetic", "classes": 2, "dim": 4, "total": 200, "spread": 3.0},
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(overrides)
    return doc


# --- validation ----------------------------------------------------------


def test_reference_scale_config_is_valid(tmp_path):
    # the full-scale experiment settings parse and validate as-is
    doc = minimal_doc(
        tmp_path,
        num_clients=50,
        rounds=1000,
        local_epochs=5,
        learning_rate=0.01,
        batch_size=100,
        experts_per_client=4,
        peers_per_expert=5,
        matrix_interval=5,
        temperature=1.0,
        top_k=1,
        partition={"scheme": "pathological_balanced", "per_client": 500},
        data={
            "source": "synthetic", "classes": 10, "dim": 32,
            "total": 40000, "spread": 3.0,
        },
        model={"input_dim": 32, "repr_dim": 16, "num_classes": 10},
    )
    cfg = config_from_dict(doc)
    assert cfg.num_clients == 50 and cfg.rounds == 1000
    assert cfg.experts_per_client == (4,) * 50
    assert cfg.temperature == 1.0 and cfg.top_k == 1


def test_unknown_top_level_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys.*bogus"):
        config_from_dict(minimal_doc(tmp_path, bogus=1))


def test_unknown_nested_key_rejected(tmp_path):
    doc = minimal_doc(tmp_path)
    doc["model"]["extra"] = 3
    with pytest.raises(ConfigError, match="config.model.*extra"):
        config_from_dict(doc)


def test_missing_field_names_path(tmp_path):
    doc = minimal_doc(tmp_path)
    del doc["rounds"]
    with pytest.raises(ConfigError, match="config.rounds"):
        config_from_dict(doc)


def test_version_mismatch_rejected(tmp_path):
    with pytest.raises(ConfigError, match="version"):
        config_from_dict(minimal_doc(tmp_path, version=2))


def test_per_client_expert_list(tmp_path):
    cfg = config_from_dict(minimal_doc(tmp_path, experts_per_client=[1, 3]))
    assert cfg.experts_per_client == (1, 3)
    assert cfg.total_experts == 4
    with pytest.raises(ConfigError, match="one entry per client"):
        config_from_dict(minimal_doc(tmp_path, experts_per_client=[1, 2, 3]))


def test_fedavg_requires_uniform_experts(tmp_path):
    with pytest.raises(ConfigError, match="uniform"):
        config_from_dict(minimal_doc(tmp_path, experts_per_client=[1, 2], mode="fedavg"))


def test_peer_budget_validated(tmp_path):
    with pytest.raises(ConfigError, match="peers"):
        config_from_dict(minimal_doc(tmp_path, peers_per_expert=4))


def test_top_k_bounded_by_expert_count(tmp_path):
    with pytest.raises(ConfigError, match="top_k"):
        config_from_dict(minimal_doc(tmp_path, top_k=3))


def test_embedding_kind_paths(tmp_path):
    with pytest.raises(ConfigError, match="embedding.path"):
        config_from_dict(minimal_doc(tmp_path, embedding={"kind": "pretrained"}))
    with pytest.raises(ConfigError, match="not allowed"):
        config_from_dict(minimal_doc(tmp_path, embedding={"kind": "fresh", "path": "x"}))


def test_data_model_cross_validation(tmp_path):
    doc = minimal_doc(tmp_path)
    doc["data"]["classes"] = 3
    with pytest.raises(ConfigError, match="num_classes"):
        config_from_dict(doc)


def test_alpha_only_for_dirichlet(tmp_path):
    doc = minimal_doc(tmp_path)
    doc["partition"]["alpha"] = 0.5
    with pytest.raises(ConfigError, match="alpha"):
        config_from_dict(doc)


def test_config_echo_closure(tmp_path):
    doc = minimal_doc(
        tmp_path,
        partition={"scheme": "dirichlet", "per_client": 20, "alpha": 0.7},
    )
    cfg = config_from_dict(doc)
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_load_config_reports_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")


# --- artifacts -------------------------------------------------------------


def test_minimal_run_artifacts(tmp_path):
    cfg = config_from_dict(minimal_doc(tmp_path))
    outdir = run_config(cfg)
    metrics = (outdir / "metrics.csv").read_text().splitlines()
    assert len(metrics) == 2  # header + one round
    assert metrics[0].startswith("round,mean_test_acc,min_test_acc,max_test_acc")
    assert (outdir / "client_000.json").is_file()
    assert (outdir / "client_001.json").is_file()
    assert (outdir / "config_resolved.json").is_file()
    report = (outdir / "client_report.csv").read_text().splitlines()
    assert report[0] == "client_id,test_acc,expert_0,expert_1"
    assert len(report) == 3


def test_run_twice_byte_identical_metrics(tmp_path):
    doc_a = minimal_doc(tmp_path, rounds=3, output_dir=str(tmp_path / "a"))
    doc_b = minimal_doc(tmp_path, rounds=3, output_dir=str(tmp_path / "b"))
    run_config(config_from_dict(doc_a))
    run_config(config_from_dict(doc_b))
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (
        tmp_path / "b" / "metrics.csv"
    ).read_bytes()


def test_resolved_echo_reruns_identically(tmp_path):
    cfg = config_from_dict(minimal_doc(tmp_path, rounds=2))
    outdir = run_config(cfg)
    first = (outdir / "metrics.csv").read_bytes()

    echoed = load_config(outdir / "config_resolved.json")
    echoed = config_from_dict({**config_to_dict(echoed), "output_dir": str(tmp_path / "re")})
    redir = run_config(echoed)
    assert (redir / "metrics.csv").read_bytes() == first


def test_aborted_run_flushes_partial_metrics_and_error(tmp_path):
    doc = minimal_doc(tmp_path, rounds=2)
    doc["data"] = {"source": "idx", "images": "/nonexistent.idx", "labels": "/nope.idx"}
    doc["model"] = {"input_dim": 4, "repr_dim": 4, "num_classes": 2}
    cfg = config_from_dict(doc)
    with pytest.raises(Exception):
        run_config(cfg)
    outdir = tmp_path / "out"
    assert (outdir / "metrics.csv").is_file()  # header flushed before the abort
    error = json.loads((outdir / "error.json").read_text())
    assert "no such file" in error["message"]


# --- audits ------------------------------------------------------------------


def test_comm_audit_all_match(tmp_path):
    cfg = config_from_dict(minimal_doc(tmp_path, rounds=4))
    rows, ok = comm_audit(cfg)
    assert ok
    modes = {r.mode for r in rows}
    assert modes == {"fedavg", "fedmoe", "fedmoe_frozen"}
    frozen_up = [
        r for r in rows if r.mode == "fedmoe_frozen" and r.channel == "server_up"
    ]
    # frozen embedding: only gating uploads remain, on refresh rounds
    assert all(r.metered in (0, 2 * 4 * 2) for r in frozen_up)
    # the audit also serializes the final blend matrix for inspection
    from fedmoe.aggregation import load_matrix_csv

    matrix = load_matrix_csv(tmp_path / "out" / "aggregation_matrix.csv")
    assert matrix.size == 2 * 2
    assert matrix.computed_at_round >= 1


def test_partition_report_outputs(tmp_path):
    cfg = config_from_dict(
        minimal_doc(
            tmp_path,
            num_clients=4,
            partition={"scheme": "pathological_balanced", "per_client": 20},
        )
    )
    path, tv = partition_report(cfg)
    lines = path.read_text().splitlines()
    assert lines[0] == "client_id,class_id,count"
    assert len(lines) == 1 + 4 * 2
    counts = np.zeros((4, 2), int)
    for line in lines[1:]:
        i, c, n = (int(v) for v in line.split(","))
        counts[i, c] = n
    assert np.all((counts > 0).sum(axis=1) == 2)
    assert 0.0 <= tv <= 1.0


def test_partition_report_homogeneous_tv_near_zero(tmp_path):
    cfg = config_from_dict(
        minimal_doc(
            tmp_path,
            num_clients=4,
            partition={"scheme": "homogeneous", "per_client": 20},
        )
    )
    _, tv = partition_report(cfg)
    assert tv <= 0.05


# --- CLI ------------------------------------------------------------------------


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    path = write_config(tmp_path, minimal_doc(tmp_path))
    assert main(["run", path]) == 0
    out = capsys.readouterr().out
    assert "run complete" in out


def test_cli_rejects_invalid_config(tmp_path, capsys):
    path = write_config(tmp_path, minimal_doc(tmp_path, bogus=True))
    assert main(["run", path]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_comm_audit(tmp_path, capsys):
    path = write_config(tmp_path, minimal_doc(tmp_path))
    assert main(["comm-audit", path]) == 0
    assert "all rounds match" in capsys.readouterr().out


def test_cli_partition_report(tmp_path, capsys):
    path = write_config(tmp_path, minimal_doc(tmp_path))
    assert main(["partition-report", path]) == 0
    assert "total-variation" in capsys.readouterr().out


def test_cli_grad_check(capsys):
    assert main(["grad-check", "--cases", "5", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out


def test_cli_save_config_roundtrip(tmp_path):
    cfg = config_from_dict(minimal_doc(tmp_path))
    save_config(cfg, tmp_path / "echo.json")
    assert load_config(tmp_path / "echo.json") == cfg
