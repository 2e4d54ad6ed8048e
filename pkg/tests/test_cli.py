import json
import subprocess
import sys

import pytest

from fedsim import cli


@pytest.fixture()
def config_path(tmp_path):
    raw = {
        "seed": 0,
        "rounds": 2,
        "clients_per_round": 2,
        "batch_size": 10,
        "local_epochs": 1,
        "client_lr": 0.1,
        "server_lr": 1.0,
        "eval_every": 1,
        "dataset": {
            "source": "synthetic",
            "n_per_class": 20,
            "num_classes": 3,
            "input_dim": 12,
            "noise": 0.15,
            "n_test_per_class": 10,
        },
        "model": {"kind": "softmax_regression", "input_dim": 12, "num_classes": 3},
        "partition": {"kind": "iid", "num_clients": 4},
        "codec": {"scheme": "identity"},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_run_subcommand_writes_outputs(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(config_path), "--out-dir", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "summary.json").exists()
    assert "final" in capsys.readouterr().out.lower()


def test_run_seed_override_changes_summary(config_path, tmp_path):
    cli.main(["run", "--config", str(config_path), "--out-dir", str(tmp_path / "a")])
    cli.main(
        [
            "run",
            "--config",
            str(config_path),
            "--out-dir",
            str(tmp_path / "b"),
            "--seed",
            "1",
        ]
    )
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert a["config"]["seed"] == 0
    assert b["config"]["seed"] == 1


def test_quant_bits_override_enables_codec(config_path, tmp_path):
    out = tmp_path / "out"
    code = cli.main(
        [
            "run",
            "--config",
            str(config_path),
            "--out-dir",
            str(out),
            "--quant-bits",
            "4",
        ]
    )
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["codec"]["scheme"] == "uniform_quant"
    assert summary["config"]["codec"]["quant_bits"] == 4


def test_contradictory_flags_exit_config_error(config_path, tmp_path):
    code = cli.main(
        [
            "run",
            "--config",
            str(config_path),
            "--out-dir",
            str(tmp_path / "out"),
            "--quant-bits",
            "4",
            "--no-compression",
        ]
    )
    assert code == cli.CONFIG_EXIT


def test_missing_config_exits_config_error(tmp_path):
    code = cli.main(
        ["run", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path / "o")]
    )
    assert code == cli.CONFIG_EXIT


def test_invalid_config_value_exits_config_error(config_path, tmp_path):
    raw = json.loads(config_path.read_text())
    raw["rounds"] = 0
    bad = config_path.with_name("bad.json")
    bad.write_text(json.dumps(raw))
    code = cli.main(["run", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
    assert code == cli.CONFIG_EXIT


def test_gradcheck_reports_pass(capsys):
    code = cli.main(["gradcheck", "--pairs", "1", "--seed", "0"])
    out = capsys.readouterr().out
    assert code == 0
    assert "pass" in out.lower()


def test_partition_report_subcommand(config_path, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(
        ["partition-report", "--config", str(config_path), "--out-dir", str(out)]
    )
    assert code == 0
    assert (out / "partition.jsonl").exists()
    assert "clients" in capsys.readouterr().out.lower()


def test_unknown_subcommand_exits_config_error():
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == cli.CONFIG_EXIT


def test_console_entry_point_subprocess():
    # exercise the installed script end to end once
    proc = subprocess.run(
        [sys.executable, "-m", "fedsim.cli", "gradcheck", "--pairs", "1"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    assert "pass" in proc.stdout.lower()
