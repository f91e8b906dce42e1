import csv
import json

import numpy as np
import pytest

from cfn_lab.data_manager import load_checkpoint, load_dataset
from cfn_lab.errors import EXIT_CONFIGURATION, EXIT_OK, ConfigurationError
from cfn_lab.main import build_parser, load_config_file, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small reference dataset and a one-epoch model shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    code = main([
        "--workers", "1", "reference", "--pde", "burgers1d", "--n", "16", "--dt", "0.01",
        "--steps", "6", "--traj", "3", "--seed", "1", "--out", str(root / "ref"),
    ])
    assert code == EXIT_OK
    code = main([
        "train", "--data", str(root / "ref"), "--epochs", "1", "--lr", "0.001", "--batch", "2",
        "--window", "3", "--val", "1", "--flux-hidden", "8,8", "--radius-hidden", "4",
        "--out", str(root / "model.ckpt"),
    ])
    assert code == EXIT_OK
    return root


def test_reference_writes_dataset(workspace):
    ds = load_dataset(workspace / "ref")
    assert len(ds) == 3
    assert ds.manifest.n == 16
    assert ds[0].steps == 6


def test_train_writes_checkpoint_and_report(workspace):
    ckpt = load_checkpoint(workspace / "model.ckpt")
    assert ckpt.model.flux_net.layer_dims == [1, 8, 8, 1]
    assert ckpt.manifest.pde.value == "burgers1d"
    with open(workspace / "model_report.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][:3] == ["epoch", "train_loss", "val_loss"]
    assert [r[0] for r in rows[1:]] == ["0", "1"]


def test_train_streams_progress(workspace, capsys):
    code = main([
        "train", "--data", str(workspace / "ref"), "--epochs", "1", "--window", "3", "--val", "0",
        "--flux-hidden", "4", "--radius-hidden", "4", "--out", str(workspace / "other.ckpt"),
    ])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 3


def test_predict_and_evaluate(workspace):
    pred = workspace / "pred"
    code = main([
        "predict", "--model", str(workspace / "model.ckpt"), "--ic-from", "1",
        "--data", str(workspace / "ref"), "--steps", "3", "--out", str(pred),
    ])
    assert code == EXIT_OK
    ds = load_dataset(pred)
    assert ds[0].steps == 3
    np.testing.assert_array_equal(ds[0].values[0], load_dataset(workspace / "ref")[1].values[0])

    metrics = workspace / "metrics.csv"
    code = main([
        "evaluate", "--pred", str(pred), "--reference", str(workspace / "ref"), "--index", "1",
        "--model", str(workspace / "model.ckpt"), "--out-csv", str(metrics),
    ])
    assert code == EXIT_OK
    with open(metrics, newline="") as f:
        rows = list(csv.DictReader(f))
    conserved = [float(r["value"]) for r in rows if r["metric"] == "conserved_remainder"]
    assert len(conserved) == 4
    assert max(conserved) <= 1e-12
    errors = [float(r["value"]) for r in rows if r["metric"] == "relative_l2"]
    assert errors[0] == 0.0


def test_predict_from_builtin_case(workspace):
    code = main([
        "predict", "--model", str(workspace / "model.ckpt"), "--ic-from", "burgers-test",
        "--n", "32", "--steps", "2", "--out", str(workspace / "builtin"),
    ])
    assert code == EXIT_OK
    assert load_dataset(workspace / "builtin").manifest.n == 32


def test_predict_rejects_case_of_other_pde(workspace):
    code = main([
        "predict", "--model", str(workspace / "model.ckpt"), "--ic-from", "sw-test",
        "--steps", "2", "--out", str(workspace / "bad"),
    ])
    assert code == EXIT_CONFIGURATION


def test_corrupt_coarsen_and_export(workspace):
    assert main([
        "corrupt", "--data", str(workspace / "ref"), "--eta", "0.1", "--seed", "3",
        "--out", str(workspace / "noisy"),
    ]) == EXIT_OK
    assert load_dataset(workspace / "noisy").manifest.noise_eta == 0.1

    assert main([
        "coarsen", "--data", str(workspace / "ref"), "--factor", "2", "--out", str(workspace / "coarse"),
    ]) == EXIT_OK
    assert load_dataset(workspace / "coarse").manifest.n == 8

    out = workspace / "u.csv"
    assert main([
        "export", "--data", str(workspace / "coarse"), "--index", "2", "--var", "u", "--out", str(out),
    ]) == EXIT_OK
    with open(out, newline="") as f:
        assert len(list(csv.reader(f))) == 1 + 7 * 8


def test_noise_intensity_out_of_range(workspace):
    code = main([
        "corrupt", "--data", str(workspace / "ref"), "--eta", "1.5", "--out", str(workspace / "x"),
    ])
    assert code == EXIT_CONFIGURATION


def test_reference_needs_a_source(tmp_path):
    assert main(["reference", "--out", str(tmp_path / "x")]) == EXIT_CONFIGURATION
    assert main(["reference", "--pde", "burgers1d", "--ic", "burgers-test", "--out", str(tmp_path / "x")]) == 2


def test_coarsen_factor_checked(workspace):
    code = main(["coarsen", "--data", str(workspace / "ref"), "--factor", "3", "--out", str(workspace / "y")])
    assert code == EXIT_CONFIGURATION


def test_missing_dataset_is_a_format_error(tmp_path):
    code = main(["export", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "u.csv")])
    assert code == EXIT_CONFIGURATION


def test_invalid_log_level(tmp_path):
    code = main(["--log-level", "chatty", "reference", "--pde", "burgers1d", "--out", str(tmp_path / "x")])
    assert code == EXIT_CONFIGURATION


def test_unknown_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == 2


def test_config_file_values_and_flag_precedence(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"pde": "burgers1d", "n": 16, "dt": 0.01, "steps": 1, "out": "ignored"}))
    out = tmp_path / "ref"
    code = main(["--config", str(config), "--workers", "1", "reference", "--out", str(out)])
    assert code == EXIT_OK
    assert load_dataset(out).manifest.L == 1


def test_config_file_keys_are_normalised(tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"out-csv": "m.csv", "log-level": "DEBUG"}))
    assert load_config_file(config) == {"out_csv": "m.csv", "log_level": "DEBUG"}
    config.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        load_config_file(config)


def test_parser_suppresses_defaults():
    args = vars(build_parser().parse_args(["train", "--data", "d", "--out", "m"]))
    assert set(args) == {"command", "data", "out"}
