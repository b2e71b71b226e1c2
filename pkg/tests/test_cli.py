import pytest

from waicflow.cli import main

TINY = ["--set", "n_rows=220", "--set", "epochs=2", "--set", "hidden_width=8",
        "--set", "n_blocks=2", "--set", "batch_size=64"]


def test_simulate_success(tmp_path, capsys):
    code = main(["simulate", "--out", str(tmp_path), "--seed", "3"] + TINY)
    assert code == 0
    out = capsys.readouterr().out
    assert "n_rows: 220" in out
    assert "dataset_path:" in out


def test_train_and_score_roundtrip(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "sim"), "--seed", "4"]
                + TINY) == 0
    assert main(["train", str(tmp_path / "sim" / "dataset.csv"),
                 "--out", str(tmp_path / "ens"), "--seed", "4",
                 "--members", "2"] + TINY) == 0
    assert main(["score", str(tmp_path / "ens" / "ensemble.manifest"),
                 str(tmp_path / "sim" / "dataset.csv"),
                 "--out", str(tmp_path / "scores"), "--serial"] + TINY) == 0
    out = capsys.readouterr().out
    assert "median_waic:" in out


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    code = main(["simulate", "--out", str(tmp_path), "--set", "bogus=1"])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_malformed_set_flag_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--out", str(tmp_path), "--set", "novalue"])
    assert exc.value.code == 2


def test_missing_dataset_is_usage_error(tmp_path, capsys):
    code = main(["score", str(tmp_path / "none.manifest"),
                 str(tmp_path / "none.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "cannot read" in capsys.readouterr().err


def test_dimension_mismatch_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "a"), "--seed", "5"]
                + TINY) == 0
    assert main(["train", str(tmp_path / "a" / "dataset.csv"),
                 "--out", str(tmp_path / "ens"), "--seed", "5",
                 "--members", "2"] + TINY) == 0
    assert main(["simulate", "--out", str(tmp_path / "b"), "--seed", "5",
                 "--set", "camera=ximea16"] + TINY) == 0
    code = main(["score", str(tmp_path / "ens" / "ensemble.manifest"),
                 str(tmp_path / "b" / "dataset.csv"),
                 "--out", str(tmp_path / "scores")])
    assert code == 2
    assert "16" in capsys.readouterr().err


def test_divergent_training_is_runtime_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path / "sim"), "--seed", "6"]
                + TINY) == 0
    code = main(["train", str(tmp_path / "sim" / "dataset.csv"),
                 "--out", str(tmp_path / "ens"), "--seed", "6",
                 "--members", "2", "--set", "learning_rate=1e160"] + TINY)
    assert code == 1
    assert "member 0" in capsys.readouterr().err


def test_config_file_drives_run(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_rows = 220\nepochs = 2\nhidden_width = 8\n"
                   "n_blocks = 2\nbatch_size = 64\nseed = 11\n")
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 0
    assert "n_rows: 220" in capsys.readouterr().out


def test_flag_overrides_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_rows = 220\nepochs = 2\nhidden_width = 8\n"
                   "n_blocks = 2\nbatch_size = 64\nseed = 11\n")
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--set", "n_rows=110"])
    assert code == 0
    assert "n_rows: 110" in capsys.readouterr().out


def test_unreachable_server_is_runtime_error(tmp_path, capsys):
    code = main(["simulate", "--out", str(tmp_path),
                 "--server", "http://127.0.0.1:1"])
    assert code == 1
    assert "cannot reach service" in capsys.readouterr().err
