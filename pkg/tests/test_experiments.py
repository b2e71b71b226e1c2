import time

import numpy as np
import pytest

from waicflow.config import HarnessConfig, load_config, parse_config_text
from waicflow.errors import ParseError, UsageError
from waicflow.experiments import (auroc, changepoint_index, cmd_score,
                                  cmd_simulate, cmd_train, rolling_mean,
                                  summarize_waic, write_scores_table)
from waicflow.datasets import load_dataset, save_dataset
from waicflow.numcore import make_rng

TINY = {"n_rows": "440", "epochs": "2", "hidden_width": "8", "n_blocks": "2",
        "batch_size": "64", "noise_sigma": "0.002"}


def tiny_config(**extra):
    overrides = dict(TINY)
    overrides.update({k: str(v) for k, v in extra.items()})
    return load_config(None, **overrides)


class TestConfig:
    def test_defaults(self):
        cfg = HarnessConfig()
        assert cfg.members == 5
        assert cfg.n_rows == 55000
        assert cfg.train_ratio == pytest.approx(10 / 11)

    def test_parse_text(self):
        overrides = parse_config_text("seed = 7\n# comment\nmembers=3\n")
        assert overrides == {"seed": 7, "members": 3}

    def test_unknown_key_rejected(self):
        with pytest.raises(UsageError, match="unknown config key"):
            parse_config_text("bogus = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(UsageError, match="seed"):
            parse_config_text("seed = notanumber\n")

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 5\nmembers = 3\n")
        cfg = load_config(str(path), members=4)
        assert cfg.seed == 5
        assert cfg.members == 4

    def test_content_hash_changes_with_values(self):
        assert HarnessConfig().content_hash() != \
            HarnessConfig(seed=1).content_hash()


class TestAuroc:
    def brute_force(self, pos, neg):
        wins = 0.0
        for p in pos:
            for n in neg:
                if p > n:
                    wins += 1.0
                elif p == n:
                    wins += 0.5
        return wins / (len(pos) * len(neg))

    def test_matches_pairwise_oracle(self):
        rng = make_rng(1)
        pos = np.round(rng.normal(1.0, 1.0, 300), 1)  # rounding forces ties
        neg = np.round(rng.normal(0.0, 1.0, 500), 1)
        assert auroc(pos, neg) == pytest.approx(self.brute_force(pos, neg),
                                                abs=1e-12)

    def test_perfect_separation(self):
        assert auroc(np.array([2.0, 3.0]), np.array([0.0, 1.0])) == 1.0
        assert auroc(np.array([0.0, 1.0]), np.array([2.0, 3.0])) == 0.0

    def test_identical_distributions(self):
        assert auroc(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.5

    def test_empty_class_rejected(self):
        with pytest.raises(UsageError):
            auroc(np.array([]), np.array([1.0]))


class TestChangepoint:
    def test_step_series_detected_exactly(self):
        rng = make_rng(2)
        series = np.concatenate([np.full(80, 10.0), np.full(120, 2.0)])
        series += rng.normal(0, 0.3, 200)
        detected = changepoint_index(series)
        assert abs(detected - 80) <= 2

    def test_rising_step_detected(self):
        series = np.concatenate([np.full(50, 1.0), np.full(50, 6.0)])
        assert abs(changepoint_index(series) - 50) <= 2

    def test_flat_series_has_no_changepoint(self):
        assert changepoint_index(np.full(100, 3.0)) is None

    def test_short_series_rejected(self):
        with pytest.raises(UsageError):
            changepoint_index(np.ones(10))

    def test_rolling_mean_centered(self):
        series = np.arange(10.0)
        out = rolling_mean(series, window=5)
        assert out[5] == pytest.approx(5.0)
        assert out[0] == pytest.approx(np.mean([0, 1, 2]))


class TestSummaries:
    def test_quantiles_monotone(self):
        s = summarize_waic(make_rng(3).normal(size=1000))
        assert s.q02 <= s.q25 <= s.q75 <= s.q98
        assert s.q02 <= s.median <= s.q98


class TestCmdSimulate(object):
    def test_default_counts_scaled(self, tmp_path):
        cfg = tiny_config(n_rows=660)
        result = cmd_simulate(cfg, str(tmp_path))
        assert result["n_rows"] == 660
        assert result["n_train"] == 600
        assert result["n_test"] == 60
        assert result["n_tr_s"] == 294  # 49% of the training split
        ds = load_dataset(result["dataset_path"])
        assert ds.n_rows == 660

    def test_seed_changes_bytes(self, tmp_path):
        a = cmd_simulate(tiny_config(seed=1), str(tmp_path / "a"))
        b = cmd_simulate(tiny_config(seed=2), str(tmp_path / "b"))
        with open(a["dataset_path"], "rb") as fa, open(b["dataset_path"], "rb") as fb:
            assert fa.read() != fb.read()

    def test_small_run_is_fast(self, tmp_path):
        start = time.perf_counter()
        cmd_simulate(tiny_config(n_rows=10), str(tmp_path))
        assert time.perf_counter() - start < 1.0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    cfg = tiny_config(n_rows=440, members=5)
    sim = cmd_simulate(cfg, str(root / "sim"))
    train = cmd_train(cfg, sim["dataset_path"], str(root / "ens"))
    return root, cfg, sim, train


class TestCmdTrainScore:
    def test_default_member_count(self, pipeline):
        _, _, _, train = pipeline
        assert len(train["checkpoint_paths"]) == 5
        assert len(train["final_nll"]) == 5

    def test_member_override(self, pipeline, tmp_path):
        root, cfg, sim, _ = pipeline
        cfg2 = tiny_config(n_rows=440, members=2)
        result = cmd_train(cfg2, sim["dataset_path"], str(tmp_path / "ens2"))
        assert len(result["checkpoint_paths"]) == 2

    def test_rerun_reproduces_manifest(self, pipeline, tmp_path):
        root, cfg, sim, train = pipeline
        again = cmd_train(cfg, sim["dataset_path"], str(tmp_path / "again"))
        with open(train["manifest_path"]) as a, open(again["manifest_path"]) as b:
            assert a.read() == b.read()

    def test_scores_table_identity(self, pipeline, tmp_path):
        root, cfg, sim, train = pipeline
        result = cmd_score(train["manifest_path"], sim["dataset_path"],
                           str(tmp_path / "scores"))
        with open(result["scores_path"]) as fh:
            header = fh.readline().strip().split(",")
            i_mean = header.index("mean_logp")
            i_var = header.index("var_logp")
            i_waic = header.index("waic")
            for line in fh:
                parts = line.strip().split(",")
                mean, var, waic = (float(parts[i]) for i in (i_mean, i_var, i_waic))
                assert waic == var - mean

    def test_scaled_copy_scores_worse(self, pipeline, tmp_path):
        root, cfg, sim, train = pipeline
        ds = load_dataset(sim["dataset_path"])
        scaled = ds.subset(np.arange(ds.n_rows))
        scaled.measurements = scaled.measurements * 100.0
        scaled_path = tmp_path / "scaled.csv"
        save_dataset(scaled, str(scaled_path))
        base = cmd_score(train["manifest_path"], sim["dataset_path"],
                         str(tmp_path / "s1"))
        worse = cmd_score(train["manifest_path"], str(scaled_path),
                          str(tmp_path / "s2"))
        assert base["median_waic"] < worse["median_waic"]

    def test_dimension_mismatch_names_dims(self, pipeline, tmp_path):
        root, cfg, sim, train = pipeline
        other = cmd_simulate(tiny_config(n_rows=60, camera="ximea16"),
                             str(tmp_path / "other"))
        with pytest.raises(UsageError, match="16"):
            cmd_score(train["manifest_path"], other["dataset_path"],
                      str(tmp_path / "x"))

    def test_empty_dataset_rejected(self, pipeline, tmp_path):
        root, cfg, sim, train = pipeline
        empty = tmp_path / "empty.csv"
        with open(sim["dataset_path"]) as fh:
            lines = fh.read().splitlines()
        keep = [lines[0], lines[1]] + [l for l in lines[2:] if l.startswith("#")]
        empty.write_text("\n".join(keep) + "\n")
        with pytest.raises(ParseError):
            cmd_score(train["manifest_path"], str(empty),
                      str(tmp_path / "y"))

    def test_training_rows_selected_by_tag(self, pipeline):
        _, cfg, sim, train = pipeline
        # 440 rows -> train split 400 -> tr_s is 49% of it
        assert train["n_training_rows"] == 196


class TestScoresTable:
    def test_roundtrip_math(self, tmp_path):
        logps = make_rng(4).normal(size=(3, 7))
        path = tmp_path / "scores.csv"
        write_scores_table(str(path), logps)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 8
        first = lines[1].split(",")
        assert first[0] == "0"
        back = np.array([float(x) for x in first[1:4]])
        assert np.array_equal(back, logps[:, 0])
