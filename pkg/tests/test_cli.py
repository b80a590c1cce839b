import json

import pytest

from dcl.cli import run
from dcl.config import ConfigError, load_config


FAST_TRAIN = """\
[train]
epochs = 1
batch_size = 8

[encoder]
channels = 16
blocks = 4
input_size = 96

[corpus]
n_videos = 3
frames_per_video = 2
seed = 11
"""


class TestConfig:
    def test_defaults(self):
        train, corpus = load_config()
        assert train.epochs == 30
        assert train.contrast.tau == 0.07
        assert train.encoder.beta == 0.99
        assert corpus.image_size == 96

    def test_file_values(self, tmp_path):
        f = tmp_path / "run.toml"
        f.write_text(FAST_TRAIN)
        train, corpus = load_config(f)
        assert train.epochs == 1
        assert train.encoder.channels == 16
        assert corpus.n_videos == 3

    def test_override_precedence(self, tmp_path):
        f = tmp_path / "run.toml"
        f.write_text(FAST_TRAIN)
        train, _ = load_config(f, ["train.epochs=7", "contrast.tau=0.2"])
        assert train.epochs == 7
        assert train.contrast.tau == 0.2

    def test_unknown_key_named(self, tmp_path):
        f = tmp_path / "run.toml"
        f.write_text("[train]\nepochz = 3\n")
        with pytest.raises(ConfigError, match="train.epochz"):
            load_config(f)

    def test_unknown_section(self, tmp_path):
        f = tmp_path / "run.toml"
        f.write_text("[nope]\nx = 1\n")
        with pytest.raises(ConfigError, match="nope"):
            load_config(f)

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            load_config(None, ["train.epochs=banana"])

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("DCL_SEED", "123")
        train, corpus = load_config()
        assert train.seed == 123
        assert corpus.seed == 123

    def test_manipulation_families_parse(self):
        _, corpus = load_config(None, ["corpus.manipulation_families=SPLICE_RECT,WARP_PATCH"])
        assert [k.value for k in corpus.manipulation_families] == [
            "SPLICE_RECT", "WARP_PATCH",
        ]


class TestCliPipeline:
    def test_synth_train_eval_report(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(FAST_TRAIN)
        data = tmp_path / "data"
        ckpt = tmp_path / "model.ckpt"

        assert run(["synth", "--spec", str(cfg), "--out", str(data)]) == 0
        assert (data / "labels.csv").exists()

        assert run([
            "train", "--config", str(cfg), "--data", str(data), "--out", str(ckpt),
        ]) == 0
        assert ckpt.exists()

        out_json = tmp_path / "metrics.json"
        assert run([
            "eval", "--checkpoint", str(ckpt), "--data", str(data),
            "--out", str(out_json),
        ]) == 0
        m = json.loads(out_json.read_text())
        assert "auc_frame" in m and "eer_frame" in m

        rep = tmp_path / "report"
        assert run([
            "report", "--checkpoint", str(ckpt), "--data", str(data),
            "--out", str(rep),
        ]) == 0
        assert (rep / "selfsim_hist.png").exists()

    def test_unknown_config_key_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[train]\nlearning_rat = 0.1\n")
        code = run(["train", "--config", str(cfg), "--data", "x", "--out", "y"])
        assert code == 2

    def test_runtime_failure_exit_1(self, tmp_path):
        code = run([
            "train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "c"),
        ])
        assert code == 1

    def test_xgen_schema(self, tmp_path):
        out = tmp_path / "xgen.json"
        code = run([
            "xgen",
            "--train-family", "SPLICE_RECT",
            "--test-family", "WARP_PATCH",
            "--workdir", str(tmp_path / "work"),
            "--out", str(out),
            "--set", "train.epochs=1",
            "--set", "train.batch_size=8",
            "--set", "encoder.channels=16",
            "--set", "corpus.n_videos=3",
            "--set", "corpus.frames_per_video=2",
        ])
        assert code == 0
        result = json.loads(out.read_text())
        for arm in ("dcl", "ce_baseline"):
            assert "auc_frame" in result[arm]["unseen"]
            assert "auc_frame" in result[arm]["seen"]
        assert result["train_family"] == "SPLICE_RECT"
        assert result["test_family"] == "WARP_PATCH"
