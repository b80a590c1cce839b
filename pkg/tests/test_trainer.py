import json
import zipfile

import numpy as np
import pytest
import torch

from dcl.data import CorpusSpec, generate_corpus, load_dataset
from dcl.encoder import EncoderConfig, images_to_tensor
from dcl.trainer import (
    TrainConfig,
    TrainState,
    load_checkpoint,
    phi_schedule,
    save_checkpoint,
    total_loss,
    train,
    train_step,
)


def tiny_config(**kw):
    base = dict(
        epochs=2,
        batch_size=8,
        seed=0,
        encoder=EncoderConfig(channels=16, blocks=4, input_size=96),
    )
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("traincorpus") / "c"
    generate_corpus(CorpusSpec(n_videos=3, frames_per_video=2, seed=9), root)
    return load_dataset(root)


class TestPhiSchedule:
    def test_paper_values(self):
        cfg = TrainConfig()
        assert phi_schedule(1, cfg) == 0.1
        assert phi_schedule(5, cfg) == 0.1
        assert phi_schedule(6, cfg) == 0.5

    def test_no_warmup(self):
        cfg = TrainConfig(warm_epochs=0)
        assert phi_schedule(1, cfg) == 0.5

    def test_epoch_must_be_positive(self):
        with pytest.raises(ValueError):
            phi_schedule(0, TrainConfig())


class TestTotalLoss:
    def test_phi_zero(self):
        assert total_loss(2.0, 5.0, 7.0, 0.0) == 2.0

    def test_phi_one(self):
        assert total_loss(2.0, 1.0, 1.5, 1.0) == 2.5

    def test_phi_half(self):
        assert total_loss(2.0, 1.0, 1.0, 0.5) == 2.0

    def test_phi_bounds(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, 1.0, 1.5)


class TestTrainStep:
    def test_ordering_identity(self, tiny_dataset):
        state = TrainState(tiny_config())
        batch = tiny_dataset.samples[:6]
        losses = train_step(state, batch, tiny_dataset, phi=0.3)
        want = 0.3 * (losses["inter"] + losses["intra"]) + 0.7 * losses["ce"]
        assert losses["total"] == pytest.approx(want, abs=1e-6)

    def test_key_params_change_only_via_ema(self, tiny_dataset):
        cfg = tiny_config()
        state = TrainState(cfg)
        key_before = [p.clone() for p in state.model._key_params()]
        train_step(state, tiny_dataset.samples[:6], tiny_dataset, phi=0.5)
        beta = cfg.encoder.beta
        # after one step: key = beta*key_old + (1-beta)*query_new, exactly
        for kb, qafter, kp in zip(
            key_before, state.model._query_params(), state.model._key_params()
        ):
            torch.testing.assert_close(kp, beta * kb + (1 - beta) * qafter, rtol=1e-5, atol=1e-7)

    def test_phi_zero_matches_plain_bce_step(self, tiny_dataset):
        from dcl.encoder import bce_loss
        from dcl.views import make_views

        batch = tiny_dataset.samples[:6]
        cfg_a = tiny_config()
        state = TrainState(cfg_a)
        train_step(state, batch, tiny_dataset, phi=0.0)

        # reference: identical init, pure BCE objective with the same views
        ref = TrainState(tiny_config())
        pairs = [make_views(s, tiny_dataset, cfg_a.views, ref.rng) for s in batch]
        v1 = images_to_tensor([p.view1 for p in pairs])
        labels = torch.tensor([s.label for s in batch], dtype=torch.float32)
        _, _, logits = ref.model.forward_query(v1)
        loss = bce_loss(logits, labels)
        ref.optimizer.zero_grad()
        loss.backward()
        ref.optimizer.step()
        for pa, pb in zip(state.model._query_params(), ref.model._query_params()):
            torch.testing.assert_close(pa, pb, rtol=1e-6, atol=1e-7)
        for pa, pb in zip(
            state.model.classifier.parameters(), ref.model.classifier.parameters()
        ):
            torch.testing.assert_close(pa, pb, rtol=1e-6, atol=1e-7)

    def test_single_class_batch_still_trains(self, tiny_dataset):
        state = TrainState(tiny_config())
        real_only = [s for s in tiny_dataset.samples if s.label == 0][:4]
        losses = train_step(state, real_only, tiny_dataset, phi=0.5)
        assert np.isfinite(losses["total"])


class TestTrain:
    def test_deterministic_loss_trajectory(self, tiny_dataset):
        _, rows_a = train(tiny_config(), tiny_dataset)
        _, rows_b = train(tiny_config(), tiny_dataset)
        assert rows_a == rows_b

    def test_log_schema(self, tiny_dataset, tmp_path):
        log = tmp_path / "loss.jsonl"
        _, rows = train(tiny_config(), tiny_dataset, log_path=log)
        assert len(rows) == 2
        for row in rows:
            for key in ("epoch", "ce", "inter", "intra", "total", "queue_real", "queue_fake"):
                assert key in row
        on_disk = [json.loads(line) for line in log.read_text().splitlines()]
        assert on_disk == rows

    def test_single_class_dataset_rejected(self, tiny_dataset):
        from dcl.data import Dataset

        reals = Dataset([s for s in tiny_dataset.samples if s.label == 0])
        with pytest.raises(ValueError, match="both"):
            train(tiny_config(), reals)

    def test_zero_epochs_checkpoints_initial_state(self, tiny_dataset, tmp_path):
        ckpt = tmp_path / "init.ckpt"
        state, rows = train(tiny_config(epochs=0), tiny_dataset, checkpoint_path=ckpt)
        assert rows == []
        assert state.epoch == 0
        assert ckpt.exists()

    def test_resume_reproduces_uninterrupted_run(self, tiny_dataset, tmp_path):
        full_cfg = tiny_config(epochs=4, checkpoint_every=2)
        _, rows_full = train(full_cfg, tiny_dataset)

        ckpt = tmp_path / "mid.ckpt"
        train(tiny_config(epochs=2), tiny_dataset, checkpoint_path=ckpt)
        _, rows_resumed = train(
            tiny_config(epochs=4), tiny_dataset, resume_from=ckpt
        )
        assert rows_resumed == rows_full[2:]


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tiny_dataset, tmp_path):
        state, _ = train(tiny_config(), tiny_dataset)
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        x = images_to_tensor([s.image for s in tiny_dataset.samples[:4]])
        for a, b in zip(state.model.forward_query(x), loaded.model.forward_query(x)):
            assert torch.equal(a, b)
        assert torch.equal(state.model.forward_key(x), loaded.model.forward_key(x))

    def test_manifest_contents(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(state, path)
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
        assert manifest["format"] == "dcl-ckpt-1"
        assert manifest["config"]["epochs"] == 2
        assert manifest["config"]["encoder"]["channels"] == 16
        assert "shapes" in manifest and manifest["shapes"]

    def test_version_mismatch_rejected(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(state, path)
        # rewrite with a wrong version
        with zipfile.ZipFile(path) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        manifest = json.loads(names["manifest.json"])
        manifest["format"] = "dcl-ckpt-0"
        names["manifest.json"] = json.dumps(manifest).encode()
        with zipfile.ZipFile(path, "w") as zf:
            for n, data in names.items():
                zf.writestr(n, data)
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(path)

    def test_corrupted_shape_names_parameter(self, tiny_dataset, tmp_path):
        state = TrainState(tiny_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(state, path)
        with zipfile.ZipFile(path) as zf:
            names = {n: zf.read(n) for n in zf.namelist()}
        manifest = json.loads(names["manifest.json"])
        victim = next(k for k in manifest["shapes"] if k.startswith("model/"))
        manifest["shapes"][victim] = [1, 2, 3]
        names["manifest.json"] = json.dumps(manifest).encode()
        with zipfile.ZipFile(path, "w") as zf:
            for n, data in names.items():
                zf.writestr(n, data)
        with pytest.raises(ValueError) as err:
            load_checkpoint(path)
        assert victim in str(err.value)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"PK\x03\x04 definitely not a checkpoint")
        with pytest.raises(Exception):
            load_checkpoint(path)

    def test_optimizer_moments_roundtrip(self, tiny_dataset, tmp_path):
        state, _ = train(tiny_config(), tiny_dataset)
        path = tmp_path / "m.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        params_a = state.optimizer.param_groups[0]["params"]
        params_b = loaded.optimizer.param_groups[0]["params"]
        for pa, pb in zip(params_a, params_b):
            sa = state.optimizer.state.get(pa)
            sb = loaded.optimizer.state.get(pb)
            assert (sa is None) == (sb is None)
            if sa:
                assert torch.equal(sa["exp_avg"], sb["exp_avg"])
                assert torch.equal(sa["exp_avg_sq"], sb["exp_avg_sq"])
                assert int(sa["step"]) == int(sb["step"])
