"""Checkpoint persistence: bit-exact round trips and corruption detection."""

import json

import numpy as np
import pytest

from capsnet import (CapsuleClassifier, ModelConfig, TrainConfig, evaluate,
                     init_train_state, load_checkpoint, save_checkpoint,
                     train_epoch)
from capsnet.data import make_blobs
from capsnet.errors import CheckpointError

TOY = dict(input_shape=(12, 12, 1), num_classes=3,
           stem_widths=(4, 8, 8, 16), stage_depths=(1, 1, 1))


@pytest.fixture
def trained(tmp_path):
    cfg = ModelConfig(**TOY)
    model = CapsuleClassifier(cfg)
    state = init_train_state(model, TrainConfig(epochs=1, batch_size=16, seed=0))
    x, y = make_blobs(32, num_classes=3, image_size=12, seed=0)
    train_epoch(model, state, x, y)
    path = tmp_path / "ckpt"
    save_checkpoint(path, cfg, state)
    return cfg, model, state, path, (x, y)


class TestRoundTrip:
    def test_bit_exact_params_stats_velocity(self, trained):
        cfg, model, state, path, _ = trained
        cfg2, state2 = load_checkpoint(path)
        assert cfg2 == cfg
        assert state2.epoch == state.epoch
        assert state2.config == state.config
        assert set(state2.params) == set(state.params)
        for k in state.params:
            assert np.array_equal(state2.params[k].data, state.params[k].data)
            assert state2.params[k].dtype == state.params[k].dtype
            assert np.array_equal(state2.velocity[k], state.velocity[k])
        for k in state.stats:
            assert np.array_equal(state2.stats[k].mean, state.stats[k].mean)
            assert np.array_equal(state2.stats[k].var, state.stats[k].var)

    def test_evaluation_identical_after_reload(self, trained):
        cfg, model, state, path, (x, y) = trained
        before = evaluate(model, state.params, state.stats, x, y)
        cfg2, state2 = load_checkpoint(path)
        model2 = CapsuleClassifier(cfg2)
        after = evaluate(model2, state2.params, state2.stats, x, y)
        assert before["loss"] == after["loss"]
        assert before["accuracy"] == after["accuracy"]

    def test_manifest_is_sorted_json(self, trained):
        *_, path, _ = trained
        manifest = json.loads((path / "manifest.json").read_text())
        assert manifest["format_version"] == 1
        names = [t["name"] for t in manifest["tensors"] if t["section"] == "param"]
        assert names == sorted(names)
        assert all(t["dtype"] in ("<f4", "<f8") for t in manifest["tensors"])

    def test_resume_training_continues_epoch_counter(self, trained):
        cfg, model, state, path, (x, y) = trained
        _, state2 = load_checkpoint(path)
        row = train_epoch(model, state2, x, y)
        assert row["epoch"] == 1


class TestCorruption:
    def test_blob_tamper_detected(self, trained):
        *_, path, _ = trained
        blob = (path / "params.bin").read_bytes()
        flipped = bytes([blob[0] ^ 0xFF]) + blob[1:]
        (path / "params.bin").write_bytes(flipped)
        with pytest.raises(CheckpointError, match="SHA-256"):
            load_checkpoint(path)

    def test_blob_truncation_detected(self, trained):
        *_, path, _ = trained
        blob = (path / "params.bin").read_bytes()
        (path / "params.bin").write_bytes(blob[:-8])
        with pytest.raises(CheckpointError, match="bytes"):
            load_checkpoint(path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError, match="checkpoint directory"):
            load_checkpoint(tmp_path / "nope")

    def test_invalid_json(self, trained):
        *_, path, _ = trained
        (path / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointError, match="JSON"):
            load_checkpoint(path)

    def test_missing_manifest_key(self, trained):
        *_, path, _ = trained
        manifest = json.loads((path / "manifest.json").read_text())
        del manifest["blob_sha256"]
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="blob_sha256"):
            load_checkpoint(path)

    def test_entry_shape_mismatch(self, trained):
        *_, path, _ = trained
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["tensors"][0]["shape"] = [999]
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(path)

    def test_unsupported_dtype(self, trained):
        *_, path, _ = trained
        manifest = json.loads((path / "manifest.json").read_text())
        manifest["tensors"][0]["dtype"] = ">f4"
        (path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="dtype"):
            load_checkpoint(path)
