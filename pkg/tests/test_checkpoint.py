import numpy as np
import pytest
from pydantic import ValidationError

from gait_fusion.config import RunConfig
from gait_fusion.constants import NUM_COCO_KEYPOINTS, SELECTED_FEATURES
from gait_fusion.core.checkpoint import (
    Checkpoint,
    check_feature_names,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from gait_fusion.core.fusion import GaitSeverityModel, predict
from gait_fusion.core.gait_features import fit_standardizer
from gait_fusion.core.training import AdamState, adam_step
from gait_fusion.exceptions import CheckpointError
from gait_fusion.models.checkpoint import CheckpointHeader, TensorEntry

NUM_FEATURES = len(SELECTED_FEATURES)


@pytest.fixture
def run_config():
    return RunConfig(seed=7)


@pytest.fixture
def trained_state(run_config):
    """A model with a standardizer, a partly frozen store and two optimizer steps."""
    rng = np.random.default_rng(0)
    model = GaitSeverityModel(run_config.model, NUM_FEATURES, seed=run_config.seed, feature_names=SELECTED_FEATURES)
    model.standardizer = fit_standardizer(rng.normal(size=(20, NUM_FEATURES)), SELECTED_FEATURES)
    model.store.set_trainable("backbone.block1.", False)
    optimizer = AdamState()
    for _ in range(2):
        model.store.zero_grad()
        for tensor in model.store.trainable().values():
            tensor.grad = rng.normal(size=tensor.shape).astype(tensor.data.dtype)
        adam_step(model.store.params, optimizer, lr=1e-3)
    return model, optimizer


def test_resave_is_byte_identical(tmp_path, run_config, trained_state):
    model, optimizer = trained_state
    first = save_checkpoint(tmp_path / "a.ckpt", model, run_config, optimizer)
    restored, restored_optimizer = load_checkpoint(first).restore()
    second = save_checkpoint(tmp_path / "b.ckpt", restored, run_config, restored_optimizer)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(b"GAITCKPT")


def test_restore_recovers_model_state(tmp_path, run_config, trained_state):
    model, optimizer = trained_state
    path = save_checkpoint(tmp_path / "model.ckpt", model, run_config, optimizer)
    restored, checkpoint = load_model(path)

    assert restored.feature_names == SELECTED_FEATURES
    assert restored.standardizer == model.standardizer
    assert not restored.store.is_trainable("backbone.block1.spatial.weight")
    assert restored.store.is_trainable("head.fc1.weight")
    assert checkpoint.header.optimizer.step == 2
    assert checkpoint.header.rng == {"seed": 7}

    rng = np.random.default_rng(1)
    clips = rng.normal(size=(3, 16, NUM_COCO_KEYPOINTS, 3))
    features = rng.normal(size=(3, NUM_FEATURES))
    classes, probabilities = predict(model, clips, features)
    restored_classes, restored_probabilities = predict(restored, clips, features)
    np.testing.assert_array_equal(classes, restored_classes)
    np.testing.assert_array_equal(probabilities, restored_probabilities)


def test_checkpoint_without_optimizer(tmp_path, run_config, trained_state):
    model, _ = trained_state
    path = save_checkpoint(tmp_path / "model.ckpt", model, run_config)
    restored, optimizer = load_checkpoint(path).restore()
    assert optimizer is None
    assert all(e.kind != "optimizer" for e in load_checkpoint(path).header.manifest)


class TestCorruption:
    @pytest.fixture
    def blob(self, run_config, trained_state):
        model, optimizer = trained_state
        return Checkpoint.from_model(model, run_config, optimizer).to_bytes()

    def test_bad_magic(self, blob):
        with pytest.raises(CheckpointError, match="bad magic"):
            Checkpoint.from_bytes(b"NOTACKPT" + blob[8:])

    @pytest.mark.parametrize("keep", [10, 20])
    def test_truncated_header(self, blob, keep):
        with pytest.raises(CheckpointError, match="truncated"):
            Checkpoint.from_bytes(blob[:keep])

    def test_truncated_payload(self, blob):
        with pytest.raises(CheckpointError, match="payload"):
            Checkpoint.from_bytes(blob[:-4])
        with pytest.raises(CheckpointError, match="payload"):
            Checkpoint.from_bytes(blob + b"\x00\x00\x00\x00")

    def test_unknown_version(self, run_config, trained_state):
        checkpoint = Checkpoint.from_model(trained_state[0], run_config)
        checkpoint.header = checkpoint.header.model_copy(update={"version": 99})
        with pytest.raises(CheckpointError, match="version"):
            Checkpoint.from_bytes(checkpoint.to_bytes())

    def test_garbled_header(self, blob):
        broken = bytearray(blob)
        broken[16] = ord("#")
        with pytest.raises(CheckpointError, match="header"):
            Checkpoint.from_bytes(bytes(broken))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_shapes_that_do_not_fit_the_config(self, run_config, trained_state):
        checkpoint = Checkpoint.from_model(trained_state[0], run_config)
        checkpoint.header.config["model"]["encoder_hidden"] = 16
        with pytest.raises(CheckpointError, match="do not match"):
            checkpoint.restore()


class TestManifest:
    def test_overlapping_entries(self):
        with pytest.raises(ValidationError):
            CheckpointHeader(version=1, config={}, num_features=0, payload_length=16, manifest=[
                TensorEntry(name="a", shape=[2], offset=0, length=8),
                TensorEntry(name="b", shape=[2], offset=4, length=8),
            ])

    def test_length_must_match_shape(self):
        with pytest.raises(ValidationError):
            CheckpointHeader(version=1, config={}, num_features=0, payload_length=16,
                             manifest=[TensorEntry(name="a", shape=[2, 2], offset=0, length=8)])

    def test_entries_stay_inside_payload(self):
        with pytest.raises(ValidationError):
            CheckpointHeader(version=1, config={}, num_features=0, payload_length=4,
                             manifest=[TensorEntry(name="a", shape=[2], offset=0, length=8)])


def test_feature_names_must_match(run_config, trained_state):
    checkpoint = Checkpoint.from_model(trained_state[0], run_config)
    check_feature_names(checkpoint, SELECTED_FEATURES)
    with pytest.raises(CheckpointError):
        check_feature_names(checkpoint, list(reversed(SELECTED_FEATURES)))
