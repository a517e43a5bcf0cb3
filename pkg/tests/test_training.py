import numpy as np
import pandas as pd
import pytest

from gait_fusion.config import TrainConfig, load_run_config
from gait_fusion.constants import SELECTED_FEATURES, ModelStream
from gait_fusion.core.autodiff import Tensor
from gait_fusion.core.fusion import GaitSeverityModel
from gait_fusion.core.gait_features import fit_standardizer
from gait_fusion.core.pose_data import patient_stratified_split, prepare_sequences
from gait_fusion.core.synthetic import synth_generate
from gait_fusion.core.training import (
    AdamState,
    ClipSet,
    EarlyStopping,
    Trainer,
    adam_step,
    class_weights,
    clip_features,
    evaluate_model,
    lr_schedule,
    phase_of,
    split_clip_sets,
    train,
    write_run_log,
)
from gait_fusion.exceptions import ContractError


def build_model(run_config, stream=ModelStream.FUSED):
    config = run_config.model.model_copy(update={"stream": stream})
    return GaitSeverityModel(config, len(SELECTED_FEATURES), seed=run_config.seed, feature_names=SELECTED_FEATURES)


def with_overrides(run_config, **overrides):
    return load_run_config(base=run_config.model_dump(mode="json"), overrides=overrides)


def param_copy(model, prefix=""):
    return {n: t.data.copy() for n, t in model.store.params.items() if n.startswith(prefix)}


class TestAdam:
    def test_first_step_moves_by_learning_rate(self, float64):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([0.5])
        assert adam_step({"p": p}, AdamState(), lr=0.1) == 1
        np.testing.assert_allclose(p.data, [0.9], atol=1e-7)

    def test_weight_decay_modes(self, float64):
        coupled = Tensor(np.array([1.0]), requires_grad=True)
        decoupled = Tensor(np.array([1.0]), requires_grad=True)
        coupled.grad = decoupled.grad = np.array([0.5])
        adam_step({"p": coupled}, AdamState(), lr=0.1, weight_decay=0.1)
        adam_step({"p": decoupled}, AdamState(), lr=0.1, weight_decay=0.1, decoupled=True)
        np.testing.assert_allclose(coupled.data, [0.9], atol=1e-7)
        np.testing.assert_allclose(decoupled.data, [0.89], atol=1e-7)

    def test_frozen_and_gradless_parameters_are_skipped(self):
        frozen = Tensor(np.ones(2), requires_grad=False)
        gradless = Tensor(np.ones(2), requires_grad=True)
        state = AdamState()
        assert adam_step({"a": frozen, "b": gradless}, state, lr=0.1) == 0
        assert state.m == {}
        with pytest.raises(ContractError):
            adam_step({"a": gradless}, state, lr=0.0)

    def test_moment_arrays_roundtrip(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.full(3, 0.2)
        state = AdamState()
        adam_step({"w": p}, state, lr=0.01)
        restored = AdamState()
        restored.load_arrays(state.arrays(), state.t)
        np.testing.assert_array_equal(restored.m["w"], state.m["w"])
        assert restored.t == {"w": 1}


class TestSchedule:
    def test_default_schedule(self):
        config = TrainConfig()
        assert [lr_schedule(e, config) for e in (1, 2, 3)] == [1e-3] * 3
        assert lr_schedule(4, config) == pytest.approx(1e-4)
        assert lr_schedule(12, config) == pytest.approx(1e-6 + 0.5 * (1e-4 - 1e-6))
        assert lr_schedule(20, config) == 1e-6
        rates = [lr_schedule(e, config) for e in range(4, 21)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_single_phase2_epoch(self):
        config = TrainConfig(phase1_epochs=3, total_epochs=4)
        assert lr_schedule(4, config) == config.phase2_lr
        assert phase_of(3, config) == 1
        assert phase_of(4, config) == 2

    def test_out_of_range_epochs(self):
        config = TrainConfig()
        for epoch in (0, 21):
            with pytest.raises(ContractError):
                lr_schedule(epoch, config)

    def test_phase1_must_end_before_training(self):
        with pytest.raises(ValueError):
            TrainConfig(phase1_epochs=5, total_epochs=5)


class TestEarlyStopping:
    def test_stops_after_patience_epochs_without_improvement(self):
        stopper = EarlyStopping(patience=5)
        history = [0.5, 0.6, 0.7, 0.7, 0.6, 0.7, 0.65, 0.5, 0.9]
        stopped_at = None
        for epoch, value in enumerate(history, start=1):
            stopper.update(epoch, value)
            if stopper.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 8
        assert stopper.best_epoch == 3
        assert stopper.best_value == 0.7

    def test_decline_after_epoch_four_stops_at_nine(self):
        stopper = EarlyStopping(patience=5)
        history = [0.4, 0.5, 0.6, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.4]
        stopped_at = None
        for epoch, value in enumerate(history, start=1):
            stopper.update(epoch, value)
            if stopper.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 9
        assert stopper.best_epoch == 4

    def test_ties_keep_earliest_epoch(self):
        stopper = EarlyStopping(patience=3)
        assert stopper.update(1, 0.5)
        assert not stopper.update(2, 0.5)
        assert stopper.best_epoch == 1

    def test_patience_must_be_positive(self):
        with pytest.raises(ContractError):
            EarlyStopping(0)


def test_class_weights():
    weights = class_weights(np.array([0, 0, 0, 1]), 4)
    np.testing.assert_allclose(weights, [4 / 6, 2.0, 1.0, 1.0])
    np.testing.assert_allclose(class_weights(np.array([0, 1, 2, 3]), 4), np.ones(4))


class TestPhases:
    @pytest.fixture
    def trainer_and_data(self, small_run_config, small_split):
        model = build_model(small_run_config)
        sets = split_clip_sets(model, small_split, small_run_config)
        model.standardizer = fit_standardizer(sets["train"].features, model.feature_names)
        return Trainer(model, small_run_config), sets

    def test_phase1_keeps_backbone_fixed(self, trainer_and_data):
        trainer, sets = trainer_and_data
        trainer._enter_phase(1)
        backbone_before = param_copy(trainer.model, "backbone.")
        head_before = param_copy(trainer.model, "head.")
        trainer._train_epoch(sets["train"], 1, 1e-3, None)

        for name, before in backbone_before.items():
            np.testing.assert_array_equal(trainer.model.store[name].data, before, err_msg=name)
        assert any(not np.array_equal(trainer.model.store[n].data, v) for n, v in head_before.items())

    def test_phase2_updates_only_last_blocks(self, trainer_and_data):
        trainer, sets = trainer_and_data
        trainer._enter_phase(1)
        trainer._enter_phase(2)
        before = param_copy(trainer.model, "backbone.")
        trainer._train_epoch(sets["train"], 2, 1e-4, None)

        changed = {n for n, v in before.items() if not np.array_equal(trainer.model.store[n].data, v)}
        assert changed
        assert all(n.startswith(("backbone.block9.", "backbone.block10.")) for n in changed)


def test_training_is_deterministic(small_run_config, small_split):
    first = train(build_model(small_run_config), small_split, small_run_config)
    second = train(build_model(small_run_config), small_split, small_run_config)
    assert first.best_epoch == second.best_epoch
    assert [r.loss for r in first.run_log.epochs] == [r.loss for r in second.run_log.epochs]
    for name, array in first.best_state.items():
        np.testing.assert_array_equal(array, second.best_state[name])


def test_fit_restores_best_state_and_logs(tmp_path, small_run_config, small_split):
    model = build_model(small_run_config)
    result = train(model, small_split, small_run_config)
    log = result.run_log
    assert 1 <= result.best_epoch <= 3
    assert [r.epoch for r in log.epochs] == list(range(1, len(log.epochs) + 1))
    assert [r.phase for r in log.epochs] == [1, 2, 2][:len(log.epochs)]
    assert sum(r.best for r in log.epochs) == 1
    for name, array in result.best_state.items():
        np.testing.assert_array_equal(model.store.state_arrays()[name], array)

    frame = pd.read_csv(write_run_log(log, tmp_path))
    assert list(frame.columns) == ["epoch", "phase", "loss", "val_acc", "lr", "best"]
    assert frame["lr"].iloc[0] == pytest.approx(1e-3)


@pytest.mark.slow
def test_clinical_stream_learns(small_run_config, small_split):
    run_config = with_overrides(small_run_config, **{
        "training.total_epochs": 120,
        "training.phase1_epochs": 119,
        "training.phase1_lr": 1e-2,
        "training.patience": 200,
        "training.flip_prob": 0.0,
    })
    result = train(build_model(run_config, ModelStream.CLINICAL), small_split, run_config)
    losses = [r.loss for r in result.run_log.epochs]
    assert len(losses) == 120
    assert np.mean(losses[-10:]) < 0.7 * np.mean(losses[:10])


def walker_split(run_config, seed):
    data = run_config.data
    sequences = prepare_sequences(synth_generate(run_config.synth, seed=seed))
    return patient_stratified_split(sequences, data.split_fractions, run_config.seed, data.window, data.stride)


@pytest.mark.slow
def test_desk_loss_halves_within_ten_epochs():
    run_config = load_run_config(overrides={
        "data.window": 124,
        "data.stride": 124,
        "synth.clips_per_class": 14,
        "synth.num_frames": 124,
        "training.total_epochs": 10,
        "training.phase1_epochs": 9,
        "training.phase1_lr": 1e-2,
        "training.batch_size": 4,
        "training.patience": 20,
    })
    split = walker_split(run_config, seed=0)
    assert len(split.train) == 32
    result = train(build_model(run_config), split, run_config)
    losses = [r.loss for r in result.run_log.epochs]
    assert len(losses) == 10
    assert min(losses) <= 0.5 * losses[0]


@pytest.mark.slow
def test_synthetic_levels_are_separable():
    run_config = load_run_config(overrides={
        "data.window": 124,
        "data.stride": 24,
        "synth.clips_per_class": 25,
        "synth.num_frames": 148,
        "training.total_epochs": 20,
        "training.phase1_epochs": 10,
        "training.phase1_lr": 3e-3,
        "training.batch_size": 8,
        "training.patience": 20,
    })
    split = walker_split(run_config, seed=5)
    features = {part: clip_features(getattr(split, part), SELECTED_FEATURES, run_config.features)
                for part in ("train", "val", "test")}

    accuracy = {}
    for stream in ModelStream:
        model = build_model(run_config, stream)
        train(model, split, run_config, features=features)
        sets = split_clip_sets(model, split, run_config, features=features)
        accuracy[stream] = evaluate_model(model, sets["test"], name=stream.value).report.accuracy

    assert accuracy[ModelStream.FUSED] >= 0.9
    assert accuracy[ModelStream.CLINICAL] >= 0.8
    assert accuracy[ModelStream.FUSED] >= accuracy[ModelStream.SKELETON] - 0.02


class TestEvaluation:
    def test_skeleton_model_report(self, small_run_config, small_split):
        model = build_model(small_run_config, ModelStream.SKELETON)
        sets = split_clip_sets(model, small_split, small_run_config)
        assert sets["test"].features is None
        evaluation = evaluate_model(model, sets["test"], name="skeleton")
        report = evaluation.report
        assert report.fusion is None
        assert report.stream == "skeleton"
        assert sum(map(sum, report.confusion)) == len(sets["test"])
        assert list(evaluation.predictions.columns[-4:]) == [f"p_gmfcs_{k}" for k in range(1, 5)]
        assert set(evaluation.predictions["label"]) <= {1, 2, 3, 4}

    def test_empty_sets_are_rejected(self, small_run_config, small_split):
        model = build_model(small_run_config, ModelStream.SKELETON)
        empty = ClipSet(clips=[], features=None, labels=np.zeros(0, dtype=np.int64))
        with pytest.raises(ContractError):
            evaluate_model(model, empty)
        sets = split_clip_sets(model, small_split, small_run_config)
        with pytest.raises(ContractError):
            Trainer(model, small_run_config).fit(sets["train"], empty)
