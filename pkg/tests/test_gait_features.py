import numpy as np
import pandas as pd
import pytest

from gait_fusion.config import FeatureConfig
from gait_fusion.constants import FEATURE_NAMES, SELECTED_FEATURES
from gait_fusion.core.gait_features import (
    detect_gait_events,
    extract_all,
    extract_batch,
    features_frame,
    fit_standardizer,
    apply_standardizer,
    flip_feature_vector,
    flip_permutation,
    joint_angle_series,
    read_features_csv,
    rom,
    select_subset,
    smooth_series,
    symmetry_index,
    write_features_csv,
)
from gait_fusion.core.pose_data import augment_flip
from gait_fusion.core.synthetic import synth_sequence
from gait_fusion.exceptions import ConfigurationError, ContractError, DataValidationError
from gait_fusion.models.features import FeatureSubset, GaitEvents
from gait_fusion.models.pose import SyntheticSpec


def feature(vector, name):
    return vector[name]


class TestElementaryMeasures:
    def test_joint_angle(self):
        center = np.zeros((3, 2))
        a = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 1.0], [-1.0, 0.0], [1.0, 1.0]])
        angles = joint_angle_series(center, a, b)
        np.testing.assert_allclose(angles[:2], [90.0, 180.0])
        assert np.isnan(angles[2])

    def test_rom(self):
        assert rom(np.array([10.0, 60.0, 35.0])) == 50.0
        with pytest.raises(ContractError):
            rom(np.array([]))

    def test_symmetry_index(self):
        assert symmetry_index(10.0, 10.0) == 0.0
        assert symmetry_index(12.0, 8.0) == pytest.approx(40.0)
        assert symmetry_index(0.0, 0.0) == 0.0
        with pytest.raises(ContractError):
            symmetry_index(-1.0, 2.0)

    def test_smoothing_keeps_slow_signals(self):
        t = np.arange(120) / 30.0
        signal = np.sin(2 * np.pi * 1.0 * t)[:, None]
        smoothed = smooth_series(signal, 30.0, 6.0)
        np.testing.assert_allclose(smoothed[10:-10], signal[10:-10], atol=1e-2)
        assert smooth_series(signal, 30.0, 0.0) is signal


class TestSyntheticOracle:
    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    def test_joint_rom_matches_generator(self, make_clip, clean_spec, level):
        clip = make_clip(level=level)
        truth = synth_sequence(clean_spec, level, 0, seed=0).truth
        v = extract_all(clip)
        assert feature(v, "knee_rom_l") == pytest.approx(truth.knee_rom_deg_l, rel=0.02)
        assert feature(v, "knee_rom_r") == pytest.approx(truth.knee_rom_deg_r, rel=0.02)
        assert feature(v, "hip_rom_l") == pytest.approx(truth.hip_rom_deg_l, rel=0.02)
        assert feature(v, "hip_rom_r") == pytest.approx(truth.hip_rom_deg_r, rel=0.02)

    def test_cadence_and_events_at_one_hertz(self, make_clip):
        clip = make_clip(level=1)
        events = detect_gait_events(clip)
        assert events.valid
        intervals = np.concatenate([events.left_intervals, events.right_intervals])
        assert np.all(np.abs(intervals - 30) <= 2)
        assert feature(extract_all(clip), "cadence_spm") == pytest.approx(120.0, rel=0.05)
        assert feature(extract_all(clip), "gait_cycle_dur_s") == pytest.approx(1.0, rel=0.05)

    @pytest.mark.parametrize("level", [1, 4])
    def test_time_reversal_mirrors_events(self, make_clip, level):
        clip = make_clip(level=level)
        reversed_clip = clip.model_copy(update={"X": clip.X[::-1].copy(), "hip_track": clip.hip_track[::-1].copy()})
        forward = detect_gait_events(clip)
        backward = detect_gait_events(reversed_clip)
        last = clip.X.shape[0] - 1
        for reversed_side, forward_side in ((backward.left, forward.left), (backward.right, forward.right)):
            mirrored = np.sort(last - forward_side)
            assert reversed_side.shape == mirrored.shape
            # a peak sitting between two frames may round to either one
            assert np.all(np.abs(reversed_side - mirrored) <= 1)
        np.testing.assert_allclose(np.sort(backward.left_intervals), np.sort(forward.left_intervals), atol=2)

    @pytest.mark.parametrize("level", [1, 3])
    def test_step_length_matches_generator(self, make_clip, clean_spec, level):
        truth = synth_sequence(clean_spec, level, 0, seed=0).truth
        v = extract_all(make_clip(level=level))
        assert feature(v, "step_len_norm") == pytest.approx(truth.step_len_norm, rel=0.05)
        assert feature(v, "walking_speed_norm") == pytest.approx(truth.walking_speed_norm, rel=0.05)

    def test_symmetric_walker_has_small_symmetry_indices(self, make_clip):
        v = extract_all(make_clip(level=1))
        for name in ("hip_rom_sym", "knee_rom_sym", "step_len_sym"):
            assert feature(v, name) < 5.0

    def test_asymmetric_walker_is_flagged(self, make_clip):
        v = extract_all(make_clip(level=4))
        assert feature(v, "knee_rom_sym") > 20.0

    def test_fifty_jittered_walkers(self, make_clip):
        spec = SyntheticSpec(clips_per_class=1, noise_sigma_px=0.0, jitter=0.05)
        for seed in range(50):
            truth = synth_sequence(spec, 1, 0, seed=seed).truth
            v = extract_all(make_clip(level=1, seed=seed, spec=spec))
            assert feature(v, "cadence_spm") == pytest.approx(truth.cadence_spm, rel=0.05), seed
            assert feature(v, "step_len_norm") == pytest.approx(truth.step_len_norm, rel=0.05), seed
            for side in ("l", "r"):
                assert feature(v, f"knee_rom_{side}") == pytest.approx(getattr(truth, f"knee_rom_deg_{side}"), rel=0.02)
                assert feature(v, f"hip_rom_{side}") == pytest.approx(getattr(truth, f"hip_rom_deg_{side}"), rel=0.02)
            for name in ("hip_rom_sym", "knee_rom_sym", "step_len_sym"):
                assert feature(v, name) < 5.0, (seed, name)

    def test_fifty_noisy_walkers(self, make_clip):
        # max - min of a noisy angle overshoots, so ROM gets a looser bound than the clean case
        spec = SyntheticSpec(clips_per_class=1, noise_sigma_px=1.0, jitter=0.05)
        for seed in range(50):
            truth = synth_sequence(spec, 1, 0, seed=seed).truth
            v = extract_all(make_clip(level=1, seed=seed, spec=spec))
            assert feature(v, "cadence_spm") == pytest.approx(truth.cadence_spm, rel=0.05), seed
            assert feature(v, "step_len_norm") == pytest.approx(truth.step_len_norm, rel=0.05), seed
            assert feature(v, "knee_rom_l") == pytest.approx(truth.knee_rom_deg_l, rel=0.1), seed
            assert feature(v, "hip_rom_l") == pytest.approx(truth.hip_rom_deg_l, rel=0.1), seed


class TestValidity:
    def test_complete_clip_is_fully_valid(self, make_clip):
        v = extract_all(make_clip(level=1))
        assert v.valid.all()
        assert v.validity_bitmask == 2 ** len(FEATURE_NAMES) - 1

    def test_short_clip_masks_temporal_features(self, make_clip):
        v = extract_all(make_clip(level=4, window=20))
        for name in ("cadence_spm", "gait_cycle_dur_s", "step_len_norm", "walking_speed_norm", "timing_sym"):
            index = FEATURE_NAMES.index(name)
            assert not v.valid[index]
            assert v.values[index] == 0.0
        assert v.valid[FEATURE_NAMES.index("knee_rom_l")]

    def test_events_need_two_per_side(self):
        events = GaitEvents(left=[3], right=[5, 20])
        assert not events.valid
        with pytest.raises(ValueError):
            GaitEvents(left=[5, 3], right=[1, 2])


def test_flip_swaps_bilateral_features(clean_spec, make_clip):
    spec = clean_spec.model_copy(update={"noise_sigma_px": 2.0})
    clip = make_clip(level=3, spec=spec)
    original = extract_all(clip)
    flipped = extract_all(augment_flip(clip))
    np.testing.assert_allclose(flipped.values, flip_feature_vector(original.values), atol=1e-6)
    assert feature(flipped, "hip_rom_l") == pytest.approx(feature(original, "hip_rom_r"), abs=1e-6)


def test_flip_permutation_only_touches_present_pairs():
    names = ["hip_rom_l", "cadence_spm", "hip_rom_r", "knee_rom_l"]
    np.testing.assert_array_equal(flip_permutation(names), [2, 1, 0, 3])


class TestSubsetsAndStandardizer:
    def test_subset_order_and_unknown_names(self, make_clip):
        v = extract_all(make_clip(level=2))
        selected = select_subset(v, FeatureSubset())
        assert selected.shape == (14,)
        assert selected[0] == feature(v, SELECTED_FEATURES[0])
        assert select_subset(v, ["timing_sym", "hip_rom_l"]).tolist() == [feature(v, "timing_sym"),
                                                                          feature(v, "hip_rom_l")]
        with pytest.raises(ConfigurationError):
            select_subset(v, ["stride_width"])

    def test_standardizer_centres_training_rows(self, rng):
        names = ["a", "b", "c"]
        matrix = np.column_stack([rng.normal(5.0, 3.0, 50), rng.normal(-2.0, 0.1, 50), np.full(50, 7.0)])
        standardizer = fit_standardizer(matrix, names)
        z = apply_standardizer(standardizer, matrix)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(z[:, :2].std(axis=0), 1.0, atol=1e-6)
        np.testing.assert_array_equal(z[:, 2], 0.0)
        with pytest.raises(ContractError):
            apply_standardizer(standardizer, matrix[:, :2])
        with pytest.raises(ContractError):
            fit_standardizer(np.zeros((0, 3)), names)


def test_features_csv(tmp_path, make_clip):
    clips = [make_clip(level=1), make_clip(level=2)]
    frame = features_frame(clips, extract_batch(clips, FeatureConfig()))
    target = write_features_csv(frame, tmp_path / "features.csv")
    loaded = read_features_csv(target)
    assert list(loaded["label"]) == [1, 2]
    np.testing.assert_allclose(loaded[FEATURE_NAMES].to_numpy(), frame[FEATURE_NAMES].to_numpy(), rtol=1e-9)

    pd.DataFrame({"patient_id": ["p"], "hip_rom_l": [1.0]}).to_csv(tmp_path / "bad.csv", index=False)
    with pytest.raises(DataValidationError):
        read_features_csv(tmp_path / "bad.csv")
