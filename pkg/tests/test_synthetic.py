import numpy as np
import pytest

from gait_fusion.constants import GMFCS_LEVELS, NUM_COCO_KEYPOINTS, PoseFormat
from gait_fusion.core.synthetic import WalkerParams, max_separations, synth_generate, synth_sequence, walker_truth
from gait_fusion.models.pose import SyntheticSpec


def test_counts_and_labels():
    sequences = synth_generate(SyntheticSpec(clips_per_class=3, num_frames=30), seed=0)
    assert len(sequences) == 12
    assert [s.label for s in sequences] == [level for level in GMFCS_LEVELS for _ in range(3)]
    assert len({s.patient_id for s in sequences}) == 12
    for seq in sequences:
        assert seq.format is PoseFormat.COCO17
        assert seq.frames.shape == (30, NUM_COCO_KEYPOINTS, 3)
        assert seq.truth is not None


def test_sequence_stream_depends_only_on_its_key():
    small = synth_generate(SyntheticSpec(clips_per_class=2, num_frames=30), seed=4)
    large = synth_generate(SyntheticSpec(clips_per_class=5, num_frames=30), seed=4)
    np.testing.assert_array_equal(small[0].frames, large[0].frames)
    np.testing.assert_array_equal(small[2].frames, large[5].frames)
    other_seed = synth_generate(SyntheticSpec(clips_per_class=2, num_frames=30), seed=5)
    assert not np.array_equal(small[0].frames, other_seed[0].frames)


def test_ground_truth_follows_class_parameters(clean_spec):
    for level in GMFCS_LEVELS:
        truth = synth_sequence(clean_spec, level, 0, seed=0).truth
        k = level - 1
        assert truth.cadence_spm == pytest.approx(120.0 * clean_spec.stride_freq_hz[k])
        assert truth.knee_rom_deg_l == pytest.approx(clean_spec.knee_rom_deg[k])
        assert truth.knee_rom_deg_r == pytest.approx(clean_spec.knee_rom_deg[k] * (1 - clean_spec.asymmetry[k]))
        assert truth.hip_rom_deg_l == pytest.approx(clean_spec.hip_rom_deg[k])


def test_severity_shortens_steps(clean_spec):
    steps = [synth_sequence(clean_spec, level, 0, seed=0).truth.step_len_norm for level in GMFCS_LEVELS]
    assert steps == sorted(steps, reverse=True)


def test_symmetric_walker_has_equal_step_separations():
    params = WalkerParams(stride_freq_hz=1.0, hip_rom=40.0, knee_rom=60.0, asymmetry=0.0, trunk_lean=2.0,
                          torso_px=160.0, phase=0.3, direction=1)
    left, right = max_separations(params)
    assert left == pytest.approx(right, rel=1e-3)
    assert walker_truth(params).walking_speed_norm == pytest.approx((left + right) * 1.0)


def test_pixel_noise_statistics(clean_spec):
    noisy_spec = clean_spec.model_copy(update={"noise_sigma_px": 2.0})
    clean = synth_sequence(clean_spec, 2, 0, seed=9)
    noisy = synth_sequence(noisy_spec, 2, 0, seed=9)
    noise = noisy.frames[..., :2] - clean.frames[..., :2]
    assert abs(noise.mean()) < 0.1
    assert noise.std() == pytest.approx(2.0, abs=0.1)


def test_confidences_are_high():
    seq = synth_generate(SyntheticSpec(clips_per_class=1, num_frames=20), seed=0)[0]
    assert seq.frames[..., 2].min() >= 0.8
    assert seq.frames[..., 2].max() <= 1.0


def test_spec_rejects_wrong_class_count():
    with pytest.raises(ValueError):
        SyntheticSpec(stride_freq_hz=[1.0, 0.9])
