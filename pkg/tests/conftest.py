import numpy as np
import pytest

from gait_fusion.config import RunConfig, load_run_config
from gait_fusion.core import autodiff as ad
from gait_fusion.core.pose_data import normalize_coords, patient_stratified_split, prepare_sequences, slide_windows
from gait_fusion.core.synthetic import synth_generate, synth_sequence
from gait_fusion.models.pose import SyntheticSpec


@pytest.fixture
def float64():
    with ad.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def clean_spec():
    """Noise-free walker without per-sequence jitter, so ground truth is exact."""
    return SyntheticSpec(clips_per_class=2, noise_sigma_px=0.0, jitter=0.0)


@pytest.fixture
def make_clip(clean_spec):
    def _make(level: int = 1, index: int = 0, seed: int = 0, window: int = 124, spec: SyntheticSpec = None):
        seq = normalize_coords(synth_sequence(spec or clean_spec, level, index, seed))
        return slide_windows(seq, window, window)[0]
    return _make


@pytest.fixture
def small_run_config() -> RunConfig:
    return load_run_config(overrides={
        "data.window": 32,
        "data.stride": 16,
        "training.total_epochs": 3,
        "training.phase1_epochs": 1,
        "training.batch_size": 8,
        "synth.clips_per_class": 3,
        "synth.num_frames": 48,
    })


@pytest.fixture
def small_split(small_run_config):
    data = small_run_config.data
    sequences = prepare_sequences(synth_generate(small_run_config.synth, seed=3))
    return patient_stratified_split(sequences, data.split_fractions, 0, data.window, data.stride)
