import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from gait_fusion.cli import app
from gait_fusion.core.pose_data import write_pose_jsonl
from gait_fusion.core.synthetic import synth_generate
from gait_fusion.models.pose import SyntheticSpec

runner = CliRunner()

SMALL_CONFIG = {
    "data": {"window": 32, "stride": 16},
    "training": {"total_epochs": 2, "phase1_epochs": 1, "batch_size": 8},
    "synth": {"clips_per_class": 3, "num_frames": 48},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


@pytest.fixture
def pose_file(tmp_path, config_file):
    target = tmp_path / "data" / "synth.jsonl"
    result = runner.invoke(app, ["synth", "--out", str(target), "--config", config_file])
    assert result.exit_code == 0, result.output
    return str(target)


@pytest.fixture
def trained_run(tmp_path, pose_file, config_file):
    out = tmp_path / "run"
    result = runner.invoke(app, ["train", pose_file, "--out", str(out), "--config", config_file])
    assert result.exit_code == 0, result.output
    return out


def test_synth_writes_sequences_and_truth(tmp_path):
    target = tmp_path / "walkers.jsonl"
    result = runner.invoke(app, ["synth", "--out", str(target), "--clips-per-class", "10", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert len(target.read_text().splitlines()) == 40
    truth = pd.read_csv(tmp_path / "walkers.truth.csv")
    assert len(truth) == 40
    assert sorted(truth["gmfcs"].unique()) == [1, 2, 3, 4]
    assert (tmp_path / "resolved_config.json").is_file()


def test_corrupt_line_exits_with_data_error(tmp_path):
    source = tmp_path / "poses.jsonl"
    write_pose_jsonl(synth_generate(SyntheticSpec(clips_per_class=1, num_frames=10)), source)
    lines = source.read_text().splitlines()
    source.write_text(lines[0] + "\n{not json\n")
    result = runner.invoke(app, ["convert", str(source), "--out", str(tmp_path / "out.jsonl")])
    assert result.exit_code == 2
    assert "line 2" in result.output


def test_convert_passes_coco_records_through(tmp_path, pose_file):
    target = tmp_path / "converted.jsonl"
    result = runner.invoke(app, ["convert", pose_file, "--out", str(target)])
    assert result.exit_code == 0, result.output
    assert "12 COCO17 passed through" in result.output
    assert len(target.read_text().splitlines()) == 12


def test_window_and_features(tmp_path, pose_file, config_file):
    windows = tmp_path / "windows"
    result = runner.invoke(app, ["window", pose_file, "--out", str(windows), "--config", config_file])
    assert result.exit_code == 0, result.output
    assert len((windows / "windows.jsonl").read_text().splitlines()) == 24
    assert (windows / "distribution.csv").is_file()

    features = tmp_path / "features"
    result = runner.invoke(app, ["features", pose_file, "--out", str(features), "--config", config_file])
    assert result.exit_code == 0, result.output
    table = pd.read_csv(features / "features.csv")
    assert len(table) == 24
    assert set(table["split"]) == {"train", "val", "test"}
    assert "timing_sym" in table.columns


def test_train_eval_report(tmp_path, trained_run, pose_file, config_file):
    assert (trained_run / "model.ckpt").is_file()
    log = pd.read_csv(trained_run / "run_log.csv")
    assert list(log["epoch"]) == [1, 2]

    evaluation = tmp_path / "eval"
    result = runner.invoke(app, ["eval", pose_file, "--checkpoint", str(trained_run / "model.ckpt"),
                                 "--out", str(evaluation), "--config", config_file])
    assert result.exit_code == 0, result.output
    assert "linear kappa" in result.output
    report = json.loads((evaluation / "eval_report.json").read_text())
    assert sum(map(sum, report["confusion"])) == 8
    assert (evaluation / "predictions.csv").is_file()

    summary_dir = tmp_path / "summary"
    result = runner.invoke(app, ["report", str(evaluation), "--out", str(summary_dir)])
    assert result.exit_code == 0, result.output
    assert report["name"] in (summary_dir / "summary.txt").read_text()
    percent = pd.read_csv(summary_dir / f"confusion_pct_{report['name']}.csv", index_col="truth")
    for total in percent.sum(axis=1):
        assert total == pytest.approx(100.0, abs=0.1)


def test_attribute_mean_mode(tmp_path, trained_run, pose_file, config_file):
    out = tmp_path / "attr"
    result = runner.invoke(app, ["attribute", pose_file, "--checkpoint", str(trained_run / "model.ckpt"),
                                 "--out", str(out), "--config", config_file, "--mode", "mean"])
    assert result.exit_code == 0, result.output
    assert "Attributed 8 clips" in result.output
    regions = pd.read_csv(out / "attribution_regions.csv")
    assert regions["method"].value_counts().to_dict() == {
        "grad_cam": 8, "occlusion": 8, "grad_cam_mean": 1, "occlusion_mean": 1}
    keypoints = pd.read_csv(out / "attribution.csv")
    assert len(keypoints) == 18 * 17
    assert (keypoints["score"] >= 0).all()

    bad = runner.invoke(app, ["attribute", pose_file, "--checkpoint", str(trained_run / "model.ckpt"),
                              "--out", str(out), "--mode", "sum"])
    assert bad.exit_code == 1


def test_eval_rejects_other_feature_set(tmp_path, trained_run, pose_file, config_file):
    result = runner.invoke(app, ["eval", pose_file, "--checkpoint", str(trained_run / "model.ckpt"),
                                 "--out", str(tmp_path / "eval"), "--config", config_file, "--features", "all24"])
    assert result.exit_code == 3
    assert "features" in result.output


def test_missing_checkpoint_exits_3(tmp_path, pose_file):
    result = runner.invoke(app, ["eval", pose_file, "--checkpoint", str(tmp_path / "none.ckpt"),
                                 "--out", str(tmp_path / "eval")])
    assert result.exit_code == 3


def test_missing_input_exits_2(tmp_path):
    result = runner.invoke(app, ["convert", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o.jsonl")])
    assert result.exit_code == 2


def test_invalid_config_exits_1(tmp_path, pose_file):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"training": {"batch_size": 0}}))
    result = runner.invoke(app, ["window", pose_file, "--out", str(tmp_path / "w"), "--config", str(bad)])
    assert result.exit_code == 1
    assert "Error" in result.output


def test_usage_errors_exit_1(tmp_path, pose_file):
    assert runner.invoke(app, ["window", pose_file, "--bogus"]).exit_code == 1
    result = runner.invoke(app, ["eval", pose_file, "--checkpoint", "x", "--out", str(tmp_path), "--part", "dev"])
    assert result.exit_code == 1


def test_report_needs_eval_outputs(tmp_path):
    result = runner.invoke(app, ["report", str(tmp_path / "nowhere"), "--out", str(tmp_path / "summary")])
    assert result.exit_code == 2
    assert "missing evaluation report" in result.output
