import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import click
import numpy as np
import pandas as pd
import typer
from typer.core import TyperGroup

from .config import RunConfig, load_run_config, write_resolved_config
from .constants import (
    CHECKPOINT_FILE,
    EVAL_REPORT_FILE,
    FEATURES_FILE,
    SUMMARY_FILE,
    FeatureSet,
    FusionMode,
    ModelStream,
    PoseFormat,
    Preset,
)
from .core.attribution import (
    grad_cam_keypoints,
    mean_attribution,
    occlusion_importance,
    rank_correlation,
    write_attribution_report,
)
from .core.checkpoint import check_feature_names, load_checkpoint, save_checkpoint
from .core.fusion import GaitSeverityModel
from .core.gait_features import extract_batch, features_frame, write_features_csv
from .core.metrics import level_columns, row_normalized_percent, write_eval_outputs
from .core.pose_data import (
    distribution_frame,
    load_pose_jsonl,
    patient_stratified_split,
    prepare_sequences,
    write_pose_jsonl,
    write_windows_jsonl,
)
from .core.synthetic import synth_generate
from .core.training import clip_features, evaluate_model, make_clip_set, train, write_run_log
from .exceptions import CheckpointError, ConfigurationError, ContractError, DataValidationError
from .models.features import FeatureSubset
from .models.pose import DatasetSplit
from .models.report import EvalReport
from .utils.json_utils import JSONProcessor
from .utils.logger import set_level, setup_logger

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3


class GaitFusionGroup(TyperGroup):
    """Command group with the fixed exit-code taxonomy (usage errors exit 1)."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            code = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.UsageError as e:
            e.show()
            code = EXIT_USAGE
        except click.exceptions.Abort:
            typer.echo("Aborted!", err=True)
            code = EXIT_USAGE
        code = code if isinstance(code, int) else EXIT_OK
        if standalone_mode:
            sys.exit(code)
        return code


app = typer.Typer(cls=GaitFusionGroup, help="GMFCS gait severity classification from pose keypoints")
logger = setup_logger(__name__)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Map package errors onto exit codes."""
    try:
        yield
    except CheckpointError as e:
        _fail(e, EXIT_CHECKPOINT)
    except (DataValidationError, ContractError, FileNotFoundError) as e:
        _fail(e, EXIT_DATA)
    except ConfigurationError as e:
        _fail(e, EXIT_USAGE)


def _fail(error: Exception, code: int) -> None:
    logger.error(f"Error: {error}")
    typer.echo(f"Error: {error}", err=True)
    raise typer.Exit(code)


def _value(option: Any) -> Any:
    return option.value if option is not None and hasattr(option, "value") else option


def _resolve_config(config: Optional[str], seed: Optional[int], preset: Optional[Preset],
                    fusion: Optional[FusionMode], features: Optional[FeatureSet], fps: Optional[float],
                    stream: Optional[ModelStream] = None, base: Optional[Dict[str, Any]] = None,
                    debug: bool = False, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
    if debug:
        set_level(logging.DEBUG)
    overrides = {
        "seed": seed,
        "model.preset": _value(preset),
        "model.fusion": _value(fusion),
        "model.stream": _value(stream),
        "features.feature_set": _value(features),
        "data.default_fps": fps,
    }
    overrides.update(extra or {})
    run_config = load_run_config(config, overrides, base=base)
    logger.debug(f"Resolved config: {run_config.model_dump(mode='json')}")
    return run_config


def _load_split(input_path: str, run_config: RunConfig) -> DatasetSplit:
    data = run_config.data
    sequences = prepare_sequences(load_pose_jsonl(input_path, data.default_fps), data.normalize)
    return patient_stratified_split(sequences, data.split_fractions, run_config.seed, data.window, data.stride,
                                    data.min_conf, data.min_frac)


def _subset_names(run_config: RunConfig) -> List[str]:
    return FeatureSubset.for_set(run_config.features.feature_set).names


# shared options
CONFIG = typer.Option(None, "--config", help="JSON run configuration")
SEED = typer.Option(None, "--seed", help="Run seed")
PRESET = typer.Option(None, "--preset", help="Backbone width preset")
FUSION = typer.Option(None, "--fusion", help="Fusion mode")
FEATURES = typer.Option(None, "--features", help="Clinical feature set")
FPS = typer.Option(None, "--fps", help="Frame rate for records without one")
STREAM = typer.Option(None, "--stream", help="Model streams: fused, skeleton or clinical")
DEBUG = typer.Option(False, "--debug", help="Enable debug logging")


@app.command()
def convert(
    input_path: str = typer.Argument(..., help="Pose JSONL (BODY25 or COCO17)"),
    out: str = typer.Option(..., "--out", help="Output pose JSONL"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Convert pose records to normalized COCO-17."""
    with _exit_codes():
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, debug=debug)
        sequences = load_pose_jsonl(input_path, run_config.data.default_fps)
        converted = sum(1 for s in sequences if s.format is PoseFormat.BODY25)
        prepared = prepare_sequences(sequences, run_config.data.normalize)
        written = write_pose_jsonl(prepared, out)
        write_resolved_config(run_config, str(Path(out).parent))
        typer.echo(f"Read {len(sequences)} records: {converted} BODY25 converted, "
                   f"{len(sequences) - converted} COCO17 passed through; wrote {written} to {out}")


@app.command()
def window(
    input_path: str = typer.Argument(..., help="Pose JSONL"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Cut quality-filtered windows and split patients into train/val/test."""
    with _exit_codes():
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, debug=debug)
        split = _load_split(input_path, run_config)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        count = write_windows_jsonl(split, out_dir / "windows.jsonl")
        table = distribution_frame(split)
        table.to_csv(out_dir / "distribution.csv", float_format="%.4f")
        write_resolved_config(run_config, out)
        for warning in split.warnings:
            typer.echo(f"Warning: {warning}")
        typer.echo(f"Wrote {count} windows to {out_dir / 'windows.jsonl'}")
        typer.echo(table.to_string(float_format=lambda v: f"{v:.3f}"))


@app.command("features")
def features_cmd(
    input_path: str = typer.Argument(..., help="Pose JSONL"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Extract the 24 clinical gait features for every window."""
    with _exit_codes():
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, debug=debug)
        split = _load_split(input_path, run_config)
        frames = []
        for part in ("train", "val", "test"):
            clips = getattr(split, part)
            frame = features_frame(clips, extract_batch(clips, run_config.features))
            frame.insert(0, "split", part)
            frames.append(frame)
        table = pd.concat(frames, ignore_index=True)
        target = write_features_csv(table, Path(out) / FEATURES_FILE)
        write_resolved_config(run_config, out)
        typer.echo(f"Wrote features of {len(table)} clips to {target}")


@app.command("train")
def train_cmd(
    input_path: str = typer.Argument(..., help="Pose JSONL"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    stream: Optional[ModelStream] = STREAM,
    debug: bool = DEBUG,
):
    """Run two-phase training and save the best checkpoint."""
    with _exit_codes():
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, stream, debug=debug)
        split = _load_split(input_path, run_config)
        names = _subset_names(run_config)
        model = GaitSeverityModel(run_config.model, len(names), seed=run_config.seed, feature_names=names)
        result = train(model, split, run_config, progress=True)
        write_resolved_config(run_config, out)
        target = save_checkpoint(Path(out) / CHECKPOINT_FILE, model, run_config, result.optimizer,
                                 {"seed": result.seed, "best_epoch": result.best_epoch})
        write_run_log(result.run_log, out)
        typer.echo(f"Best epoch {result.best_epoch} with validation accuracy {result.run_log.best_val_acc:.4f}; "
                   f"checkpoint at {target}")


@app.command("eval")
def eval_cmd(
    input_path: str = typer.Argument(..., help="Pose JSONL"),
    checkpoint: str = typer.Option(..., "--checkpoint", help="Checkpoint written by train"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    part: str = typer.Option("test", "--part", help="Split part to evaluate: train, val or test"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Evaluate a checkpoint and write the evaluation report files."""
    if part not in ("train", "val", "test"):
        raise click.BadParameter(f"unknown split part {part}", param_hint="--part")
    with _exit_codes():
        ckpt = load_checkpoint(checkpoint)
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, base=ckpt.header.config,
                                     debug=debug)
        names = _subset_names(run_config)
        check_feature_names(ckpt, names)
        if run_config.model != ckpt.run_config.model:
            raise CheckpointError("checkpoint model settings differ from the requested configuration")
        model, _ = ckpt.restore()

        clips = getattr(_load_split(input_path, run_config), part)
        raw = clip_features(clips, names, run_config.features) if model.uses_clinical else None
        data = make_clip_set(clips, raw)
        name = f"{model.stream.value}-{model.fusion.value}-{run_config.features.feature_set.value}"
        evaluation = evaluate_model(model, data, name=name, feature_set=run_config.features.feature_set.value)
        write_eval_outputs(evaluation.report, out, evaluation.probabilities, data.labels, evaluation.predictions)
        write_resolved_config(run_config, out)
        _echo_report(evaluation.report)


def _echo_report(report: EvalReport) -> None:
    typer.echo(f"{report.name}: accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f}, "
               f"linear kappa {report.linear_kappa:.4f}")
    recalls = ", ".join(
        f"{column} {'n/a' if r is None else f'{r:.3f}'}"
        for column, r in zip(level_columns(report.num_classes), report.per_class_recall)
    )
    typer.echo(f"Per-class recall: {recalls}")
    if report.patient_accuracy is not None:
        typer.echo(f"Patient-level accuracy: {report.patient_accuracy:.4f}")


@app.command()
def attribute(
    input_path: str = typer.Argument(..., help="Pose JSONL"),
    checkpoint: str = typer.Option(..., "--checkpoint", help="Checkpoint written by train"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    mode: Optional[str] = typer.Option(None, "--mode", help="clip or mean"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Grad-CAM and occlusion keypoint attributions over the test clips."""
    if mode not in (None, "clip", "mean"):
        raise click.BadParameter(f"unknown mode {mode}", param_hint="--mode")
    with _exit_codes():
        ckpt = load_checkpoint(checkpoint)
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, base=ckpt.header.config,
                                     debug=debug)
        if mode is not None:
            run_config = run_config.model_copy(update={
                "attribution": run_config.attribution.model_copy(update={"mode": mode})})
        names = _subset_names(run_config)
        check_feature_names(ckpt, names)
        model, _ = ckpt.restore()
        settings = run_config.attribution

        clips = _load_split(input_path, run_config).test
        if settings.max_clips is not None:
            clips = clips[:settings.max_clips]
        if not clips:
            raise ContractError("no test clips to attribute")
        raw = clip_features(clips, names, run_config.features) if model.uses_clinical else None

        cams, occlusions = [], []
        for i, clip in enumerate(clips):
            target = clip.label - 1 if settings.target == "true" else None
            features_i = None if raw is None else raw[i]
            cams.append(grad_cam_keypoints(model, clip, features_i, target, settings.temporal_agg))
            occlusions.append(occlusion_importance(model, clip, features_i, target))
        rhos = [rank_correlation(a.scores, b.scores) for a, b in zip(cams, occlusions)]

        maps = cams + occlusions
        if settings.mode == "mean":
            maps += [mean_attribution(cams), mean_attribution(occlusions)]
        write_attribution_report(maps, out)
        write_resolved_config(run_config, out)
        typer.echo(f"Attributed {len(clips)} clips; mean Grad-CAM/occlusion Spearman rho {np.mean(rhos):.3f}")


@app.command()
def synth(
    out: str = typer.Option(..., "--out", help="Output pose JSONL"),
    clips_per_class: Optional[int] = typer.Option(None, "--clips-per-class", help="Sequences per GMFCS level"),
    config: Optional[str] = CONFIG,
    seed: Optional[int] = SEED,
    preset: Optional[Preset] = PRESET,
    fusion: Optional[FusionMode] = FUSION,
    features: Optional[FeatureSet] = FEATURES,
    fps: Optional[float] = FPS,
    debug: bool = DEBUG,
):
    """Generate labelled synthetic walkers with ground-truth gait parameters."""
    with _exit_codes():
        run_config = _resolve_config(config, seed, preset, fusion, features, fps, debug=debug,
                                     extra={"synth.clips_per_class": clips_per_class, "synth.fps": fps})
        sequences = synth_generate(run_config.synth, run_config.seed)
        written = write_pose_jsonl(sequences, out)
        truth = pd.DataFrame([{"video_id": s.video_id, "gmfcs": s.label, **s.truth.model_dump()} for s in sequences])
        truth.to_csv(Path(out).with_suffix(".truth.csv"), index=False, float_format="%.8g")
        write_resolved_config(run_config, str(Path(out).parent))
        typer.echo(f"Wrote {written} synthetic sequences to {out}")


@app.command()
def report(
    eval_dirs: List[str] = typer.Argument(..., help="Directories written by eval"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    distribution: Optional[str] = typer.Option(None, "--distribution", help="distribution.csv written by window"),
    debug: bool = DEBUG,
):
    """Row-normalized confusion tables, ROC point files and a summary table."""
    if debug:
        set_level(logging.DEBUG)
    with _exit_codes():
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for eval_dir in eval_dirs:
            source = Path(eval_dir) / EVAL_REPORT_FILE
            if not source.is_file():
                raise DataValidationError(f"missing evaluation report {source}")
            report_data = EvalReport.model_validate(JSONProcessor.read_json(source))
            columns = level_columns(report_data.num_classes)
            percent = pd.DataFrame(row_normalized_percent(report_data.confusion), index=columns, columns=columns)
            percent.index.name = "truth"
            percent.to_csv(out_dir / f"confusion_pct_{report_data.name}.csv", float_format="%.2f")
            for roc in sorted(Path(eval_dir).glob("roc_gmfcs_*.csv")):
                pd.read_csv(roc).to_csv(out_dir / f"{report_data.name}_{roc.name}", index=False, float_format="%.8g")
            rows.append({
                "config": report_data.name,
                "stream": report_data.stream,
                "fusion": report_data.fusion or "-",
                "features": report_data.feature_set or "-",
                "Acc": report_data.accuracy,
                "F1_w": report_data.weighted_f1,
                "kappa_l": report_data.linear_kappa,
            })
        summary = pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.4f}")
        if distribution is not None:
            dist_path = Path(distribution)
            if not dist_path.is_file():
                raise DataValidationError(f"missing distribution table {dist_path}")
            table = pd.read_csv(dist_path, index_col=0)
            summary += "\n\n" + table.to_string(float_format=lambda v: f"{v:.3f}")
        (out_dir / SUMMARY_FILE).write_text(summary + "\n", encoding="utf-8")
        typer.echo(summary)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
