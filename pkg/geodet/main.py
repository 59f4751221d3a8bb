"""
geodet command line
===================

Subcommands: gen, cluster, weights, train-toy, detect, eval, sweep, trace, plot.

Run configuration precedence, highest first: command-line flags, the
``--config`` file (flat key=value), built-in defaults. Every command writes
JSON (PLY for scenes); logs go to stderr.

Exit codes: 0 success, 1 validation or configuration error, 2 I/O error.
"""

import functools
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import typer
from pydantic import ValidationError as PydanticValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from geodet.config.settings import RunConfig, load_run_config, settings
from geodet.core.exceptions import ConfigurationError, GeoDetException
from geodet.core.geometry_weights import compute_geometry_weights
from geodet.core.superpoint_aggregation import cluster_voxel_grid
from geodet.integrations.pointcloud_io import (
    dump_detections, parse_detections, parse_ground_truth, read_annotation, read_point_cloud,
    read_superpoints, write_bytes, write_superpoints
)
from geodet.models.detection_models import SceneAnnotation
from geodet.models.scene_models import SceneSpec, SuiteEntry
from geodet.services.checkpoint_service import read_checkpoint, write_checkpoint
from geodet.services.detection_service import DetectionService
from geodet.services.evaluation_service import compute_map
from geodet.services.scene_generator import SuiteScene, generate_suite, load_suite
from geodet.services.sweep_service import cmd_sweep, evaluate_trained, write_sweep
from geodet.services.trace_service import cmd_pipeline_trace
from geodet.services.training_service import trace_path_for, train_toy, write_trace
from geodet.utils.plotting import render_plot

logger = logging.getLogger(__name__)

app = typer.Typer(help="Geometry-aware 3D indoor object detection toolkit.", add_completion=False)
stderr = Console(stderr=True)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = "DEBUG" if verbose else "WARNING" if quiet else settings.log_level
    logging.basicConfig(
        level=getattr(logging, level),
        format=settings.log_format,
        handlers=[RichHandler(console=stderr, show_path=False)],
        force=True,
    )


def handle_errors(func: Callable) -> Callable:
    """Map structured errors to exit code 1 and I/O errors to exit code 2."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except GeoDetException as e:
            logger.debug(f"{e.error_code}: {e.details}")
            stderr.print(f"[red]error[/red] {e.error_code}: {e.message}")
            if e.details:
                stderr.print(json.dumps(e.details, default=str))
            raise typer.Exit(code=1)
        except OSError as e:
            stderr.print(f"[red]I/O error[/red] {e}")
            raise typer.Exit(code=2)

    return wrapper


def emit(payload: Any, out: Optional[Path] = None) -> None:
    """Write JSON to ``out`` or stdout."""
    text = json.dumps(payload, indent=settings.output_indent)
    if out is None:
        typer.echo(text)
    else:
        write_bytes(out, (text + "\n").encode("utf-8"))
        logger.info(f"Wrote {out}")


def run_config(ctx: typer.Context, **overrides: Any) -> RunConfig:
    return load_run_config(ctx.obj.get("config_file"), **overrides)


def parse_range(text: str) -> Tuple[int, int]:
    """``"2..5"`` -> (2, 5); ``"3"`` -> (3, 3)."""
    try:
        if ".." in text:
            low, high = text.split("..", 1)
            return int(low), int(high)
        return int(text), int(text)
    except ValueError:
        raise ConfigurationError(f"expected a count or a range like 2..5, got '{text}'", details={"value": text})


def parse_values(text: str) -> List[str]:
    values = [v.strip() for v in text.replace(" ", ",").split(",") if v.strip()]
    if not values:
        raise ConfigurationError("no sweep values given")
    return values


def single_scene(ply: Path, annotation: Optional[Path], superpoints: Optional[Path]) -> SuiteScene:
    cloud = read_point_cloud(ply)
    if annotation is not None:
        scene_annotation = read_annotation(annotation)
    else:
        scene_annotation = SceneAnnotation(class_names=["object"], boxes=[])
    labels = read_superpoints(superpoints, len(cloud)) if superpoints else None
    entry = SuiteEntry(scene_id=ply.stem, seed=0, ply=ply.name,
                       annotation=annotation.name if annotation else "", sha256="")
    return SuiteScene(entry=entry, cloud=cloud, annotation=scene_annotation, labels=labels)


@app.callback()
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", help="Flat key=value run configuration file"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only"),
):
    configure_logging(verbose, quiet)
    ctx.obj = {"config_file": config}


@app.command()
@handle_errors
def gen(
    scenes: int = typer.Option(20, "--scenes", help="Number of scenes"),
    objects: str = typer.Option("2..4", "--objects", help="Objects per scene, e.g. 2..5"),
    seed: int = typer.Option(7, "--seed"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    points_per_object: int = typer.Option(96, "--points-per-object"),
    classes: int = typer.Option(3, "--classes"),
    clutter: float = typer.Option(2.0, "--clutter", help="Clutter points per square meter"),
    segments: bool = typer.Option(True, "--segments/--no-segments", help="Write per-scene surface segments"),
):
    """Generate a deterministic synthetic scene suite."""
    try:
        spec = SceneSpec(object_count=parse_range(objects), points_per_object=points_per_object,
                         num_classes=classes, clutter_density=clutter, seed=seed)
    except PydanticValidationError as e:
        raise ConfigurationError(f"invalid scene spec: {e.errors()[0]['msg']}")
    manifest = generate_suite(scenes, spec, seed, out, segments=segments)
    emit({"out": str(out), "scenes": len(manifest.scenes), "seed": seed})


@app.command()
@handle_errors
def cluster(
    ctx: typer.Context,
    input: Path = typer.Option(..., "--input", help="PLY point cloud"),
    voxel_size: Optional[float] = typer.Option(None, "--voxel", "--voxel-size"),
    out: Path = typer.Option(..., "--out", help="Superpoint label file"),
):
    """Voxel-grid superpoints for one cloud."""
    config = run_config(ctx, voxel_size=voxel_size)
    cloud = read_point_cloud(input)
    labels = cluster_voxel_grid(cloud, config.voxel_size)
    write_bytes(out, write_superpoints(labels))
    sizes = labels.sizes
    emit({"points": len(cloud), "superpoints": labels.count, "voxel_size": config.voxel_size,
          "min_size": int(sizes.min()), "max_size": int(sizes.max()), "out": str(out)})


@app.command()
@handle_errors
def weights(
    ctx: typer.Context,
    input: Path = typer.Option(..., "--input", help="PLY point cloud"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    distance: Optional[str] = typer.Option(None, "--distance", help="euclidean, manhattan or mahalanobis"),
    out: Optional[Path] = typer.Option(None, "--out"),
):
    """Per-point geometry weights with their intermediates."""
    config = run_config(ctx, alpha=alpha, distance_metric=distance)
    cloud = read_point_cloud(input)
    result = compute_geometry_weights(cloud, config.alpha, config.distance_metric)
    payload: Dict[str, Any] = result.to_dict()
    payload["summary"] = {"min": float(np.min(result.weights)), "max": float(np.max(result.weights)),
                          "mean": float(np.mean(result.weights))}
    emit(payload, out)


@app.command("train-toy")
@handle_errors
def train_toy_command(
    ctx: typer.Context,
    scenes: Path = typer.Option(..., "--scenes", help="Suite directory"),
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Output checkpoint JSON"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    beta: Optional[float] = typer.Option(None, "--beta"),
    channels: Optional[int] = typer.Option(None, "--channels"),
    layers: Optional[int] = typer.Option(None, "--layers"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    optimizer: Optional[str] = typer.Option(None, "--optimizer", help="adamw or sgd"),
    distance: Optional[str] = typer.Option(None, "--distance"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    evaluate: bool = typer.Option(True, "--evaluate/--no-evaluate", help="Report mAP on the training scenes"),
):
    """Train the detector on a suite; writes the checkpoint and its loss trace."""
    config = run_config(ctx, epochs=epochs, alpha=alpha, beta=beta, channels=channels, layers=layers, lr=lr,
                        optimizer=optimizer, distance_metric=distance, seed=seed)
    _, suite = load_suite(scenes)
    result = train_toy(suite, config)
    write_checkpoint(checkpoint, result.params, result.detector.config, result.class_names)
    trace_file = write_trace(trace_path_for(checkpoint), result.trace, settings.output_indent)
    summary: Dict[str, Any] = {
        "checkpoint": str(checkpoint),
        "trace": str(trace_file),
        "epochs": config.epochs,
        "initial_loss": result.trace.initial,
        "final_loss": result.trace.final,
    }
    if evaluate:
        report = evaluate_trained(result)
        summary.update({"map25": report.map25, "map50": report.map50})
    emit(summary)


@app.command()
@handle_errors
def detect(
    checkpoint: Path = typer.Option(..., "--checkpoint"),
    scenes: Path = typer.Option(..., "--scenes", help="Suite directory"),
    out: Optional[Path] = typer.Option(None, "--out", help="Detections JSON"),
):
    """Run a checkpoint over every scene of a suite."""
    trained = read_checkpoint(checkpoint)
    _, suite = load_suite(scenes)
    document = DetectionService(trained).detect_all(suite)
    payload = dump_detections(document, settings.output_indent)
    if out is None:
        typer.echo(payload.decode("utf-8"))
    else:
        write_bytes(out, payload)


@app.command("eval")
@handle_errors
def eval_command(
    detections: Path = typer.Option(..., "--detections", help="Detections JSON"),
    gt: Path = typer.Option(..., "--gt", help="Suite directory, multi-scene ground truth or one annotation"),
    out: Optional[Path] = typer.Option(None, "--out", help="Report JSON"),
):
    """Per-class AP and mAP at IoU 0.25 and 0.5."""
    document = parse_detections(detections.read_bytes())
    if gt.is_dir():
        manifest, suite = load_suite(gt)
        class_names = list(manifest.class_names)
        ground_truth = {scene.scene_id: list(scene.annotation.boxes) for scene in suite}
    else:
        truth = parse_ground_truth(gt.read_bytes(), scene_id=gt.stem)
        class_names = list(truth.class_names)
        ground_truth = truth.as_mapping()
    if document.class_names and document.class_names != class_names:
        logger.warning("Detection class list differs from the ground truth's; class ids are compared as-is")
    report = compute_map(document.scenes, ground_truth, class_names)
    payload = json.loads(report.model_dump_json())
    payload["table"] = report.table_rows()
    emit(payload, out)


@app.command()
@handle_errors
def sweep(
    ctx: typer.Context,
    scenes: Path = typer.Option(..., "--scenes", help="Suite directory"),
    param: str = typer.Option(..., "--param", help="alpha, beta, distance or modules"),
    values: str = typer.Option(..., "--values", help="Comma-separated values"),
    trials: int = typer.Option(1, "--trials", help="Trainings per value (seeds seed, seed+1, ...)"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Sweep JSON; a CSV table is written beside it"),
):
    """Train and evaluate once per value of one hyperparameter."""
    config = run_config(ctx, epochs=epochs, seed=seed)
    _, suite = load_suite(scenes)
    report = cmd_sweep(config, param, parse_values(values), suite, trials)

    table = Table(title=f"{param} sweep")
    frame = report.to_frame()
    for column in frame.columns:
        table.add_column(str(column))
    for record in frame.itertuples(index=False):
        table.add_row(*["" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v) for v in record])
    stderr.print(table)

    if out is not None:
        write_sweep(report, out, indent=settings.output_indent)
    else:
        emit(report.model_dump())


@app.command()
@handle_errors
def trace(
    ctx: typer.Context,
    scenes: Optional[Path] = typer.Option(None, "--scenes", help="Suite directory"),
    scene_id: Optional[str] = typer.Option(None, "--scene-id", help="Scene within the suite (default: first)"),
    ply: Optional[Path] = typer.Option(None, "--ply", help="Single PLY instead of a suite"),
    annotation: Optional[Path] = typer.Option(None, "--annotation", help="Annotation for --ply"),
    superpoints: Optional[Path] = typer.Option(None, "--superpoints", help="Superpoint labels for --ply"),
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", help="Trained parameters (default: seed init)"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[Path] = typer.Option(None, "--out"),
):
    """Shapes and statistics of every pipeline stage for one scene."""
    config = run_config(ctx, seed=seed)
    if ply is not None:
        scene = single_scene(ply, annotation, superpoints)
    elif scenes is not None:
        _, suite = load_suite(scenes)
        matches = [s for s in suite if scene_id is None or s.scene_id == scene_id]
        if not matches:
            raise ConfigurationError(f"scene '{scene_id}' is not in {scenes}", details={"scene_id": scene_id})
        scene = matches[0]
    else:
        raise ConfigurationError("give either --scenes or --ply")
    trained = read_checkpoint(checkpoint) if checkpoint else None
    result = cmd_pipeline_trace(scene, config, trained)
    emit(result.model_dump(), out)


@app.command()
@handle_errors
def plot(
    input: Path = typer.Option(..., "--input", help="Loss trace or sweep JSON"),
    out: Path = typer.Option(..., "--out", help="Image file"),
):
    """Render a loss curve or an mAP-vs-value chart."""
    path = render_plot(input, out)
    emit({"figure": str(path)})


if __name__ == "__main__":
    app()
