#!/usr/bin/env python3

import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import IO, Any, Dict, List, NoReturn, Optional, Tuple

import click
from pydantic import ValidationError

from src.handjoint.bench import default_suite, load_suite, run_suite, summarize, write_csv
from src.handjoint.config import ConfigError, PipelineConfig, load_config
from src.handjoint.core import HandJointError
from src.handjoint.joint_estimator import JointModel, JointType
from src.handjoint.metrics import GroundTruthJoint, tangent_error
from src.handjoint.models.report import BeliefRecord, ResultReport
from src.handjoint.observation_parser import MalformedRecordError, ObservationParser, write_observations
from src.handjoint.pipeline import FrameBelief, NoFramesError, run_pipeline
from src.handjoint.simulator import Scenario, ScenarioError, generate, prismatic_joint, revolute_joint

logger = logging.getLogger(__name__)

EXIT_INPUT_ERROR = 2
EXIT_NOT_CONVERGED = 3
EXIT_CONFIG_ERROR = 4


def fail(message: str, code: int) -> NoReturn:
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def _load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return load_config(path)
    except ConfigError as e:
        fail(str(e), EXIT_CONFIG_ERROR)


def _load_ground_truth(path: str) -> GroundTruthJoint:
    try:
        return GroundTruthJoint.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        fail(f"Cannot read ground truth {path}: {e}", EXIT_INPUT_ERROR)


def _write_json(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        click.echo(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG logs on stderr")
def cli(verbose: int) -> None:
    """Estimate the joint of an object from the hand that moves it."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


@cli.command()
@click.option("--input", "input_path", type=click.Path(dir_okay=False), help="Observation JSONL file")
@click.option("--live", is_flag=True, help="Read observations from stdin, write beliefs to stdout")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Config TOML")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), help="Report JSON (default stdout)")
@click.option("--ground-truth", "gt_path", type=click.Path(dir_okay=False), help="Ground-truth JSON")
@click.option("--beliefs", "beliefs_path", type=click.Path(dir_okay=False), help="Write per-frame beliefs as JSONL")
@click.option("--timing", is_flag=True, help="Add frames_per_second to the report")
@click.option("--seed", default=0, show_default=True, help="RANSAC seed")
def estimate(
    input_path: Optional[str],
    live: bool,
    config_path: Optional[str],
    output_path: Optional[str],
    gt_path: Optional[str],
    beliefs_path: Optional[str],
    timing: bool,
    seed: int,
) -> None:
    """Run the estimation pipeline over an observation sequence."""
    if live == (input_path is not None):
        fail("Give exactly one of --input and --live", EXIT_INPUT_ERROR)
    config = _load_pipeline_config(config_path)
    ground_truth = _load_ground_truth(gt_path) if gt_path else None

    records = (
        ObservationParser.iter_records(sys.stdin)
        if live
        else ObservationParser.iter_file(input_path)  # type: ignore[arg-type]
    )
    frames = ObservationParser.iter_frames(records)
    beliefs_stream: Optional[IO[str]] = open(beliefs_path, "w", encoding="utf-8") if beliefs_path else None
    collected: Optional[List[BeliefRecord]] = [] if not live else None

    def emit(belief: FrameBelief) -> None:
        record = belief.to_record()
        line = record.model_dump_json()
        if live:
            click.echo(line)
            sys.stdout.flush()
        if beliefs_stream is not None:
            beliefs_stream.write(line + "\n")
        if collected is not None:
            collected.append(record)

    started = time.perf_counter()
    try:
        pipeline = run_pipeline(frames, config, seed=seed, on_belief=emit)
    except (MalformedRecordError, NoFramesError) as e:
        fail(str(e), EXIT_INPUT_ERROR)
    finally:
        if beliefs_stream is not None:
            beliefs_stream.close()
    elapsed = time.perf_counter() - started

    report = pipeline.report(beliefs=collected)
    updates: Dict[str, Any] = {}
    if timing:
        updates["frames_per_second"] = pipeline.frames / elapsed if elapsed > 0 else math.inf
    if ground_truth is not None and pipeline.model.is_articulated:
        try:
            updates["tangent_error"] = tangent_error(pipeline.model, ground_truth)
            updates["type_mismatch"] = report.joint_type is not ground_truth.type
        except HandJointError as e:
            logger.warning(f"Tangent error not computed: {e}")
    report = report.model_copy(update=updates)
    _write_json(report.model_dump_json(indent=2), None if live else output_path)

    if not pipeline.body.initializations:
        fail("the hand body never initialized", EXIT_NOT_CONVERGED)
    if report.joint_type is JointType.DISCONNECTED:
        fail("no kinematic model explains the motion (disconnected)", EXIT_NOT_CONVERGED)


@cli.command()
@click.option("--joint", type=click.Choice(["prismatic", "revolute"]), default="revolute", show_default=True)
@click.option("--q-max", type=float, help="Joint range (m or rad); 0.3 m or pi/2 by default")
@click.option("--noise", type=float, default=0.002, show_default=True, help="Noise scale (m)")
@click.option("--outlier-rate", type=float, default=0.0, show_default=True)
@click.option("--dropout-rate", type=float, default=0.0, show_default=True)
@click.option("--occlusion-rate", type=float, default=0.0, show_default=True)
@click.option("--duration", type=float, default=4.0, show_default=True)
@click.option("--rate", type=float, default=30.0, show_default=True)
@click.option("--mover", "movers", type=int, multiple=True, help="Landmark that moves on its own")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "output_path", type=click.Path(dir_okay=False), required=True)
@click.option("--gt-output", "gt_path", type=click.Path(dir_okay=False), required=True)
def simulate(
    joint: str,
    q_max: Optional[float],
    noise: float,
    outlier_rate: float,
    dropout_rate: float,
    occlusion_rate: float,
    duration: float,
    rate: float,
    movers: Tuple[int, ...],
    seed: int,
    output_path: str,
    gt_path: str,
) -> None:
    """Write a simulated observation sequence and its ground truth."""
    try:
        if joint == "prismatic":
            truth = prismatic_joint(q_max if q_max is not None else 0.3)
        else:
            truth = revolute_joint(q_max if q_max is not None else math.pi / 2)
        scenario = Scenario.parse(
            {
                "name": f"{joint}-{seed}",
                "joint": truth.model_dump(),
                "noise": noise,
                "outlier_rate": outlier_rate,
                "dropout_rate": dropout_rate,
                "occlusion_rate": occlusion_rate,
                "duration": duration,
                "rate": rate,
                "independent_movers": list(movers),
                "seed": seed,
            }
        )
        sequence = generate(scenario)
    except (ScenarioError, ValidationError) as e:
        fail(str(e), EXIT_INPUT_ERROR)

    with open(output_path, "w", encoding="utf-8") as f:
        count = write_observations(sequence.observation_frames(), f)
    Path(gt_path).write_text(sequence.ground_truth.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {count} frames to {output_path}")


@cli.command()
@click.option("--suite", "suite_path", type=click.Path(dir_okay=False), help="Suite YAML (default: built-in)")
@click.option("--noiseless", is_flag=True, help="Use the built-in suite without noise")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--output-csv", "csv_path", type=click.Path(dir_okay=False), help="CSV path (default stdout)")
@click.option("--workers", default=4, show_default=True)
def bench(
    suite_path: Optional[str],
    noiseless: bool,
    config_path: Optional[str],
    csv_path: Optional[str],
    workers: int,
) -> None:
    """Compare the pipeline, its ablation and both baselines on a scenario suite."""
    config = _load_pipeline_config(config_path)
    try:
        suite = load_suite(suite_path) if suite_path else default_suite(noisy=not noiseless)
    except ScenarioError as e:
        fail(str(e), EXIT_INPUT_ERROR)

    rows = run_suite(suite, config, workers=workers)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            write_csv(rows, f)
    else:
        write_csv(rows, sys.stdout)
    for method, stats in summarize(rows).items():
        click.echo(f"{method}: mean {stats['mean']:.2f} deg, max {stats['max']:.2f} deg", err=True)


@cli.command(name="eval")
@click.option("--estimate", "estimate_path", type=click.Path(dir_okay=False), required=True)
@click.option("--ground-truth", "gt_path", type=click.Path(dir_okay=False), required=True)
@click.option("--samples", default=100, show_default=True)
def evaluate(estimate_path: str, gt_path: str, samples: int) -> None:
    """Print the tangent error of a report (or ground-truth file) against ground truth."""
    ground_truth = _load_ground_truth(gt_path)
    try:
        model = _read_estimate(estimate_path)
        error = tangent_error(model, ground_truth, samples)
    except (OSError, ValueError, HandJointError) as e:
        fail(str(e), EXIT_INPUT_ERROR)
    if model.type is not ground_truth.type:
        click.echo(
            f"Warning: estimate is {model.type.value}, ground truth is {ground_truth.type.value}",
            err=True,
        )
    click.echo(f"{error:.1f}")


def _read_estimate(path: str) -> JointModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "joint_type" in data:
        return ResultReport.model_validate(data).to_joint_model()
    return GroundTruthJoint.model_validate(data).to_joint_model()


if __name__ == "__main__":
    cli()
