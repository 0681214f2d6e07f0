"""Benchmark of the pipeline, its ablation and the two baselines on simulated scenarios."""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Dict, List, Optional

import numpy as np
import yaml
from pydantic import ValidationError

from .config import PipelineConfig
from .joint_estimator import JointModel
from .metrics import (
    baseline_rigid_hand,
    baseline_single_point,
    rigid_hand_poses,
    single_point_track,
    tangent_error,
)
from .models.suite import BenchMethod, BenchSuite
from .pipeline import run_pipeline
from .simulator import Scenario, ScenarioError, SimulatedSequence, generate, prismatic_joint, revolute_joint

logger = logging.getLogger(__name__)

CSV_FIELDS = ["scenario", "method", "joint_type", "tangent_error", "error"]
# tangent error charged to an estimate without an articulated joint
UNARTICULATED_ERROR = 90.0


@dataclass
class BenchRow:
    scenario: str
    method: BenchMethod
    joint_type: Optional[str] = None
    tangent_error: Optional[float] = None
    error: Optional[str] = None

    def as_csv(self) -> Dict[str, str]:
        return {
            "scenario": self.scenario,
            "method": self.method.value,
            "joint_type": self.joint_type or "",
            "tangent_error": "" if self.tangent_error is None else f"{self.tangent_error:.4f}",
            "error": self.error or "",
        }


def default_suite(noisy: bool = True) -> BenchSuite:
    """Five prismatic and five revolute scenarios with varied axes.

    The noisy variant uses 2 mm class-scaled noise, 5% outliers and 5%
    dropouts; the noiseless variant has none of them.
    """
    prismatic_axes = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 1.0)]
    revolute_axes = [
        ((0.0, 1.0, 0.0), (0.5, 0.0, 0.5)),
        ((0.0, 0.0, 1.0), (0.0, 0.5, 0.5)),
        ((1.0, 0.0, 0.0), (0.0, 0.0, 0.9)),
        ((0.0, 1.0, 0.0), (-0.4, 0.0, 0.5)),
        ((0.0, 0.0, 1.0), (0.3, -0.3, 0.5)),
    ]
    noise = {"noise": 0.002, "outlier_rate": 0.05, "dropout_rate": 0.05} if noisy else {"noise": 0.0}
    scenarios = [
        Scenario(name=f"prismatic-{i}", joint=prismatic_joint(0.3, axis), seed=100 + i, **noise)
        for i, axis in enumerate(prismatic_axes)
    ] + [
        Scenario(
            name=f"revolute-{i}",
            joint=revolute_joint(math.pi / 2, axis, point),
            seed=200 + i,
            **noise,
        )
        for i, (axis, point) in enumerate(revolute_axes)
    ]
    return BenchSuite(name="default" if noisy else "noiseless", scenarios=scenarios)


def load_suite(path: str | Path) -> BenchSuite:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f"Cannot read suite {path}: {e}")
    try:
        return BenchSuite.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"Invalid suite {path}: {e}")


def _estimate(
    method: BenchMethod, sequence: SimulatedSequence, config: PipelineConfig
) -> JointModel:
    frames = sequence.observation_frames()
    seed = sequence.scenario.seed
    if method is BenchMethod.PIPELINE:
        return run_pipeline(frames, config, seed=seed).model
    if method is BenchMethod.ABLATION:
        return run_pipeline(frames, config.without_uncertainty_models(), seed=seed).model
    if method is BenchMethod.SINGLE_POINT:
        return baseline_single_point(single_point_track(frames, config), config)
    return baseline_rigid_hand(rigid_hand_poses(frames))


def run_scenario(
    scenario: Scenario, config: PipelineConfig, methods: List[BenchMethod], samples: int = 100
) -> List[BenchRow]:
    """One row per method; a failure only costs the rows it affects."""
    try:
        sequence = generate(scenario)
    except Exception as e:
        logger.warning(f"{scenario.name} could not be simulated: {e}")
        return [BenchRow(scenario.name, method, error=str(e)) for method in methods]

    rows = []
    for method in methods:
        row = BenchRow(scenario.name, method)
        try:
            model = _estimate(method, sequence, config)
            row.joint_type = model.type.value
            if model.is_articulated:
                row.tangent_error = tangent_error(model, sequence.ground_truth, samples)
            else:
                row.tangent_error = UNARTICULATED_ERROR
                row.error = f"no articulated joint ({model.type.value})"
        except Exception as e:
            logger.warning(f"{scenario.name}/{method.value} failed: {e}")
            row.error = str(e)
        rows.append(row)
    return rows


def run_suite(
    suite: BenchSuite, config: Optional[PipelineConfig] = None, workers: int = 4
) -> List[BenchRow]:
    """Run all scenarios, in parallel, and return the rows in suite order."""
    config = config or PipelineConfig()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = executor.map(
            lambda scenario: run_scenario(scenario, config, suite.methods, suite.samples),
            suite.scenarios,
        )
        return [row for rows in results for row in rows]


def summarize(rows: List[BenchRow]) -> Dict[str, Dict[str, float]]:
    """Mean and max tangent error per method over the rows that have one."""
    summary: Dict[str, Dict[str, float]] = {}
    for method in BenchMethod:
        errors = [r.tangent_error for r in rows if r.method is method and r.tangent_error is not None]
        if errors:
            summary[method.value] = {
                "mean": float(np.mean(errors)),
                "max": float(np.max(errors)),
                "count": float(len(errors)),
            }
    return summary


def write_csv(rows: List[BenchRow], stream: IO[str]) -> None:
    writer = csv.DictWriter(stream, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_csv())
