"""Execution-phase loop: capture, descriptors, correspondence, displacement,
threshold test, adjust, repeat — plus demonstration-phase goal construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondence import CorrespondenceOpts, Match, NoContactError, correspond, keypoint_descriptor
from .descriptor import DescriptorParams, extract
from .displacement import (Displacement, EstimationError, below_thresholds,
                           displacement_norm, estimate_displacement)
from .gel_sim import ContactScene, PlantState, apply_adjustment, grasp_capture, render
from .displacement import IDENTITY
from .sensor_core import (GoalSpec, KeypointSet, SensorCalibration,
                          centered_mm_to_px, px_to_centered_mm)


class VoidKeypointError(ValueError):
    """Goal keypoint sits on a void (non-contact) descriptor cell."""


@dataclass(frozen=True)
class ServoConfig:
    max_iterations: int = 5
    descriptor_params: DescriptorParams = DescriptorParams()
    corr_opts: CorrespondenceOpts = CorrespondenceOpts()
    mode: str = "rigid_2d"
    require_confident: bool = False
    oracle_correspondence: bool = False  # ground-truth matches, for harness baselines
    r_char_mm: float = 15.0
    keep_images: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    index: int
    matches: tuple
    displacement: Displacement
    norm_mm: float
    low_confidence: bool
    residual_before: Displacement  # actual rendered pose of this capture
    image: object = None

    def to_dict(self) -> dict:
        return {"index": self.index,
                "matches": [m.to_dict() for m in self.matches],
                "displacement": self.displacement.to_dict(),
                "norm_mm": self.norm_mm,
                "low_confidence": self.low_confidence,
                "residual_before": self.residual_before.to_dict()}


@dataclass(frozen=True)
class ServoResult:
    outcome: str  # success | max_iterations_exceeded | no_contact | degenerate
    iterations: tuple
    final_residual: Displacement

    def to_dict(self) -> dict:
        return {"outcome": self.outcome,
                "iterations": [it.to_dict() for it in self.iterations],
                "final_residual": self.final_residual.to_dict()}


def _oracle_matches(k_g: KeypointSet, rendered: Displacement,
                    cal: SensorCalibration) -> list[Match]:
    g_mm = px_to_centered_mm(k_g.points, cal)
    c_px = centered_mm_to_px(rendered.transform_points(g_mm), cal)
    c_px[:, 0] = np.clip(c_px[:, 0], 0.0, cal.working_width_px - 1)
    c_px[:, 1] = np.clip(c_px[:, 1], 0.0, cal.working_height_px - 1)
    return [Match(goal_point=(float(g[0]), float(g[1])),
                  found_point=(float(c[0]), float(c[1])),
                  similarity=1.0, ratio=float("inf"), confident=True)
            for g, c in zip(k_g.points, c_px)]


def run_servo(goal: GoalSpec, plant: PlantState,
              cfg: ServoConfig = ServoConfig()) -> ServoResult:
    """Iterate the execution phase against a plant until the estimated
    displacement drops below the goal thresholds or the iteration cap."""
    cal = goal.goal_image.calibration
    goal_map = None
    if not cfg.oracle_correspondence:
        goal_map = extract(goal.goal_image, cfg.descriptor_params)

    records: list[IterationRecord] = []
    outcome = "max_iterations_exceeded"
    for i in range(cfg.max_iterations):
        img = grasp_capture(plant, cal)
        rendered = plant.capture_log[-1]

        if cfg.oracle_correspondence:
            matches = _oracle_matches(goal.goal_keypoints, rendered, cal)
        else:
            try:
                cur_map = extract(img, cfg.descriptor_params)
                matches = correspond(goal_map, cur_map, goal.goal_keypoints,
                                     cfg.corr_opts)
            except NoContactError:
                outcome = "no_contact"
                break

        confident = [m for m in matches if m.confident]
        low_confidence = len(confident) < len(matches)
        if cfg.require_confident and len(confident) >= 2:
            used = confident
        else:
            used = matches

        k_g_used = KeypointSet(np.array([m.goal_point for m in used]))
        k_c_used = KeypointSet(np.array([m.found_point for m in used]))
        try:
            est = estimate_displacement(k_g_used, k_c_used, cal, cfg.mode)
        except EstimationError:
            outcome = "degenerate"
            break
        dp = est.displacement

        records.append(IterationRecord(
            index=i, matches=tuple(matches), displacement=dp,
            norm_mm=displacement_norm(dp, cfg.r_char_mm),
            low_confidence=low_confidence, residual_before=rendered,
            image=img if cfg.keep_images else None))

        if below_thresholds(dp, goal.translation_threshold_mm,
                            goal.rotation_threshold_rad):
            outcome = "success"
            break
        plant = apply_adjustment(plant, dp)

    return ServoResult(outcome=outcome, iterations=tuple(records),
                       final_residual=plant.residual())


def build_goal_spec(scene: ContactScene, cal: SensorCalibration,
                    keypoints: KeypointSet, gripper_width_mm: float,
                    translation_threshold_mm: float = 0.3,
                    rotation_threshold_rad: float = 0.03,
                    descriptor_params: DescriptorParams = DescriptorParams(),
                    seed: int = 0) -> GoalSpec:
    """Demonstration phase: render the scene at zero offset, validate that
    every keypoint is in bounds and on contact (non-void descriptor)."""
    img = render(scene, IDENTITY, cal, seed=seed)
    keypoints.validate_within(img.width, img.height)
    dmap = extract(img, descriptor_params)
    for i, p in enumerate(keypoints.points):
        if np.linalg.norm(keypoint_descriptor(dmap, p)) < 1e-12:
            raise VoidKeypointError(
                f"keypoint {i} at ({p[0]:.1f}, {p[1]:.1f}) lies on uniform "
                "background (void descriptor cell)")
    return GoalSpec(goal_image=img, goal_keypoints=keypoints,
                    gripper_width_mm=gripper_width_mm,
                    translation_threshold_mm=translation_threshold_mm,
                    rotation_threshold_rad=rotation_threshold_rad)
