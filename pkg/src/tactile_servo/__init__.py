"""Visuo-tactile keypoint correspondence and grasp-adjustment pipeline."""

from .sensor_core import (AxisMap, GoalSpec, KeypointSet, SensorCalibration,
                          TactileImage, load_goal_spec, load_image, mm_to_px,
                          px_to_mm, resize_to_working, save_goal_spec,
                          save_image)
from .gel_sim import (ContactScene, PlantState, apply_adjustment,
                      grasp_capture, load_scene, render, save_scene)
from .descriptor import (DescriptorMap, DescriptorParams, cosine_similarity,
                         extract, load_descriptor_file, save_descriptor_file)
from .correspondence import (CorrespondenceOpts, Match, NoContactError,
                             correspond, keypoint_descriptor, refine_subpixel)
from .displacement import (Displacement, ErrorStats, TrialRecord, compose,
                           d_error, displacement_norm, estimate_displacement,
                           invert)
from .servo_loop import ServoConfig, ServoResult, build_goal_spec, run_servo
from .harness import (ExperimentConfig, default_experiment_config,
                      run_boundary_failure_probe, run_perturbation_experiment,
                      run_task_scenario, summarize)

__version__ = "0.1.0"
