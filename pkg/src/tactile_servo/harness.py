"""Batch experiment harness: the random-perturbation estimation experiment,
servo task scenarios, the boundary-ambiguity failure probe, and report
aggregation. Every run is fully determined by (config, seed)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .correspondence import CorrespondenceOpts, NoContactError, correspond
from .descriptor import DescriptorParams, extract
from .displacement import (Displacement, ErrorStats, TrialRecord, d_error,
                           estimate_displacement)
from .gel_sim import ContactScene, PlantState, grasp_capture
from .sensor_core import KeypointSet, SensorCalibration, centered_mm_to_px
from .servo_loop import ServoConfig, build_goal_spec, run_servo

CSV_COLUMNS = ["trial", "real_x_mm", "real_z_mm", "real_theta_rad",
               "est_x_mm", "est_z_mm", "est_theta_rad", "err_mm",
               "confident", "n_iterations"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ReportError(ValueError):
    """Missing or malformed report files."""


# ---------------------------------------------------------------------------
# scene and keypoint presets

def gear_polygon(body_radius_mm: float = 2.3, tooth_radius_mm: float = 3.1,
                 n_teeth: int = 8) -> np.ndarray:
    """Gear-like polygon: alternating body arcs and trapezoidal teeth."""
    pts = []
    for i in range(n_teeth):
        a0 = 2 * math.pi * i / n_teeth
        pitch = 2 * math.pi / n_teeth
        # body arc corners and tooth tip corners
        for frac, r in ((0.05, body_radius_mm), (0.30, body_radius_mm),
                        (0.38, tooth_radius_mm), (0.62, tooth_radius_mm),
                        (0.70, body_radius_mm), (0.95, body_radius_mm)):
            a = a0 + frac * pitch
            pts.append((r * math.cos(a), r * math.sin(a)))
    return np.array(pts)


def block_polygon(width_mm: float = 9.0, height_mm: float = 6.0) -> np.ndarray:
    w, h = width_mm / 2.0, height_mm / 2.0
    return np.array([(-w, -h), (w, -h), (w, h), (-w, h)])


def preset_scene(name: str, noise_sigma: float = 0.0) -> tuple[ContactScene, np.ndarray]:
    """Named scene plus its default keypoints in object-frame mm."""
    if name in ("gear", "gear_insertion"):
        poly = gear_polygon()
        scene = ContactScene(shapes=(poly,), noise_sigma=noise_sigma)
        # two opposite tooth-tip corners
        kp_mm = np.array([poly[3], poly[3 + 6 * 4]])
        return scene, kp_mm
    if name in ("block", "block_alignment"):
        # small enough that +/-5 mm offsets keep both corners in the window
        poly = block_polygon(width_mm=6.0, height_mm=4.0)
        scene = ContactScene(shapes=(poly,), noise_sigma=noise_sigma)
        kp_mm = np.array([poly[0], poly[2]])  # diagonal corners
        return scene, kp_mm
    if name == "boundary_block":
        poly = block_polygon(width_mm=12.0, height_mm=6.0)
        scene = ContactScene(shapes=(poly,), noise_sigma=noise_sigma)
        kp_mm = np.array([poly[0], poly[1]])  # both lower corners
        return scene, kp_mm
    raise ConfigError(f"unknown scene preset {name!r}")


def preset_keypoints(kp_mm: np.ndarray, cal: SensorCalibration,
                     snap: bool = True,
                     params: DescriptorParams = DescriptorParams()) -> KeypointSet:
    """Object-frame mm keypoints to pixels. By default they snap to the
    nearest descriptor cell center: descriptor interpolation between cells
    degrades exactly at the sharp corners keypoints are placed on."""
    px = centered_mm_to_px(kp_mm, cal)
    if snap:
        origin = params.stride / 2.0
        px = np.round((px - origin) / params.stride) * params.stride + origin
    return KeypointSet(px)


@dataclass(frozen=True)
class ExperimentConfig:
    scene: ContactScene
    keypoints: KeypointSet
    cal: SensorCalibration = SensorCalibration()
    gripper_width_mm: float = 30.0
    trial_count: int = 10
    x_range_mm: float = 5.0
    z_range_mm: float = 5.0
    theta_range_rad: float = 0.0
    seed: int = 0
    actuation_noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    descriptor_params: DescriptorParams = DescriptorParams()
    corr_opts: CorrespondenceOpts = CorrespondenceOpts()
    mode: str = "rigid_2d"
    translation_threshold_mm: float = 0.3
    rotation_threshold_rad: float = 0.03
    max_iterations: int = 5
    success_tol_translation_mm: float = 1.0
    success_tol_rotation_rad: float = math.radians(2.0)

    def __post_init__(self):
        if self.trial_count < 1:
            raise ConfigError("trial_count must be >= 1")
        for r in (self.x_range_mm, self.z_range_mm, self.theta_range_rad):
            if not np.isfinite(r) or r < 0:
                raise ConfigError("perturbation ranges must be finite and >= 0")


def default_experiment_config(preset: str = "gear", **overrides) -> ExperimentConfig:
    scene, kp_mm = preset_scene(preset,
                                noise_sigma=overrides.pop("noise_sigma", 0.0))
    cal = overrides.pop("cal", SensorCalibration())
    return ExperimentConfig(scene=scene, keypoints=preset_keypoints(kp_mm, cal),
                            cal=cal, **overrides)


def _sample_offset(cfg: ExperimentConfig, trial: int) -> Displacement:
    rng = np.random.default_rng([cfg.seed & 0x7FFFFFFF, 0xA11, trial])
    return Displacement(
        rng.uniform(-cfg.x_range_mm, cfg.x_range_mm) if cfg.x_range_mm > 0 else 0.0,
        rng.uniform(-cfg.z_range_mm, cfg.z_range_mm) if cfg.z_range_mm > 0 else 0.0,
        rng.uniform(-cfg.theta_range_rad, cfg.theta_range_rad) if cfg.theta_range_rad > 0 else 0.0)


def _fmt(x: float) -> str:
    return f"{x:.9f}"


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# perturbation experiment (single-shot estimation against sampled truth)

@dataclass(frozen=True)
class PerturbationReport:
    stats: ErrorStats
    failed_trials: tuple
    rows: tuple
    csv_path: str = ""
    json_path: str = ""

    def to_dict(self) -> dict:
        return {"kind": "perturbation", "stats": self.stats.to_dict(),
                "n_failed": len(self.failed_trials),
                "failed_trials": list(self.failed_trials)}


def run_perturbation_experiment(cfg: ExperimentConfig,
                                out_dir=None) -> PerturbationReport:
    """Sample random true offsets, estimate each with a single capture (no
    servo), and score with the mean-Euclidean trial error metric. Trials
    whose capture shows no contact are excluded from the stats and counted
    separately."""
    goal = build_goal_spec(cfg.scene, cfg.cal, cfg.keypoints,
                           cfg.gripper_width_mm,
                           cfg.translation_threshold_mm,
                           cfg.rotation_threshold_rad,
                           cfg.descriptor_params, seed=cfg.seed)
    goal_map = extract(goal.goal_image, cfg.descriptor_params)

    trials: list[TrialRecord] = []
    rows: list[dict] = []
    failed: list[int] = []
    for i in range(cfg.trial_count):
        offset = _sample_offset(cfg, i)
        plant = PlantState(scene=cfg.scene, true_offset=offset,
                           actuation_noise=cfg.actuation_noise,
                           rng_seed=(cfg.seed * 1_000_003 + i) & 0x7FFFFFFF)
        img = grasp_capture(plant, cfg.cal)
        real = plant.capture_log[-1]  # includes actuation noise, the true pose
        try:
            cur_map = extract(img, cfg.descriptor_params)
            matches = correspond(goal_map, cur_map, cfg.keypoints, cfg.corr_opts)
        except NoContactError:
            failed.append(i)
            continue
        k_c = KeypointSet(np.array([m.found_point for m in matches]))
        est = estimate_displacement(cfg.keypoints, k_c, cfg.cal, cfg.mode)
        dp = est.displacement
        rec = TrialRecord(real=(real.dx_mm, real.dz_mm), est=(dp.dx_mm, dp.dz_mm))
        trials.append(rec)
        rows.append({"trial": i,
                     "real_x_mm": _fmt(real.dx_mm), "real_z_mm": _fmt(real.dz_mm),
                     "real_theta_rad": _fmt(real.dtheta_rad),
                     "est_x_mm": _fmt(dp.dx_mm), "est_z_mm": _fmt(dp.dz_mm),
                     "est_theta_rad": _fmt(dp.dtheta_rad),
                     "err_mm": _fmt(rec.error_mm()),
                     "confident": int(all(m.confident for m in matches)),
                     "n_iterations": 1})

    if not trials:
        raise ReportError("every trial failed with no contact")
    stats = d_error(trials)

    csv_path = json_path = ""
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = str(out_dir / "perturbation_trials.csv")
        json_path = str(out_dir / "perturbation_summary.json")
        _write_csv(Path(csv_path), rows)
        report = PerturbationReport(stats, tuple(failed), tuple(rows),
                                    csv_path, json_path)
        Path(json_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        return report
    return PerturbationReport(stats, tuple(failed), tuple(rows))


# ---------------------------------------------------------------------------
# servo task scenarios

@dataclass(frozen=True)
class ScenarioReport:
    name: str
    n_trials: int
    successes: int
    successes_confident_only: int
    n_confident_trials: int
    iteration_histogram: dict
    outcomes: tuple
    residuals_mm: tuple

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_trials

    def to_dict(self) -> dict:
        d = {"kind": "scenario", "name": self.name, "n_trials": self.n_trials,
             "successes": self.successes, "success_rate": self.success_rate,
             "n_confident_trials": self.n_confident_trials,
             "successes_confident_only": self.successes_confident_only,
             "iteration_histogram": self.iteration_histogram,
             "outcomes": list(self.outcomes),
             "residuals_mm": list(self.residuals_mm)}
        if self.n_confident_trials:
            d["success_rate_confident_only"] = (
                self.successes_confident_only / self.n_confident_trials)
        return d


def run_task_scenario(name: str, cfg: ExperimentConfig,
                      out_dir=None) -> ScenarioReport:
    """Run the full servo loop per trial; success means the ground-truth
    residual ends below the task tolerance. Trials in which any iteration
    raised the low-confidence flag are also reported separately."""
    if name not in ("gear_insertion", "block_alignment"):
        raise ConfigError(f"unknown scenario {name!r}")

    goal = build_goal_spec(cfg.scene, cfg.cal, cfg.keypoints,
                           cfg.gripper_width_mm,
                           cfg.translation_threshold_mm,
                           cfg.rotation_threshold_rad,
                           cfg.descriptor_params, seed=cfg.seed)
    servo_cfg = ServoConfig(max_iterations=cfg.max_iterations,
                            descriptor_params=cfg.descriptor_params,
                            corr_opts=cfg.corr_opts, mode=cfg.mode)

    outcomes, residuals = [], []
    hist: dict = {}
    successes = succ_conf = n_conf = 0
    for i in range(cfg.trial_count):
        offset = _sample_offset(cfg, i)
        plant = PlantState(scene=cfg.scene, true_offset=offset,
                           actuation_noise=cfg.actuation_noise,
                           rng_seed=(cfg.seed * 1_000_003 + i) & 0x7FFFFFFF)
        result = run_servo(goal, plant, servo_cfg)
        res = result.final_residual
        res_mm = math.hypot(res.dx_mm, res.dz_mm)
        ok = (result.outcome == "success"
              and res_mm <= cfg.success_tol_translation_mm
              and abs(res.dtheta_rad) <= cfg.success_tol_rotation_rad)
        n_it = len(result.iterations)
        hist[n_it] = hist.get(n_it, 0) + 1
        outcomes.append(result.outcome)
        residuals.append(res_mm)
        successes += ok
        if not any(it.low_confidence for it in result.iterations):
            n_conf += 1
            succ_conf += ok

    report = ScenarioReport(name=name, n_trials=cfg.trial_count,
                            successes=successes,
                            successes_confident_only=succ_conf,
                            n_confident_trials=n_conf,
                            iteration_histogram={str(k): v for k, v in sorted(hist.items())},
                            outcomes=tuple(outcomes),
                            residuals_mm=tuple(residuals))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"scenario_{name}.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")
    return report


# ---------------------------------------------------------------------------
# boundary-ambiguity failure probe

@dataclass(frozen=True)
class BoundaryTrial:
    trial: int
    keypoint_index: int
    true_point: tuple[float, float]  # where the keypoint really lands (may be off-image)
    found_point: tuple[float, float]
    pixel_error: float
    confident: bool


def run_boundary_failure_probe(trial_count: int = 20, seed: int = 0,
                               corr_opts: CorrespondenceOpts = CorrespondenceOpts(),
                               cal: SensorCalibration = SensorCalibration()) -> list[BoundaryTrial]:
    """Push a bilaterally symmetric block partly out of the sensing window
    and record where matching lands for the corner keypoints versus ground
    truth, with their confidence flags."""
    scene, kp_mm = preset_scene("boundary_block", noise_sigma=0.0)
    keypoints = preset_keypoints(kp_mm, cal)
    goal = build_goal_spec(scene, cal, keypoints, gripper_width_mm=30.0, seed=seed)
    goal_map = extract(goal.goal_image)
    params = DescriptorParams()

    half_w = (cal.working_width_px - 1) / 2.0 * cal.mm_per_px_u
    block_half = float(np.max(np.abs(scene.shapes[0][:, 0])))
    lo = half_w - block_half + 1.0  # shift at which one side leaves the window

    records = []
    for t in range(trial_count):
        rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xB0D, t])
        shift = rng.uniform(lo, lo + 2.0) * (1 if t % 2 == 0 else -1)
        offset = Displacement(shift, 0.0, 0.0)
        plant = PlantState(scene=scene, true_offset=offset, rng_seed=seed + t)
        img = grasp_capture(plant, cal)
        cur_map = extract(img, params)
        matches = correspond(goal_map, cur_map, keypoints, corr_opts)
        from .sensor_core import px_to_centered_mm  # local to avoid cycle noise
        g_mm = px_to_centered_mm(keypoints.points, cal)
        true_px = centered_mm_to_px(offset.transform_points(g_mm), cal)
        for k, m in enumerate(matches):
            err = math.hypot(m.found_point[0] - true_px[k, 0],
                             m.found_point[1] - true_px[k, 1])
            records.append(BoundaryTrial(trial=t, keypoint_index=k,
                                         true_point=(float(true_px[k, 0]),
                                                     float(true_px[k, 1])),
                                         found_point=m.found_point,
                                         pixel_error=err,
                                         confident=m.confident))
    return records


# ---------------------------------------------------------------------------
# report aggregation

def summarize(report_paths: list) -> tuple[str, dict]:
    """Aggregate perturbation/scenario report JSONs into a table and a
    machine-readable summary. Perturbation means pool weighted by N."""
    if not report_paths:
        raise ReportError("no report files given")
    perturbation, scenarios = [], []
    for p in report_paths:
        try:
            doc = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ReportError(f"cannot read report {p}: {e}") from e
        kind = doc.get("kind")
        if kind == "perturbation":
            perturbation.append(doc)
        elif kind == "scenario":
            scenarios.append(doc)
        else:
            raise ReportError(f"report {p} has unknown kind {kind!r}")

    out: dict = {"n_reports": len(report_paths)}
    lines = [f"{'report':<24}{'N':>6}{'mean_mm':>10}{'std_mm':>10}{'min_mm':>10}{'max_mm':>10}{'success':>9}"]
    if perturbation:
        total_n = sum(d["stats"]["n"] for d in perturbation)
        pooled = sum(d["stats"]["d_error_mm"] * d["stats"]["n"]
                     for d in perturbation) / total_n
        all_errs = [e for d in perturbation for e in d["stats"]["per_trial_mm"]]
        out["perturbation"] = {
            "n": total_n, "pooled_d_error_mm": pooled,
            "std_mm": float(np.std(all_errs)),
            "min_mm": float(np.min(all_errs)), "max_mm": float(np.max(all_errs)),
            "n_failed": sum(d["n_failed"] for d in perturbation)}
        for d in perturbation:
            s = d["stats"]
            lines.append(f"{'perturbation':<24}{s['n']:>6}{s['d_error_mm']:>10.4f}"
                         f"{s['std_dev_mm']:>10.4f}"
                         f"{min(s['per_trial_mm']):>10.4f}{max(s['per_trial_mm']):>10.4f}{'':>9}")
    if scenarios:
        out["scenarios"] = {}
        for d in scenarios:
            rate = d["success_rate"]
            out["scenarios"][d["name"]] = {"n": d["n_trials"], "success_rate": rate}
            res = d["residuals_mm"]
            lines.append(f"{d['name']:<24}{d['n_trials']:>6}{np.mean(res):>10.4f}"
                         f"{np.std(res):>10.4f}{np.min(res):>10.4f}{np.max(res):>10.4f}"
                         f"{rate:>9.2f}")
    return "\n".join(lines), out
