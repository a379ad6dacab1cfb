"""Planar rigid displacement: estimation from keypoint pairs, SE(2)
composition, the termination norm, and the trial error metric.

The displacement (dx, dz, dtheta) is the correction added to the robot's
commanded pose so the next capture matches the goal. It equals the
least-squares rigid transform carrying goal keypoints onto current
keypoints, expressed in the centered metric frame (rotation about the
working image center, which models the gripper axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sensor_core import AxisMap, KeypointSet, SensorCalibration, px_to_centered_mm


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.remainder(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Displacement:
    """Planar rigid correction in the end-effector frame."""

    dx_mm: float = 0.0
    dz_mm: float = 0.0
    dtheta_rad: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.dx_mm, self.dz_mm, self.dtheta_rad)):
            raise ValueError("displacement components must be finite")
        object.__setattr__(self, "dtheta_rad", wrap_angle(self.dtheta_rad))

    def to_matrix(self) -> np.ndarray:
        """3x3 homogeneous SE(2) matrix."""
        c, s = math.cos(self.dtheta_rad), math.sin(self.dtheta_rad)
        return np.array([[c, -s, self.dx_mm],
                         [s, c, self.dz_mm],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Displacement":
        return cls(dx_mm=float(m[0, 2]), dz_mm=float(m[1, 2]),
                   dtheta_rad=math.atan2(m[1, 0], m[0, 0]))

    def to_dict(self) -> dict:
        return {"dx_mm": self.dx_mm, "dz_mm": self.dz_mm, "dtheta_rad": self.dtheta_rad}

    @classmethod
    def from_dict(cls, d: dict) -> "Displacement":
        return cls(float(d["dx_mm"]), float(d["dz_mm"]), float(d["dtheta_rad"]))

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        """Apply the rigid transform to (N, 2) points."""
        c, s = math.cos(self.dtheta_rad), math.sin(self.dtheta_rad)
        r = np.array([[c, -s], [s, c]])
        return np.asarray(pts, dtype=np.float64) @ r.T + np.array([self.dx_mm, self.dz_mm])


IDENTITY = Displacement(0.0, 0.0, 0.0)


def compose(a: Displacement, b: Displacement) -> Displacement:
    """SE(2) product a∘b: apply b first, then a (matrix product Ma·Mb)."""
    return Displacement.from_matrix(a.to_matrix() @ b.to_matrix())


def invert(d: Displacement) -> Displacement:
    c, s = math.cos(d.dtheta_rad), math.sin(d.dtheta_rad)
    # R^T * -t
    return Displacement(dx_mm=-(c * d.dx_mm + s * d.dz_mm),
                        dz_mm=-(-s * d.dx_mm + c * d.dz_mm),
                        dtheta_rad=-d.dtheta_rad)


class EstimationError(ValueError):
    """Keypoint configuration unusable for the requested estimation mode."""


@dataclass(frozen=True)
class EstimateResult:
    displacement: Displacement
    degenerate: bool = False
    mode_used: str = "rigid_2d"


def estimate_displacement(k_g: KeypointSet, k_c: KeypointSet,
                          cal: SensorCalibration,
                          mode: str = "rigid_2d",
                          axis_map: AxisMap = AxisMap()) -> EstimateResult:
    """Least-squares planar rigid fit of current keypoints to goal keypoints.

    rigid_2d solves min_R,t sum ||R g_i + t - c_i||^2 in closed form
    (2D Kabsch: centroid subtraction, atan2 of cross/dot covariance terms).
    translation_only returns the mean offset. Coincident goal keypoints in
    rigid_2d fall back to translation_only with the degenerate flag set.
    """
    if mode not in ("rigid_2d", "translation_only"):
        raise ValueError(f"unknown estimation mode {mode!r}")
    if k_g.k != k_c.k:
        raise EstimationError(f"keypoint counts differ: {k_g.k} vs {k_c.k}")
    k_min = 2 if mode == "rigid_2d" else 1
    if k_g.k < k_min:
        raise EstimationError(f"mode {mode} needs K >= {k_min}, got {k_g.k}")

    g = px_to_centered_mm(k_g.points, cal)
    c = px_to_centered_mm(k_c.points, cal)

    if mode == "translation_only":
        t = np.mean(c - g, axis=0)
        dx, dz = axis_map.to_robot(float(t[0]), float(t[1]))
        return EstimateResult(Displacement(dx, dz, 0.0), degenerate=False,
                              mode_used="translation_only")

    g_bar = g.mean(axis=0)
    c_bar = c.mean(axis=0)
    gp = g - g_bar
    cp = c - c_bar
    spread = float(np.sum(gp * gp))
    if spread < 1e-12:
        # rotation unobservable from coincident keypoints
        t = c_bar - g_bar
        dx, dz = axis_map.to_robot(float(t[0]), float(t[1]))
        return EstimateResult(Displacement(dx, dz, 0.0), degenerate=True,
                              mode_used="translation_only")
    dot = float(np.sum(gp * cp))
    cross = float(np.sum(gp[:, 0] * cp[:, 1] - gp[:, 1] * cp[:, 0]))
    theta = math.atan2(cross, dot)
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    t = c_bar - rot @ g_bar
    dx, dz = axis_map.to_robot(float(t[0]), float(t[1]))
    return EstimateResult(Displacement(dx, dz, theta), degenerate=False,
                          mode_used="rigid_2d")


def displacement_norm(d: Displacement, r_char_mm: float = 15.0) -> float:
    """Scalar mm magnitude for the threshold test: translation norm plus
    rotation arc length at a characteristic radius."""
    if r_char_mm <= 0:
        raise ValueError("r_char_mm must be > 0")
    return math.hypot(d.dx_mm, d.dz_mm) + r_char_mm * abs(d.dtheta_rad)


def below_thresholds(d: Displacement, translation_threshold_mm: float,
                     rotation_threshold_rad: float) -> bool:
    """Component-wise termination test (the default interpretation of
    |dP| < tau)."""
    return (math.hypot(d.dx_mm, d.dz_mm) < translation_threshold_mm
            and abs(d.dtheta_rad) < rotation_threshold_rad)


# ---------------------------------------------------------------------------
# trial error metric

@dataclass(frozen=True)
class TrialRecord:
    """One perturbation trial: commanded/true displacement vs estimate, mm."""

    real: tuple[float, float]
    est: tuple[float, float]

    def error_mm(self) -> float:
        return math.hypot(self.real[0] - self.est[0], self.real[1] - self.est[1])


@dataclass(frozen=True)
class ErrorStats:
    d_error: float
    std_dev: float
    n: int
    per_trial: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"d_error_mm": self.d_error, "std_dev_mm": self.std_dev,
                "n": self.n, "per_trial_mm": list(self.per_trial)}


def d_error(trials: list[TrialRecord]) -> ErrorStats:
    """Mean Euclidean x/z estimation error over trials, with the population
    standard deviation of the per-trial errors."""
    if not trials:
        raise ValueError("d_error requires at least one trial")
    errs = np.array([t.error_mm() for t in trials])
    return ErrorStats(d_error=float(errs.mean()),
                      std_dev=float(errs.std(ddof=0)),
                      n=len(trials),
                      per_trial=tuple(float(e) for e in errs))
