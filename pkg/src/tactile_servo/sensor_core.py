"""Core sensor types, calibration, and pixel/metric conversions.

Coordinate conventions used throughout the package:
  * pixel coordinates (u, v): u along image width, v along image height,
    continuous, pixel centers at integer positions.
  * metric coordinates (x, z) in mm: u maps to x and v maps to z (the
    end-effector moves in the x/z plane); signs configurable via AxisMap.
  * the "centered" metric frame has its origin at the working image center,
    which is also the rotation center of commanded pose corrections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image


class CalibrationError(ValueError):
    """Invalid sensor calibration."""


class ImageFormatError(ValueError):
    """Malformed or unsupported tactile image data."""


class KeypointBoundsError(ValueError):
    """Keypoint outside the image it is attached to."""


@dataclass(frozen=True)
class SensorCalibration:
    """Geometry of the gel sensor's imaging window.

    mm_per_px defaults stay at the native isotropic scale (0.075 mm/px,
    i.e. 50 px == 3.75 mm) even after resizing to the working resolution;
    pass ``rescale_mm_per_px=True`` to :func:`resize_to_working` for the
    geometrically recomputed alternative.
    """

    sensing_width_mm: float = 18.0
    sensing_height_mm: float = 24.0
    native_width_px: int = 240
    native_height_px: int = 320
    working_width_px: int = 224
    working_height_px: int = 298
    mm_per_px_u: float = 0.075
    mm_per_px_v: float = 0.075

    def __post_init__(self):
        vals = (self.sensing_width_mm, self.sensing_height_mm,
                self.native_width_px, self.native_height_px,
                self.working_width_px, self.working_height_px,
                self.mm_per_px_u, self.mm_per_px_v)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise CalibrationError("all calibration fields must be finite and > 0")

    @classmethod
    def native(cls) -> "SensorCalibration":
        """Calibration with the working resolution equal to the native one."""
        return cls(working_width_px=240, working_height_px=320)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SensorCalibration":
        return cls(**d)


@dataclass(frozen=True)
class AxisMap:
    """Mapping from image axes (u, v) to end-effector axes (x, z)."""

    sign_x: float = 1.0
    sign_z: float = 1.0

    def to_robot(self, du_mm: float, dv_mm: float) -> tuple[float, float]:
        return self.sign_x * du_mm, self.sign_z * dv_mm

    def from_robot(self, dx_mm: float, dz_mm: float) -> tuple[float, float]:
        return dx_mm / self.sign_x, dz_mm / self.sign_z


@dataclass(frozen=True)
class TactileImage:
    """8-bit tactile image with attached calibration.

    ``pixels`` has shape (height, width, channels), dtype uint8, and is
    frozen after construction.
    """

    pixels: np.ndarray
    calibration: SensorCalibration

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ImageFormatError(f"expected HxWx{{1,3}} pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageFormatError("image dimensions must be positive")
        if px.dtype != np.uint8:
            raise ImageFormatError(f"pixels must be uint8, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def to_gray(self) -> np.ndarray:
        """Grayscale float64 image in [0, 1]."""
        f = self.pixels.astype(np.float64) / 255.0
        if self.channels == 1:
            return f[:, :, 0]
        return f @ np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class KeypointSet:
    """Ordered (u, v) pixel keypoints; index i here pairs with index i in
    the corresponding set from the other image."""

    points: np.ndarray  # (K, 2) float64, columns (u, v)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"expected (K>=1, 2) point array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoints must be finite")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    def validate_within(self, width: int, height: int) -> None:
        u, v = self.points[:, 0], self.points[:, 1]
        bad = (u < 0) | (u >= width) | (v < 0) | (v >= height)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise KeypointBoundsError(
                f"keypoint {i} at ({u[i]:.2f}, {v[i]:.2f}) outside {width}x{height} image")


@dataclass(frozen=True)
class GoalSpec:
    """Demonstration-phase record: goal image, its keypoints, gripper width
    and the displacement thresholds for loop termination."""

    goal_image: TactileImage
    goal_keypoints: KeypointSet
    gripper_width_mm: float
    translation_threshold_mm: float = 0.3
    rotation_threshold_rad: float = 0.03

    def __post_init__(self):
        if self.translation_threshold_mm <= 0 or self.rotation_threshold_rad <= 0:
            raise ValueError("thresholds must be > 0")
        self.goal_keypoints.validate_within(self.goal_image.width, self.goal_image.height)


def px_to_mm(p, cal: SensorCalibration) -> tuple[float, float]:
    """Pixel pair (u, v) to mm, linear and origin-preserving."""
    u, v = p
    return u * cal.mm_per_px_u, v * cal.mm_per_px_v


def mm_to_px(p, cal: SensorCalibration) -> tuple[float, float]:
    """Exact inverse of :func:`px_to_mm`."""
    x, z = p
    return x / cal.mm_per_px_u, z / cal.mm_per_px_v


def image_center_px(cal: SensorCalibration) -> tuple[float, float]:
    """Center of the working image in pixel coordinates (pixel centers at
    integers, so the center of a W-wide image is (W-1)/2)."""
    return (cal.working_width_px - 1) / 2.0, (cal.working_height_px - 1) / 2.0


def px_to_centered_mm(points: np.ndarray, cal: SensorCalibration) -> np.ndarray:
    """(N, 2) pixel coords to mm in the centered metric frame."""
    pts = np.asarray(points, dtype=np.float64)
    cu, cv = image_center_px(cal)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] - cu) * cal.mm_per_px_u
    out[..., 1] = (pts[..., 1] - cv) * cal.mm_per_px_v
    return out


def centered_mm_to_px(points: np.ndarray, cal: SensorCalibration) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    cu, cv = image_center_px(cal)
    out = np.empty_like(pts)
    out[..., 0] = pts[..., 0] / cal.mm_per_px_u + cu
    out[..., 1] = pts[..., 1] / cal.mm_per_px_v + cv
    return out


def _bilinear_resize(channel: np.ndarray, tw: int, th: int) -> np.ndarray:
    """Deterministic bilinear resample of a single float channel."""
    sh, sw = channel.shape
    # map target pixel centers into source pixel coordinates
    u = (np.arange(tw) + 0.5) * (sw / tw) - 0.5
    v = (np.arange(th) + 0.5) * (sh / th) - 0.5
    u = np.clip(u, 0.0, sw - 1.0)
    v = np.clip(v, 0.0, sh - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, sw - 1)
    v1 = np.minimum(v0 + 1, sh - 1)
    fu = (u - u0)[None, :]
    fv = (v - v0)[:, None]
    a = channel[np.ix_(v0, u0)]
    b = channel[np.ix_(v0, u1)]
    c = channel[np.ix_(v1, u0)]
    d = channel[np.ix_(v1, u1)]
    return (a * (1 - fu) * (1 - fv) + b * fu * (1 - fv)
            + c * (1 - fu) * fv + d * fu * fv)


def resize_to_working(img: TactileImage, target: tuple[int, int],
                      rescale_mm_per_px: bool = False) -> TactileImage:
    """Bilinear resample to target (width, height) working resolution.

    By default mm_per_px is kept (paper-scale arithmetic); with
    ``rescale_mm_per_px`` it is recomputed from the sensing area.
    """
    tw, th = int(target[0]), int(target[1])
    if tw <= 0 or th <= 0:
        raise ValueError(f"degenerate resize target {target}")
    if (tw, th) == (img.width, img.height):
        new_px = img.pixels
    else:
        src = img.pixels.astype(np.float64)
        out = np.stack([_bilinear_resize(src[:, :, c], tw, th)
                        for c in range(img.channels)], axis=2)
        new_px = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    cal = img.calibration
    if rescale_mm_per_px:
        mmu = cal.sensing_width_mm / tw
        mmv = cal.sensing_height_mm / th
    else:
        mmu, mmv = cal.mm_per_px_u, cal.mm_per_px_v
    new_cal = SensorCalibration(
        sensing_width_mm=cal.sensing_width_mm,
        sensing_height_mm=cal.sensing_height_mm,
        native_width_px=cal.native_width_px,
        native_height_px=cal.native_height_px,
        working_width_px=tw, working_height_px=th,
        mm_per_px_u=mmu, mm_per_px_v=mmv)
    return TactileImage(pixels=new_px, calibration=new_cal)


# ---------------------------------------------------------------------------
# image / goal-spec IO

def save_image(img: TactileImage, path) -> None:
    """Write PNG or binary PGM/PPM depending on the file extension."""
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    Image.fromarray(arr).save(str(path))


def load_image(path, calibration: SensorCalibration | None = None) -> TactileImage:
    """Read a PNG/PGM/PPM file; calibration defaults to a working-size
    default with the image's own pixel dimensions."""
    with Image.open(str(path)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if calibration is None:
        h, w = arr.shape[:2]
        calibration = SensorCalibration(working_width_px=w, working_height_px=h)
    return TactileImage(pixels=arr, calibration=calibration)


def save_goal_spec(spec: GoalSpec, json_path, image_path=None) -> None:
    """Serialize a GoalSpec: PNG for the image plus a JSON document."""
    json_path = Path(json_path)
    if image_path is None:
        image_path = json_path.with_suffix(".png")
    image_path = Path(image_path)
    save_image(spec.goal_image, image_path)
    doc = {
        "goal_image": image_path.name if image_path.parent == json_path.parent
        else str(image_path),
        "keypoints": [[float(u), float(v)] for u, v in spec.goal_keypoints.points],
        "gripper_width_mm": spec.gripper_width_mm,
        "translation_threshold_mm": spec.translation_threshold_mm,
        "rotation_threshold_rad": spec.rotation_threshold_rad,
        "calibration": spec.goal_image.calibration.to_dict(),
    }
    json_path.write_text(json.dumps(doc, indent=2) + "\n")


def load_goal_spec(json_path) -> GoalSpec:
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    cal = SensorCalibration.from_dict(doc["calibration"])
    img_path = Path(doc["goal_image"])
    if not img_path.is_absolute():
        img_path = json_path.parent / img_path
    img = load_image(img_path, cal)
    return GoalSpec(
        goal_image=img,
        goal_keypoints=KeypointSet(np.array(doc["keypoints"], dtype=np.float64)),
        gripper_width_mm=float(doc["gripper_width_mm"]),
        translation_threshold_mm=float(doc["translation_threshold_mm"]),
        rotation_threshold_rad=float(doc["rotation_threshold_rad"]),
    )
