"""Synthetic gel-sensor renderer and simulated grasp plant.

The renderer turns closed polygons (mm, centered metric frame) into a
pseudo-heightmap via a signed-distance falloff, then shades it with three
azimuthally spaced directional lights mapped to the R/G/B channels, the
way camera-based gel sensors color-code surface slope. The plant tracks a
ground-truth object offset and the accumulated commanded correction so
experiments can score estimates against truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .displacement import Displacement, IDENTITY, compose, invert
from .sensor_core import SensorCalibration, TactileImage, image_center_px

# shading constants: light elevation, slope gain, contact-plateau gain
_LIGHT_ELEVATION_RAD = np.deg2rad(45.0)
_LIGHT_AZIMUTHS_RAD = np.deg2rad([0.0, 120.0, 240.0])
_SHADE_GAIN = 0.6
_CONTACT_GAIN = 0.35


class SceneError(ValueError):
    """Invalid contact scene description."""


def _polygon_is_simple(poly: np.ndarray) -> bool:
    """Reject self-intersecting polygons (O(M^2) segment test)."""
    m = len(poly)
    segs = [(poly[i], poly[(i + 1) % m]) for i in range(m)]

    def intersects(a, b, c, d):
        def orient(p, q, r):
            return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        o1, o2 = orient(a, b, c), orient(a, b, d)
        o3, o4 = orient(c, d, a), orient(c, d, b)
        return (o1 * o2 < 0) and (o3 * o4 < 0)

    for i in range(m):
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue  # adjacent segments share an endpoint
            if intersects(*segs[i], *segs[j]):
                return False
    return True


@dataclass(frozen=True)
class ContactScene:
    """Pressed-object geometry and gel appearance parameters.

    shapes: list of (M, 2) closed polygons in mm, object frame (the frame
    whose origin coincides with the sensor center at zero offset).
    """

    shapes: tuple
    press_depth_mm: float = 1.0
    edge_softness_mm: float = 0.4
    background_level: float = 0.35
    noise_sigma: float = 2.0 / 255.0

    def __post_init__(self):
        shapes = tuple(np.asarray(s, dtype=np.float64) for s in self.shapes)
        for s in shapes:
            if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] < 3:
                raise SceneError(f"polygon must be (M>=3, 2), got shape {s.shape}")
            if not np.all(np.isfinite(s)):
                raise SceneError("polygon vertices must be finite")
            if not _polygon_is_simple(s):
                raise SceneError("polygon is self-intersecting")
        for s in shapes:
            s.flags.writeable = False
        object.__setattr__(self, "shapes", shapes)
        if self.press_depth_mm <= 0:
            raise SceneError("press_depth_mm must be > 0")
        if self.edge_softness_mm <= 0:
            raise SceneError("edge_softness_mm must be > 0")
        if self.noise_sigma < 0:
            raise SceneError("noise_sigma must be >= 0")
        if not 0.0 <= self.background_level <= 1.0:
            raise SceneError("background_level must be in [0, 1]")

    def to_dict(self) -> dict:
        return {"shapes": [s.tolist() for s in self.shapes],
                "press_depth_mm": self.press_depth_mm,
                "edge_softness_mm": self.edge_softness_mm,
                "background_level": self.background_level,
                "noise_sigma": self.noise_sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "ContactScene":
        return cls(shapes=tuple(np.array(s, dtype=np.float64) for s in d["shapes"]),
                   press_depth_mm=float(d.get("press_depth_mm", 1.0)),
                   edge_softness_mm=float(d.get("edge_softness_mm", 0.4)),
                   background_level=float(d.get("background_level", 0.35)),
                   noise_sigma=float(d.get("noise_sigma", 2.0 / 255.0)))


def load_scene(path) -> ContactScene:
    return ContactScene.from_dict(json.loads(Path(path).read_text()))


def save_scene(scene: ContactScene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2) + "\n")


def _signed_distance_polygon(px: np.ndarray, pz: np.ndarray,
                             poly: np.ndarray) -> np.ndarray:
    """Signed distance of query points to a polygon, positive inside."""
    q = np.stack([px.ravel(), pz.ravel()], axis=1)  # (N, 2)
    n = len(poly)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a  # (M, 2)
    ab_len2 = np.maximum(np.sum(ab * ab, axis=1), 1e-30)

    # distance to each segment
    aq = q[:, None, :] - a[None, :, :]  # (N, M, 2)
    t = np.clip(np.einsum("nmk,mk->nm", aq, ab) / ab_len2, 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    diff = q[:, None, :] - proj
    dist = np.sqrt(np.min(np.sum(diff * diff, axis=2), axis=1))

    # even-odd crossing test for interior
    x, z = q[:, 0], q[:, 1]
    ax, az = a[:, 0], a[:, 1]
    bx, bz = b[:, 0], b[:, 1]
    cond = (az[None, :] > z[:, None]) != (bz[None, :] > z[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax[None, :] + (z[:, None] - az[None, :]) / (bz[None, :] - az[None, :]) * (bx[None, :] - ax[None, :])
    crossings = np.sum(cond & (x[:, None] < x_cross), axis=1)
    inside = crossings % 2 == 1

    sd = np.where(inside, dist, -dist)
    return sd.reshape(px.shape)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def heightmap(scene: ContactScene, offset: Displacement,
              cal: SensorCalibration) -> np.ndarray:
    """Gel indentation height in mm over the working pixel grid."""
    w, h = cal.working_width_px, cal.working_height_px
    cu, cv = image_center_px(cal)
    xs = (np.arange(w) - cu) * cal.mm_per_px_u
    zs = (np.arange(h) - cv) * cal.mm_per_px_v
    px, pz = np.meshgrid(xs, zs)
    # query in object frame: inverse-transform the pixel grid
    inv = invert(offset)
    c, s = np.cos(inv.dtheta_rad), np.sin(inv.dtheta_rad)
    qx = c * px - s * pz + inv.dx_mm
    qz = s * px + c * pz + inv.dz_mm

    height = np.zeros((h, w))
    soft = scene.edge_softness_mm
    for poly in scene.shapes:
        # signed distance only matters inside the polygon bbox plus the
        # falloff margin; everything else stays at zero height
        margin = soft + max(cal.mm_per_px_u, cal.mm_per_px_v)
        mask = ((qx >= poly[:, 0].min() - margin) & (qx <= poly[:, 0].max() + margin)
                & (qz >= poly[:, 1].min() - margin) & (qz <= poly[:, 1].max() + margin))
        if not np.any(mask):
            continue
        sd = _signed_distance_polygon(qx[mask], qz[mask], poly)
        t = np.clip(sd / soft, 0.0, 1.0)
        hp = scene.press_depth_mm * _smoothstep(t)
        height[mask] = np.maximum(height[mask], hp)
    return height


def render(scene: ContactScene, offset: Displacement, cal: SensorCalibration,
           seed: int = 0) -> TactileImage:
    """Deterministic RGB render of the scene at the given object offset."""
    hmap = heightmap(scene, offset, cal)
    dz_dv, dz_du = np.gradient(hmap, cal.mm_per_px_v, cal.mm_per_px_u)
    # surface normal of the indented gel (pointing toward the camera)
    norm = np.sqrt(dz_du ** 2 + dz_dv ** 2 + 1.0)
    nx, nz, ny = -dz_du / norm, -dz_dv / norm, 1.0 / norm

    sin_el = np.sin(_LIGHT_ELEVATION_RAD)
    cos_el = np.cos(_LIGHT_ELEVATION_RAD)
    contact = _CONTACT_GAIN * (hmap / scene.press_depth_mm)
    channels = []
    for az in _LIGHT_AZIMUTHS_RAD:
        lx, lz, ly = np.cos(az) * cos_el, np.sin(az) * cos_el, sin_el
        ndotl = nx * lx + nz * lz + ny * ly
        shade = _SHADE_GAIN * (ndotl - sin_el)
        channels.append(scene.background_level + shade + contact)
    img = np.stack(channels, axis=2)

    if scene.noise_sigma > 0:
        rng = np.random.default_rng([seed & 0x7FFFFFFF, 0x6E5])
        img = img + rng.normal(0.0, scene.noise_sigma, img.shape)

    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return TactileImage(pixels=pixels, calibration=cal)


@dataclass
class PlantState:
    """Simulated grasp plant: ground-truth object offset plus the
    accumulated commanded correction. Single-owner; captures advance the
    noise stream deterministically."""

    scene: ContactScene
    true_offset: Displacement = IDENTITY
    actuation_noise: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rng_seed: int = 0
    commanded: Displacement = IDENTITY
    capture_count: int = 0
    capture_log: list = field(default_factory=list)

    def __post_init__(self):
        if any(s < 0 for s in self.actuation_noise):
            raise ValueError("actuation noise stds must be >= 0")

    def residual(self) -> Displacement:
        """Ground-truth pose error remaining after the commanded correction."""
        return compose(invert(self.commanded), self.true_offset)


def grasp_capture(plant: PlantState, cal: SensorCalibration,
                  commanded: Displacement | None = None) -> TactileImage:
    """Simulate one grip attempt: render the scene at the residual pose
    plus a fresh actuation-noise sample. The actual rendered offset is
    appended to plant.capture_log for ground-truth evaluation."""
    if commanded is None:
        commanded = plant.commanded
    rel = compose(invert(commanded), plant.true_offset)
    rng = np.random.default_rng([plant.rng_seed & 0x7FFFFFFF, plant.capture_count])
    sx, sz, st = plant.actuation_noise
    if sx > 0 or sz > 0 or st > 0:
        rel = Displacement(rel.dx_mm + rng.normal(0.0, sx) if sx > 0 else rel.dx_mm,
                           rel.dz_mm + rng.normal(0.0, sz) if sz > 0 else rel.dz_mm,
                           rel.dtheta_rad + rng.normal(0.0, st) if st > 0 else rel.dtheta_rad)
    render_seed = int(rng.integers(0, 2 ** 31 - 1))
    plant.capture_count += 1
    plant.capture_log.append(rel)
    return render(plant.scene, rel, cal, seed=render_seed)


def apply_adjustment(plant: PlantState, dp: Displacement) -> PlantState:
    """Compose the commanded correction with dp (full SE(2) composition;
    applying the exact residual zeroes it)."""
    new_commanded = compose(plant.commanded, dp)
    return replace(plant, commanded=new_commanded)
