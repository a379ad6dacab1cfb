"""Batch export of dense descriptors to TDSC interchange files.

The output grid follows the consumer's convention: cell (0, 0) is centered
at (stride/2, stride/2) pixels of the resized image and cells advance by
the stride in both axes. Backbone features are resampled onto that grid
bilinearly and L2-normalized per cell.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import FeatureMap, backbone_class

MAGIC = b"TDSC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIHffII")
_MAX_ELEMENTS = 1 << 31


class ExportError(RuntimeError):
    """Unusable export job (bad inputs, format limits)."""


@dataclass(frozen=True)
class ExportJob:
    images: tuple
    out_dir: str
    model: str = "dino_vits8"
    stride: int = 4
    layer: int = -1
    facet: str = "token"
    resize: tuple[int, int] = (224, 298)  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(str(p) for p in self.images))
        if not self.images:
            raise ExportError("no input images")
        if self.stride < 1:
            raise ExportError("stride must be >= 1")
        if self.resize[0] < 1 or self.resize[1] < 1:
            raise ExportError("resize target must be positive")


def _load_rgb(path: str, size: tuple[int, int]) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != size:
                im = im.resize(size, Image.BILINEAR)
            return np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise ExportError(f"cannot read image {path}: {e}") from e


def _grid_shape(width: int, height: int, stride: int) -> tuple[int, int, float]:
    origin = stride / 2.0
    gw = int((width - 1 - origin) // stride) + 1
    gh = int((height - 1 - origin) // stride) + 1
    return gh, gw, origin


def _resample(fmap: FeatureMap, gh: int, gw: int, origin: float,
              stride: int) -> np.ndarray:
    """Bilinearly sample the feature map at the output cell centers."""
    fh, fw, dim = fmap.data.shape
    us = origin + np.arange(gw) * stride
    vs = origin + np.arange(gh) * stride
    gx = np.clip((us - fmap.origin_px[0]) / fmap.step_px, 0.0, fw - 1.0)
    gy = np.clip((vs - fmap.origin_px[1]) / fmap.step_px, 0.0, fh - 1.0)
    x0 = np.floor(gx).astype(np.intp)
    y0 = np.floor(gy).astype(np.intp)
    x1 = np.minimum(x0 + 1, fw - 1)
    y1 = np.minimum(y0 + 1, fh - 1)
    fx = (gx - x0)[None, :, None]
    fy = (gy - y0)[:, None, None]
    d = fmap.data
    out = (d[np.ix_(y0, x0)] * (1 - fx) * (1 - fy)
           + d[np.ix_(y0, x1)] * fx * (1 - fy)
           + d[np.ix_(y1, x0)] * (1 - fx) * fy
           + d[np.ix_(y1, x1)] * fx * fy)
    return out.astype(np.float32)


def _write_tdsc(path: Path, data: np.ndarray, stride: int, origin: float,
                source_w: int, source_h: int) -> None:
    gh, gw, dim = data.shape
    n_elem = gh * gw * dim
    if n_elem > _MAX_ELEMENTS:
        raise ExportError(f"{n_elem} elements exceed format limit")
    header = _HEADER.pack(MAGIC, VERSION, gh, gw, dim, stride, origin, origin,
                          source_w, source_h)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def export(job: ExportJob) -> list[Path]:
    """Run the job; one .tdsc file per input image, named after its stem."""
    cls = backbone_class(job.model)
    if job.stride % cls.min_step_px != 0:
        raise ExportError(
            f"stride {job.stride} is not a multiple of the model's finest "
            f"feature step ({cls.min_step_px} px)")
    backbone = cls()

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width, height = job.resize
    gh, gw, origin = _grid_shape(width, height, job.stride)

    written = []
    for path in job.images:
        rgb = _load_rgb(path, (width, height))
        fmap = backbone.features(rgb, layer=job.layer, facet=job.facet)
        data = _resample(fmap, gh, gw, origin, job.stride)
        flat = data.reshape(-1, data.shape[2]).astype(np.float64)
        norms = np.linalg.norm(flat, axis=1, keepdims=True)
        flat = np.where(norms > 1e-12, flat / np.maximum(norms, 1e-12), 0.0)
        data = flat.reshape(data.shape).astype(np.float32)
        out_path = out_dir / (Path(path).stem + ".tdsc")
        _write_tdsc(out_path, data, job.stride, origin, width, height)
        written.append(out_path)
    return written
