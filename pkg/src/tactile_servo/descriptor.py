"""Dense descriptor extraction and the binary interchange format.

The built-in descriptor is analytic (no network): per grid cell it
concatenates contrast-normalized gray patches at two scales, a gradient
orientation histogram, and per-channel color means, then L2-normalizes.
Externally computed descriptor maps (e.g. transformer features) enter
through the same "TDSC" file format and are interchangeable downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .sensor_core import TactileImage

VOID_VARIANCE = 1e-6  # patches flatter than this become all-zero cells

_W_PATCH = 1.0
_W_HIST = 0.5
_W_COLOR = 0.25


class DescriptorError(ValueError):
    """Image unusable for descriptor extraction."""


@dataclass(frozen=True)
class DescriptorParams:
    stride: int = 4
    patch_radius: int = 2
    orientation_bins: int = 8
    scales: tuple[int, ...] = (1, 2, 4)
    blur_per_scale: float = 1.2  # Gaussian sigma per unit scale, in px

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.orientation_bins < 4:
            raise ValueError("orientation_bins must be >= 4")
        if self.patch_radius < 1 or any(s < 1 for s in self.scales) or not self.scales:
            raise ValueError("invalid patch geometry")

    @property
    def dim(self) -> int:
        side = 2 * self.patch_radius + 1
        return len(self.scales) * side * side + self.orientation_bins + 3


@dataclass(frozen=True)
class DescriptorMap:
    """Grid of unit-norm feature vectors at fixed stride over an image.

    Cells over uniform regions are all-zero ("void") and are excluded from
    similarity ranking.
    """

    data: np.ndarray  # (grid_h, grid_w, dim) float32
    stride: int
    origin: tuple[float, float]  # pixel coordinate of cell (0, 0) center
    source_w: int
    source_h: int

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"expected (gh, gw, dim) data, got shape {d.shape}")
        d = np.ascontiguousarray(d)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def grid_h(self) -> int:
        return self.data.shape[0]

    @property
    def grid_w(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def void_mask(self) -> np.ndarray:
        """(gh, gw) boolean mask of void cells."""
        return np.einsum("ijk,ijk->ij", self.data, self.data) < 1e-12

    def cell_center_px(self, row, col):
        """Pixel coordinates (u, v) of cell centers; accepts arrays."""
        return (self.origin[0] + np.asarray(col) * self.stride,
                self.origin[1] + np.asarray(row) * self.stride)


def _bilinear_sample(field: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Sample a 2D float field at continuous (u, v), clamped at borders."""
    h, w = field.shape
    u = np.clip(us, 0.0, w - 1.0)
    v = np.clip(vs, 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    return (field[v0, u0] * (1 - fu) * (1 - fv) + field[v0, u1] * fu * (1 - fv)
            + field[v1, u0] * (1 - fu) * fv + field[v1, u1] * fu * fv)


def _l2_rows(block: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Row-wise L2 normalization; rows below eps norm become zero."""
    norms = np.linalg.norm(block, axis=1, keepdims=True)
    out = np.where(norms > eps, block / np.maximum(norms, eps), 0.0)
    return out


def extract(img: TactileImage, params: DescriptorParams = DescriptorParams()) -> DescriptorMap:
    """Dense descriptor map of an image at the configured stride."""
    r = params.patch_radius
    extent = 2 * r * max(params.scales) + 1
    if img.width < extent or img.height < extent:
        raise DescriptorError(
            f"image {img.width}x{img.height} smaller than one {extent}px patch")

    gray = img.to_gray()
    ou = ov = params.stride / 2.0
    gw = int((img.width - 1 - ou) // params.stride) + 1
    gh = int((img.height - 1 - ov) // params.stride) + 1

    cols, rows = np.meshgrid(np.arange(gw), np.arange(gh))
    cu = (ou + cols * params.stride).ravel()  # (N,)
    cv = (ov + rows * params.stride).ravel()
    n = cu.size

    offs = np.arange(-r, r + 1, dtype=np.float64)
    dv, du = np.meshgrid(offs, offs, indexing="ij")
    du, dv = du.ravel(), dv.ravel()  # (P,)

    blocks = []
    base_samples = None
    smoothed = {s: gaussian_filter(gray, sigma=params.blur_per_scale * s,
                                   mode="nearest")
                for s in set(params.scales)}
    for scale in params.scales:
        us = cu[:, None] + du[None, :] * scale
        vs = cv[:, None] + dv[None, :] * scale
        samples = _bilinear_sample(smoothed[scale], us, vs)  # (N, P)
        if scale == params.scales[0]:
            base_samples = samples
        centered = samples - samples.mean(axis=1, keepdims=True)
        blocks.append(_W_PATCH * _l2_rows(centered, eps=1e-6))

    # gradient orientation histogram over the widest patch footprint
    smax = max(params.scales)
    gz_v, gz_u = np.gradient(smoothed[smax])
    us = cu[:, None] + du[None, :] * smax
    vs = cv[:, None] + dv[None, :] * smax
    gu = _bilinear_sample(gz_u, us, vs)
    gv = _bilinear_sample(gz_v, us, vs)
    mag = np.hypot(gu, gv)
    ang = np.arctan2(gv, gu)  # [-pi, pi]
    nb = params.orientation_bins
    bins = np.floor((ang + np.pi) / (2 * np.pi / nb)).astype(np.intp) % nb
    flat = (np.arange(n)[:, None] * nb + bins).ravel()
    hist = np.bincount(flat, weights=mag.ravel(), minlength=n * nb).reshape(n, nb)
    blocks.append(_W_HIST * _l2_rows(hist))

    # per-channel color means over the base window
    chans = img.pixels.astype(np.float64) / 255.0
    if img.channels == 1:
        chans = np.repeat(chans, 3, axis=2)
    us1 = cu[:, None] + du[None, :]
    vs1 = cv[:, None] + dv[None, :]
    color = np.stack([_bilinear_sample(chans[:, :, c], us1, vs1).mean(axis=1)
                      for c in range(3)], axis=1)
    blocks.append(_W_COLOR * _l2_rows(color))

    vecs = np.concatenate(blocks, axis=1)
    void = base_samples.var(axis=1) < VOID_VARIANCE
    vecs[void] = 0.0
    vecs = _l2_rows(vecs)

    data = vecs.reshape(gh, gw, -1).astype(np.float32)
    return DescriptorMap(data=data, stride=params.stride, origin=(ou, ov),
                         source_w=img.width, source_h=img.height)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit descriptor vectors; void (zero) operands rank
    below everything via the -inf sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor dims differ: {a.shape} vs {b.shape}")
    if np.dot(a, a) < 1e-12 or np.dot(b, b) < 1e-12:
        return float("-inf")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


# ---------------------------------------------------------------------------
# "TDSC" interchange format (little-endian):
#   magic "TDSC" | u16 version=1 | u32 grid_h | u32 grid_w | u32 dim
#   | u16 stride | f32 origin_u | f32 origin_v | u32 source_w | u32 source_h
#   | grid_h*grid_w*dim f32 row-major

MAGIC = b"TDSC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIHffII")
_MAX_ELEMENTS = 1 << 31


class DescriptorFileError(ValueError):
    """Base error for interchange file problems."""


class BadMagicError(DescriptorFileError):
    pass


class VersionMismatchError(DescriptorFileError):
    pass


class TruncatedFileError(DescriptorFileError):
    pass


class DimensionOverflowError(DescriptorFileError):
    pass


def save_descriptor_file(dmap: DescriptorMap, path) -> None:
    n_elem = dmap.grid_h * dmap.grid_w * dmap.dim
    if n_elem > _MAX_ELEMENTS:
        raise DimensionOverflowError(f"{n_elem} elements exceed format limit")
    header = _HEADER.pack(MAGIC, VERSION, dmap.grid_h, dmap.grid_w, dmap.dim,
                          dmap.stride, dmap.origin[0], dmap.origin[1],
                          dmap.source_w, dmap.source_h)
    payload = np.ascontiguousarray(dmap.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def load_descriptor_file(path, renormalize_tolerance: float = 1e-3) -> DescriptorMap:
    """Read a TDSC file. Non-void cells whose norms drift beyond the
    tolerance (external exporters, float truncation) are re-normalized."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"file shorter than {_HEADER.size}-byte header")
    magic, version, gh, gw, dim, stride, ou, ov, sw, sh = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    n_elem = gh * gw * dim
    if n_elem == 0 or n_elem > _MAX_ELEMENTS:
        raise DimensionOverflowError(f"header declares {gh}x{gw}x{dim} elements")
    expected = _HEADER.size + 4 * n_elem
    if len(raw) < expected:
        raise TruncatedFileError(
            f"payload truncated: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=n_elem,
                         offset=_HEADER.size).reshape(gh, gw, dim).copy()

    norms = np.linalg.norm(data.reshape(-1, dim), axis=1)
    nonvoid = norms > 1e-12
    if np.any(nonvoid & (np.abs(norms - 1.0) > renormalize_tolerance)):
        flat = data.reshape(-1, dim)
        flat[nonvoid] /= norms[nonvoid, None]
        data = flat.reshape(gh, gw, dim)

    return DescriptorMap(data=data, stride=int(stride), origin=(float(ou), float(ov)),
                         source_w=int(sw), source_h=int(sh))
