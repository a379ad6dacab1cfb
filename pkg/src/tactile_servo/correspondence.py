"""Keypoint correspondence: highest-similarity search over a descriptor
grid, parabolic subpixel refinement, and a similarity/ratio confidence
gate motivated by boundary ambiguity failures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import DescriptorMap
from .sensor_core import KeypointSet


class NoContactError(RuntimeError):
    """Every cell of the current descriptor map is void: nothing touching."""


@dataclass(frozen=True)
class CorrespondenceOpts:
    s_min: float = 0.7
    r_min: float = 1.05
    suppression_radius_cells: int = 3
    subpixel: bool = True


@dataclass(frozen=True)
class Match:
    goal_point: tuple[float, float]
    found_point: tuple[float, float]
    similarity: float
    ratio: float
    confident: bool

    def to_dict(self) -> dict:
        return {"goal_point": list(self.goal_point),
                "found_point": list(self.found_point),
                "similarity": self.similarity,
                "ratio": self.ratio,
                "confident": self.confident}


def keypoint_descriptor(dmap: DescriptorMap, p) -> np.ndarray:
    """Descriptor at a continuous pixel position: bilinear blend of the four
    surrounding cells, re-normalized. Positions outside the grid coverage
    clamp to the nearest cell."""
    u, v = float(p[0]), float(p[1])
    gx = np.clip((u - dmap.origin[0]) / dmap.stride, 0.0, dmap.grid_w - 1.0)
    gy = np.clip((v - dmap.origin[1]) / dmap.stride, 0.0, dmap.grid_h - 1.0)
    x0, y0 = int(np.floor(gx)), int(np.floor(gy))
    x1, y1 = min(x0 + 1, dmap.grid_w - 1), min(y0 + 1, dmap.grid_h - 1)
    fx, fy = gx - x0, gy - y0
    d = dmap.data.astype(np.float64)
    vec = (d[y0, x0] * (1 - fx) * (1 - fy) + d[y0, x1] * fx * (1 - fy)
           + d[y1, x0] * (1 - fx) * fy + d[y1, x1] * fx * fy)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.zeros_like(vec)
    return vec / norm


def refine_subpixel(neighborhood: np.ndarray) -> tuple[float, float]:
    """Subcell offset from independent 1D parabola fits through the 3x3
    similarity neighborhood around a local max; non-concave or degenerate
    fits return 0, offsets clamp to [-0.5, 0.5] cells."""
    n = np.asarray(neighborhood, dtype=np.float64)
    if n.shape != (3, 3):
        raise ValueError(f"expected 3x3 neighborhood, got {n.shape}")
    if not np.all(np.isfinite(n)):
        return 0.0, 0.0

    def fit(s_minus, s0, s_plus):
        denom = s_minus - 2.0 * s0 + s_plus
        if denom >= -1e-15:
            return 0.0
        return float(np.clip((s_minus - s_plus) / (2.0 * denom), -0.5, 0.5))

    du = fit(n[1, 0], n[1, 1], n[1, 2])
    dv = fit(n[0, 1], n[1, 1], n[2, 1])
    return du, dv


def correspond(goal_map: DescriptorMap, cur_map: DescriptorMap,
               k_g: KeypointSet,
               opts: CorrespondenceOpts = CorrespondenceOpts()) -> list[Match]:
    """For each goal keypoint, the highest-similarity non-void cell of the
    current map (ties break to lowest row, col), optionally refined to
    subcell precision. Low-confidence matches are returned, just flagged."""
    if goal_map.dim != cur_map.dim:
        raise ValueError(f"descriptor dims differ: {goal_map.dim} vs {cur_map.dim}")

    gh, gw = cur_map.grid_h, cur_map.grid_w
    cells = cur_map.data.reshape(-1, cur_map.dim).astype(np.float64)
    void = cur_map.void_mask().ravel()
    if np.all(void):
        raise NoContactError("current descriptor map has no non-void cells")

    matches = []
    for u, v in k_g.points:
        gvec = keypoint_descriptor(goal_map, (u, v))
        if np.linalg.norm(gvec) < 1e-12:
            matches.append(Match(goal_point=(float(u), float(v)),
                                 found_point=(float(u), float(v)),
                                 similarity=float("-inf"), ratio=1.0,
                                 confident=False))
            continue

        sims = cells @ gvec
        sims[void] = -np.inf
        flat_best = int(np.argmax(sims))  # first max: lowest (row, col)
        row, col = divmod(flat_best, gw)
        best = float(sims[flat_best])

        sims_grid = sims.reshape(gh, gw)
        du = dv = 0.0
        if opts.subpixel and 1 <= row < gh - 1 and 1 <= col < gw - 1:
            du, dv = refine_subpixel(sims_grid[row - 1:row + 2, col - 1:col + 2])

        # second best outside the suppression neighborhood
        rad = opts.suppression_radius_cells
        r0, r1 = max(0, row - rad), min(gh, row + rad + 1)
        c0, c1 = max(0, col - rad), min(gw, col + rad + 1)
        masked = sims_grid.copy()
        masked[r0:r1, c0:c1] = -np.inf
        second = float(np.max(masked))
        if not np.isfinite(second) or second <= 0.0:
            ratio = float("inf")
        else:
            ratio = max(best / second, 1.0) if best > 0 else 1.0

        fu = cur_map.origin[0] + (col + du) * cur_map.stride
        fv = cur_map.origin[1] + (row + dv) * cur_map.stride
        fu = float(np.clip(fu, 0.0, cur_map.source_w - 1))
        fv = float(np.clip(fv, 0.0, cur_map.source_h - 1))

        confident = bool(best >= opts.s_min and ratio >= opts.r_min)
        matches.append(Match(goal_point=(float(u), float(v)),
                             found_point=(fu, fv),
                             similarity=best, ratio=ratio, confident=confident))
    return matches
