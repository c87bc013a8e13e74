"""Lift-splat: image features weighted by depth distributions, accumulated
into BEV grid cells, plus the Gaussian ground-truth heatmap used as the
classification target."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .geometry import BevGrid, CameraModel, camera_rays
from .scenesim import CH_CLASS, CLASSES, NUM_CLASSES

if TYPE_CHECKING:
    from .depthcrf import DepthDistribution
    from .scenesim import AgentFrame, Scene


@dataclass
class BevFeature:
    """C-channel feature grid over the perception range; cells never touched
    by any pixel stay exactly zero."""

    grid: BevGrid
    data: np.ndarray  # (n_x, n_y, C)
    agent: str
    domain: str

    @property
    def channels(self) -> int:
        return self.data.shape[-1]


def lift_splat(
    frame: "AgentFrame",
    dist: "DepthDistribution",
    cam: CameraModel,
    grid: BevGrid,
) -> BevFeature:
    """Sum-pool each visible pixel's feature, weighted by its depth
    probabilities, into the BEV cells its unprojections land in.

    Contributions falling outside the grid are dropped; everything else is
    conserved (accumulated in float64, order independent up to rounding).
    """
    h, w = frame.shape
    if dist.q.shape[:2] != (h, w):
        raise ValueError(
            f"depth distribution {dist.q.shape[:2]} does not match frame {(h, w)}"
        )
    n_x, n_y = grid.n_x, grid.n_y
    n_ch = frame.features.shape[-1]
    data = np.zeros(n_x * n_y * n_ch, dtype=np.float64)

    vs, us = np.nonzero(frame.visibility)
    if len(vs) > 0:
        rays = camera_rays(cam, us + 0.5, vs + 0.5)  # (N, 3), z_cam = 1
        centers = dist.bins.centers  # (K,)
        pos = cam.position
        # (N, K) world x/y of every pixel-bin unprojection.
        px = pos[0] + np.outer(rays[:, 0], centers)
        py = pos[1] + np.outer(rays[:, 1], centers)
        ix = np.floor((px - grid.x_min) / grid.cell_size).astype(np.int64)
        iy = np.floor((py - grid.y_min) / grid.cell_size).astype(np.int64)
        inside = (ix >= 0) & (ix < n_x) & (iy >= 0) & (iy < n_y)

        q = dist.q[vs, us]  # (N, K)
        feats = frame.features[vs, us].astype(np.float64)  # (N, C)
        cell = (ix * n_y + iy)[inside]
        weights = q[inside]
        pix_idx = np.broadcast_to(np.arange(len(vs))[:, None], inside.shape)[inside]
        base = cell * n_ch
        for c in range(n_ch):
            data += np.bincount(
                base + c,
                weights=weights * feats[pix_idx, c],
                minlength=data.size,
            )

    return BevFeature(
        grid=grid,
        data=data.reshape(n_x, n_y, n_ch),
        agent=frame.agent,
        domain=frame.domain,
    )


def gaussian_radius_cells(size, cell_size: float) -> float:
    """CenterNet-style splat radius: half the BEV footprint diagonal, in cells."""
    return max(1.0, 0.5 * float(np.hypot(size[0], size[1])) / cell_size)


def bev_gt_heatmap(scene: "Scene", grid: BevGrid) -> np.ndarray:
    """Per-class Gaussian heatmap with a unit peak at each object's center
    cell; overlapping splats combine by maximum."""
    heat = np.zeros((grid.n_x, grid.n_y, NUM_CLASSES))
    for obj in scene.objects:
        ix = int(np.floor((obj.center[0] - grid.x_min) / grid.cell_size))
        iy = int(np.floor((obj.center[1] - grid.y_min) / grid.cell_size))
        if not (0 <= ix < grid.n_x and 0 <= iy < grid.n_y):
            continue
        sigma = gaussian_radius_cells(obj.size, grid.cell_size) / 3.0
        reach = max(1, int(np.ceil(3.0 * sigma)))
        x_lo, x_hi = max(0, ix - reach), min(grid.n_x, ix + reach + 1)
        y_lo, y_hi = max(0, iy - reach), min(grid.n_y, iy + reach + 1)
        gx = np.arange(x_lo, x_hi) - ix
        gy = np.arange(y_lo, y_hi) - iy
        patch = np.exp(-(gx[:, None] ** 2 + gy[None, :] ** 2) / (2.0 * sigma**2))
        ci = CLASSES.index(obj.cls)
        np.maximum(heat[x_lo:x_hi, y_lo:y_hi, ci], patch, out=heat[x_lo:x_hi, y_lo:y_hi, ci])
    return heat


def class_mass(bev: BevFeature) -> np.ndarray:
    """Total accumulated class-channel mass per cell, (n_x, n_y)."""
    return bev.data[..., CH_CLASS].sum(axis=-1)
