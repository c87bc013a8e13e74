"""Deterministic BEV decoder: class-channel peaks become scored 3D boxes.

Lifted class mass is spread over an object's visible footprint rather than
peaked at its center (nothing is trained here), so decoding first performs
a center-voting re-bin: every cell's accumulated features are moved to the
cell its mean offset points at, offsets rebased accordingly. Votes from one
object agree, which collapses the footprint plateau into a single lump.
A cell of the voted map is then a peak when it beats all eight 3x3
neighbors, with equal values resolved in favor of the lexicographically
lowest (ix, iy). Regression channels are accumulated sums and are
normalized by the cell's total class mass before decoding.

The decoded heatmap value is the saturating transform m / (1 + m) of the
voted class mass m, so scores live in [0, 1) and rank detections by
accumulated evidence: a stray single-bin vote cannot outrank a real
object's pixel mass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bevlift import BevFeature
from .geometry import BevGrid
from .scenesim import (
    CH_CLASS,
    CH_OFFSET,
    CH_LOGSIZE,
    CH_VEL,
    CH_YAW,
    CLASSES,
    NUM_FEATURE_CHANNELS,
)

DETECTIONS_FILE_VERSION = 1
DEFAULT_SCORE_THRESHOLD = 0.2
_MASS_EPS = 1e-12


def mass_to_score(mass):
    """Saturating heatmap value in [0, 1): more accumulated mass, higher score."""
    return mass / (1.0 + mass)


@dataclass(frozen=True)
class Box3D:
    center: np.ndarray  # (3,) meters
    size: tuple  # (l, w, h)
    yaw: float  # radians in (-pi, pi]
    velocity: np.ndarray  # (2,) m/s
    cls: str
    score: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if min(self.size) <= 0:
            raise ValueError("box size must be positive")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        yaw = normalize_yaw(self.yaw)
        object.__setattr__(self, "yaw", yaw)

    @property
    def bev_center(self) -> np.ndarray:
        return self.center[:2]


def normalize_yaw(yaw: float) -> float:
    """Wrap into the half-open interval (-pi, pi]."""
    y = float(np.arctan2(np.sin(yaw), np.cos(yaw)))
    if y <= -np.pi:
        y = np.pi
    return y


def _peak_mask(heat: np.ndarray) -> np.ndarray:
    """3x3 local maxima with lowest-(ix, iy) lexicographic tie-breaking."""
    n_x, n_y = heat.shape
    padded = np.full((n_x + 2, n_y + 2), -np.inf)
    padded[1:-1, 1:-1] = heat
    mask = np.ones_like(heat, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nb = padded[1 + dx : 1 + dx + n_x, 1 + dy : 1 + dy + n_y]
            # On exact ties the lexicographically lower cell survives:
            # the neighbor at a positive offset is lexicographically higher.
            if (dx, dy) > (0, 0):
                mask &= heat >= nb
            else:
                mask &= heat > nb
    return mask


def _center_vote_rebin(data: np.ndarray, grid: BevGrid) -> np.ndarray:
    """Move every cell's accumulated features to the cell its mean offset
    points at; offsets are rebased to the receiving cell. Votes leaving the
    grid are dropped."""
    n_x, n_y, n_ch = data.shape
    mass = data[..., CH_CLASS].sum(axis=-1)
    src = np.argwhere(mass > _MASS_EPS)
    if len(src) == 0:
        return np.zeros_like(data)
    m = mass[src[:, 0], src[:, 1]]
    rows = data[src[:, 0], src[:, 1]]
    cx, cy = grid.cell_center(src[:, 0], src[:, 1])
    est_x = cx + rows[:, CH_OFFSET][:, 0] / m
    est_y = cy + rows[:, CH_OFFSET][:, 1] / m
    vx = np.floor((est_x - grid.x_min) / grid.cell_size).astype(np.int64)
    vy = np.floor((est_y - grid.y_min) / grid.cell_size).astype(np.int64)
    ok = (vx >= 0) & (vx < n_x) & (vy >= 0) & (vy < n_y)
    vx, vy, m, rows = vx[ok], vy[ok], m[ok], rows[ok]
    tx, ty = grid.cell_center(vx, vy)
    rebased = rows.copy()
    rebased[:, CH_OFFSET] = np.stack([m * (est_x[ok] - tx), m * (est_y[ok] - ty)], axis=-1)
    out = np.zeros(n_x * n_y * n_ch)
    flat = (vx * n_y + vy) * n_ch
    for c in range(n_ch):
        out += np.bincount(flat + c, weights=rebased[:, c], minlength=out.size)
    return out.reshape(n_x, n_y, n_ch)


def decode(
    f_p: BevFeature,
    grid: BevGrid | None = None,
    threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> list:
    """Decode scored boxes from a fused/lifted BEV feature map."""
    grid = grid or f_p.grid
    if f_p.data.shape[-1] != NUM_FEATURE_CHANNELS:
        raise ValueError(
            f"expected {NUM_FEATURE_CHANNELS} channels, got {f_p.data.shape[-1]}"
        )
    data = _center_vote_rebin(np.asarray(f_p.data, dtype=float), grid)
    mass = data[..., CH_CLASS].sum(axis=-1)
    boxes = []
    for ci, cls in enumerate(CLASSES):
        heat = mass_to_score(np.maximum(data[..., ci], 0.0))
        peaks = _peak_mask(heat) & (heat >= threshold)
        for ix, iy in np.argwhere(peaks):
            reg = data[ix, iy, :] / max(mass[ix, iy], _MASS_EPS)
            cx, cy = grid.cell_center(ix, iy)
            offset = reg[CH_OFFSET]
            size = tuple(np.exp(reg[CH_LOGSIZE]))
            yaw = float(np.arctan2(reg[CH_YAW][0], reg[CH_YAW][1]))
            center = np.array([cx + offset[0], cy + offset[1], -size[2] / 2.0])
            boxes.append(
                Box3D(
                    center=center,
                    size=size,
                    yaw=yaw,
                    velocity=reg[CH_VEL],
                    cls=cls,
                    score=float(np.clip(heat[ix, iy], 0.0, 1.0)),
                )
            )
    return boxes


def boxes_to_dict(boxes, scene_id: str, seed: int) -> dict:
    return {
        "version": DETECTIONS_FILE_VERSION,
        "scene_id": scene_id,
        "seed": seed,
        "boxes": [
            {
                "class": b.cls,
                "center": b.center.tolist(),
                "size": list(b.size),
                "yaw": b.yaw,
                "velocity": b.velocity.tolist(),
                "score": b.score,
            }
            for b in boxes
        ],
    }


def boxes_from_dict(doc: dict):
    if doc.get("version") != DETECTIONS_FILE_VERSION:
        raise ValueError(f"unsupported detections version {doc.get('version')!r}")
    boxes = [
        Box3D(
            center=np.array(b["center"]),
            size=tuple(b["size"]),
            yaw=b["yaw"],
            velocity=np.array(b["velocity"]),
            cls=b["class"],
            score=b["score"],
        )
        for b in doc["boxes"]
    ]
    return boxes, doc["scene_id"], doc["seed"]


def save_detections(boxes, scene_id: str, seed: int, path) -> None:
    Path(path).write_text(json.dumps(boxes_to_dict(boxes, scene_id, seed), indent=1))


def load_detections(path):
    return boxes_from_dict(json.loads(Path(path).read_text()))
