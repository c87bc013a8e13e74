"""Pinhole camera models and world/pixel/BEV coordinate transforms.

Conventions used throughout the package:

* World frame: right-handed, x forward, y right, z down. The ground plane
  is z = 0, so a camera at altitude h sits at z = -h.
* Camera frame: x right (image u), y down (image v), z along the view
  direction. Projection is ``d * [u, v, 1]^T = K @ (R @ p + T)`` with d the
  camera-frame depth.
* Orientation angles are degrees. At pitch = yaw = roll = 0 the camera
  looks along world +x with image-right along world +y. Roll spins about
  the view axis, pitch tilts the view (negative pitch = downward, so a
  UAV looking straight down has pitch -90), yaw turns about the world
  vertical. Composition is the aerospace intrinsic yaw-pitch-roll
  sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Camera-to-world matrix of the reference orientation: columns are the
# camera axes (right, down, view) expressed in world coordinates.
_BASE_CAM_TO_WORLD = np.array(
    [
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
    ]
)

_ORTHO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Exact pinhole camera: intrinsics K, extrinsics (R, T), image size.

    R maps world to camera coordinates; T = -R @ position.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_width: int
    image_height: int
    fov_deg: float

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=float)
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if k.shape != (3, 3) or r.shape != (3, 3):
            raise ValueError("intrinsics and rotation must be 3x3")
        if not np.allclose(r @ r.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        fx, fy = k[0, 0], k[1, 1]
        cx, cy = k[0, 2], k[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < cx < self.image_width and 0 < cy < self.image_height):
            raise ValueError("principal point must lie inside the image")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def cam_to_world(self) -> np.ndarray:
        return self.rotation.T


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rotation_from_angles(pitch_deg: float, yaw_deg: float, roll_deg: float) -> np.ndarray:
    """World-to-camera rotation for the given orientation angles."""
    cam_to_world = (
        _rot_z(np.radians(yaw_deg))
        @ _rot_y(np.radians(pitch_deg))
        @ _rot_x(np.radians(roll_deg))
        @ _BASE_CAM_TO_WORLD
    )
    return cam_to_world.T


def make_camera(
    fov_deg: float,
    width: int,
    height: int,
    position=(0.0, 0.0, 0.0),
    pitch_deg: float = 0.0,
    yaw_deg: float = 0.0,
    roll_deg: float = 0.0,
) -> CameraModel:
    """Build a camera from horizontal field of view and pose.

    fx = fy = (width/2) / tan(fov/2); principal point at the image center.
    """
    if not 0.0 < fov_deg < 180.0:
        raise ValueError(f"fov_deg must be in (0, 180), got {fov_deg}")
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    f = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    k = np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])
    r = rotation_from_angles(pitch_deg, yaw_deg, roll_deg)
    t = -r @ np.asarray(position, dtype=float).reshape(3)
    return CameraModel(
        intrinsics=k,
        rotation=r,
        translation=t,
        image_width=int(width),
        image_height=int(height),
        fov_deg=float(fov_deg),
    )


def project_world_to_pixel(p, cam: CameraModel):
    """Project a world point; returns (u, v, d) or None when behind the camera.

    (u, v) may fall outside the image bounds; the caller checks.
    """
    p_cam = cam.rotation @ np.asarray(p, dtype=float).reshape(3) + cam.translation
    d = p_cam[2]
    if d <= 0.0:
        return None
    uvw = cam.intrinsics @ p_cam
    return (uvw[0] / d, uvw[1] / d, d)


def unproject_pixel_to_world(u: float, v: float, d: float, cam: CameraModel) -> np.ndarray:
    """Invert the projection at camera-frame depth d > 0."""
    if d <= 0.0:
        raise ValueError(f"depth must be positive, got {d}")
    p_cam = np.array([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d])
    return cam.rotation.T @ (p_cam - cam.translation)


def project_points(points: np.ndarray, cam: CameraModel):
    """Vectorized projection of an (N, 3) array.

    Returns (uv (N, 2), depth (N,)); entries with depth <= 0 are behind the
    camera and carry NaN pixel coordinates.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    p_cam = pts @ cam.rotation.T + cam.translation
    d = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[:, 0] / d + cam.cx
        v = cam.fy * p_cam[:, 1] / d + cam.cy
    uv = np.stack([u, v], axis=-1)
    uv[d <= 0.0] = np.nan
    return uv, d


def unproject_points(uv: np.ndarray, depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized inverse projection: (N, 2) pixels + (N,) depths -> (N, 3) world."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    d = np.asarray(depth, dtype=float).reshape(-1)
    x = (uv[:, 0] - cam.cx) * d / cam.fx
    y = (uv[:, 1] - cam.cy) * d / cam.fy
    p_cam = np.stack([x, y, d], axis=-1)
    return (p_cam - cam.translation) @ cam.rotation


def camera_rays(cam: CameraModel, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """World-frame ray directions through the given pixel coordinates.

    Directions are scaled so that the camera-frame z component is 1, i.e.
    a point at parameter t along the ray has camera depth t.
    """
    x = (np.asarray(us, dtype=float) - cam.cx) / cam.fx
    y = (np.asarray(vs, dtype=float) - cam.cy) / cam.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    return dirs_cam @ cam.rotation


@dataclass(frozen=True)
class BevGrid:
    """Axis-aligned top-down grid over the perception range (meters)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    cell_size: float

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("grid extent must be non-empty")

    @property
    def n_x(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def n_y(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))

    def cell_center(self, ix, iy):
        """World (x, y) of the center of cell (ix, iy); accepts arrays."""
        x = self.x_min + (np.asarray(ix, dtype=float) + 0.5) * self.cell_size
        y = self.y_min + (np.asarray(iy, dtype=float) + 0.5) * self.cell_size
        return x, y


def bev_cell_of(p, grid: BevGrid):
    """Cell (ix, iy) containing the world point, or None when outside."""
    p = np.asarray(p, dtype=float).reshape(-1)
    ix = int(np.floor((p[0] - grid.x_min) / grid.cell_size))
    iy = int(np.floor((p[1] - grid.y_min) / grid.cell_size))
    if 0 <= ix < grid.n_x and 0 <= iy < grid.n_y:
        return (ix, iy)
    return None


def bev_cells_of(points: np.ndarray, grid: BevGrid):
    """Vectorized cell lookup: (N, >=2) points -> (ix, iy, inside) arrays."""
    pts = np.asarray(points, dtype=float)
    ix = np.floor((pts[..., 0] - grid.x_min) / grid.cell_size).astype(np.int64)
    iy = np.floor((pts[..., 1] - grid.y_min) / grid.cell_size).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.n_x) & (iy >= 0) & (iy < grid.n_y)
    return ix, iy, inside
