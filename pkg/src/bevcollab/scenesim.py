"""Synthetic two-domain scene generation and exact box rendering.

Scenes hold oriented 3D boxes of four classes plus a camera rig (one ground
vehicle, two UAVs). Rendering ray-casts each box per pixel (slab test), so
per-pixel depths are exact and the z-buffer is correct by construction
rather than by mesh approximation. Rendered frames carry a semantic feature
image, ground-truth depth, noisy per-pixel depth logits, and a visibility
mask; they stand in for a trained backbone's outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import CapacityError
from .geometry import CameraModel, camera_rays, make_camera, project_points

if TYPE_CHECKING:
    from .depthcrf import DepthBins

CLASSES = ("car", "truck", "bus", "pedestrian")

# Nominal (length, width, height) per class in meters.
CLASS_SIZES = {
    "car": (4.5, 1.9, 1.6),
    "truck": (8.0, 2.5, 3.0),
    "bus": (11.0, 2.9, 3.2),
    "pedestrian": (0.5, 0.5, 1.8),
}

# Feature image channel layout: one-hot class, BEV offset to the object
# center, log size, yaw encoding, velocity. Shared by the lifter, the GT
# heatmap builder and the box decoder.
NUM_CLASSES = len(CLASSES)
CH_CLASS = slice(0, NUM_CLASSES)
CH_OFFSET = slice(NUM_CLASSES, NUM_CLASSES + 2)
CH_LOGSIZE = slice(NUM_CLASSES + 2, NUM_CLASSES + 5)
CH_YAW = slice(NUM_CLASSES + 5, NUM_CLASSES + 7)
CH_VEL = slice(NUM_CLASSES + 7, NUM_CLASSES + 9)
NUM_FEATURE_CHANNELS = NUM_CLASSES + 9

SCENE_FILE_VERSION = 1

GROUND = "ground"
AERIAL = "aerial"


@dataclass(frozen=True)
class SceneObject:
    """One oriented box: center (m, world), size (l, w, h), yaw about world z."""

    cls: str
    center: np.ndarray
    size: tuple
    yaw: float
    velocity: np.ndarray
    id: int

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if self.cls not in CLASSES:
            raise ValueError(f"unknown class {self.cls!r}")
        if min(self.size) <= 0:
            raise ValueError("box dimensions must be positive")

    @property
    def bev_radius(self) -> float:
        """Circumradius of the BEV footprint."""
        return float(np.hypot(self.size[0], self.size[1]) / 2.0)

    def corners(self) -> np.ndarray:
        """The 8 box corners in world coordinates, (8, 3)."""
        l, w, h = self.size
        sx = np.array([1, 1, 1, 1, -1, -1, -1, -1]) * (l / 2.0)
        sy = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (w / 2.0)
        sz = np.array([1, -1, 1, -1, 1, -1, 1, -1]) * (h / 2.0)
        local = np.stack([sx, sy, sz], axis=-1)
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + self.center


@dataclass(frozen=True)
class RigCameraSpec:
    """Rig entry: placement follows the dataset-table convention where
    `height_m` is the agent height above ground (negative values put the
    mirror camera below the ground plane, see the README)."""

    name: str
    domain: str
    x: float
    y: float
    height_m: float
    pitch_deg: float
    yaw_deg: float
    roll_deg: float = 0.0
    fov_deg: float = 70.0
    width: int = 704
    height: int = 256

    def build(self) -> CameraModel:
        # z-down world: altitude h sits at z = -h.
        return make_camera(
            self.fov_deg,
            self.width,
            self.height,
            position=(self.x, self.y, -self.height_m),
            pitch_deg=self.pitch_deg,
            yaw_deg=self.yaw_deg,
            roll_deg=self.roll_deg,
        )


def default_rig(width: int = 704, height: int = 256) -> tuple:
    """Three-agent rig: ground vehicle plus two oblique UAVs at 70-80 m.

    UAV positions are chosen so the two straight-down footprints tile the
    default spawn region without gaps when rendering at a 16:9-ish aspect.
    """
    return (
        RigCameraSpec("vehicle", GROUND, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 70.0, width, height),
        RigCameraSpec("uav_r", AERIAL, 35.0, 22.0, 80.0, -90.0, -60.0, 0.0, 70.0, width, height),
        RigCameraSpec("uav_l", AERIAL, 55.0, -24.0, -70.0, 90.0, -60.0, 0.0, 70.0, width, height),
    )


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 12
    class_mix: tuple = (0.45, 0.2, 0.1, 0.25)
    spawn_x: tuple = (10.0, 80.0)
    spawn_y: tuple = (-35.0, 35.0)
    rig: tuple = field(default_factory=default_rig)
    occlusion_rate: float = 0.0
    size_jitter: float = 0.1
    max_speed: float = 8.0
    min_gap: float = 1.0
    max_retries: int = 200

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if len(self.class_mix) != NUM_CLASSES:
            raise ValueError("class_mix must have one weight per class")


@dataclass(frozen=True)
class NoiseConfig:
    """Rendering noise: sigma_d shapes the depth unary (meters), logit_sigma
    perturbs depth logits, feat_sigma perturbs feature channels."""

    sigma_d: float = 2.0
    logit_sigma: float = 1.0
    feat_sigma: float = 0.1

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError("sigma_d must be positive")
        if self.logit_sigma < 0 or self.feat_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


ZERO_NOISE = NoiseConfig(sigma_d=0.25, logit_sigma=0.0, feat_sigma=0.0)


@dataclass(frozen=True)
class Scene:
    objects: tuple
    cameras: dict
    domains: dict
    seed: int
    timestamp: float = 0.0

    def camera(self, agent: str) -> CameraModel:
        if agent not in self.cameras:
            raise KeyError(f"unknown agent {agent!r}; have {sorted(self.cameras)}")
        return self.cameras[agent]


@dataclass
class AgentFrame:
    """One agent's rendered observation."""

    agent: str
    domain: str
    features: np.ndarray  # (H, W, C) float32, zero on background
    gt_depth: np.ndarray  # (H, W) meters, 0 where nothing is visible
    unary_logits: np.ndarray  # (H, W, K) float32, zero rows on background
    visibility: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.visibility.shape


def _sample_object(rng: np.random.Generator, cfg: SceneConfig, oid: int) -> SceneObject:
    cls = CLASSES[rng.choice(NUM_CLASSES, p=np.asarray(cfg.class_mix) / np.sum(cfg.class_mix))]
    base = CLASS_SIZES[cls]
    jit = 1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0, size=3)
    size = tuple(float(b * j) for b, j in zip(base, jit))
    x = rng.uniform(*cfg.spawn_x)
    y = rng.uniform(*cfg.spawn_y)
    yaw = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(0.0, cfg.max_speed)
    heading = rng.uniform(-np.pi, np.pi)
    vel = np.array([speed * np.cos(heading), speed * np.sin(heading)])
    center = np.array([x, y, -size[2] / 2.0])  # resting on the ground, z-down
    return SceneObject(cls, center, size, yaw, vel, oid)


def _separated(obj: SceneObject, placed: list, min_gap: float) -> bool:
    for other in placed:
        d = np.hypot(*(obj.center[:2] - other.center[:2]))
        if d < obj.bev_radius + other.bev_radius + min_gap:
            return False
    return True


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Deterministically place non-overlapping objects and build the rig.

    When cfg.occlusion_rate > 0, a parked truck is inserted on the line of
    sight between the ground camera and a sampled subset of the objects, so
    the ground view is blocked while aerial views are not.
    """
    rng = np.random.default_rng(seed)
    cameras = {spec.name: spec.build() for spec in cfg.rig}
    domains = {spec.name: spec.domain for spec in cfg.rig}

    placed: list = []
    for i in range(cfg.n_objects):
        for attempt in range(cfg.max_retries + 1):
            obj = _sample_object(rng, cfg, len(placed))
            if _separated(obj, placed, cfg.min_gap):
                placed.append(obj)
                break
        else:
            raise CapacityError(
                f"placed {len(placed)} of {cfg.n_objects} objects after "
                f"{cfg.max_retries} retries each; spawn region too crowded"
            )

    if cfg.occlusion_rate > 0.0:
        ground_specs = [s for s in cfg.rig if s.domain == GROUND]
        eye = np.array([ground_specs[0].x, ground_specs[0].y]) if ground_specs else np.zeros(2)
        targets = [o for o in placed if rng.random() < cfg.occlusion_rate]
        for target in targets:
            to_target = target.center[:2] - eye
            dist = np.hypot(*to_target)
            if dist < 8.0:
                continue
            los_yaw = np.arctan2(to_target[1], to_target[0])
            size = CLASS_SIZES["truck"]
            for frac in (0.55, 0.45, 0.65, 0.35, 0.75):
                pos = eye + frac * to_target
                if not (cfg.spawn_x[0] <= pos[0] <= cfg.spawn_x[1]
                        and cfg.spawn_y[0] <= pos[1] <= cfg.spawn_y[1]):
                    continue
                occ = SceneObject(
                    "truck",
                    np.array([pos[0], pos[1], -size[2] / 2.0]),
                    size,
                    los_yaw + np.pi / 2.0,  # broadside to the line of sight
                    np.zeros(2),
                    len(placed),
                )
                if _separated(occ, placed, cfg.min_gap):
                    placed.append(occ)
                    break

    return Scene(objects=tuple(placed), cameras=cameras, domains=domains, seed=seed)


def _raycast_box(cam: CameraModel, obj: SceneObject, depth_buf, owner_buf, owner_idx):
    """Slab-test the box against pixel rays; update the z-buffer in place."""
    h_img, w_img = depth_buf.shape
    uv, d = project_points(obj.corners(), cam)
    if np.all(d <= 1e-9):
        return
    if np.all(d > 0):
        u_lo = max(int(np.floor(uv[:, 0].min() - 0.5)), 0)
        u_hi = min(int(np.ceil(uv[:, 0].max() + 0.5)), w_img)
        v_lo = max(int(np.floor(uv[:, 1].min() - 0.5)), 0)
        v_hi = min(int(np.ceil(uv[:, 1].max() + 0.5)), h_img)
        if u_lo >= u_hi or v_lo >= v_hi:
            return
    else:
        # Some corners behind the camera: the silhouette is unbounded,
        # fall back to testing the full image.
        u_lo, u_hi, v_lo, v_hi = 0, w_img, 0, h_img

    vv, uu = np.meshgrid(np.arange(v_lo, v_hi), np.arange(u_lo, u_hi), indexing="ij")
    dirs = camera_rays(cam, uu + 0.5, vv + 0.5)  # camera-depth-parameterized

    c, s = np.cos(obj.yaw), np.sin(obj.yaw)
    rot_t = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    origin = rot_t @ (cam.position - obj.center)
    d_box = dirs @ rot_t.T
    half = np.asarray(obj.size) / 2.0

    t_near = np.full(dirs.shape[:2], -np.inf)
    t_far = np.full(dirs.shape[:2], np.inf)
    hit = np.ones(dirs.shape[:2], dtype=bool)
    for a in range(3):
        da = d_box[..., a]
        parallel = np.abs(da) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[a] - origin[a]) / da
            t2 = (half[a] - origin[a]) / da
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        t_near = np.where(parallel, t_near, np.maximum(t_near, lo))
        t_far = np.where(parallel, t_far, np.minimum(t_far, hi))
        hit &= ~parallel | (np.abs(origin[a]) <= half[a])

    hit &= (t_near <= t_far) & (t_near > 1e-6)
    closer = hit & (t_near < depth_buf[v_lo:v_hi, u_lo:u_hi])
    depth_buf[v_lo:v_hi, u_lo:u_hi][closer] = t_near[closer]
    owner_buf[v_lo:v_hi, u_lo:u_hi][closer] = owner_idx


def render_agent_frame(
    scene: Scene,
    agent: str,
    bins: "DepthBins",
    noise: NoiseConfig | None = None,
    seed: int = 0,
) -> AgentFrame:
    """Render one agent: exact z-buffered depth, features, noisy depth logits.

    Deterministic for fixed inputs. Noise is only applied on visible-object
    pixels; background keeps exactly-zero features and a uniform depth unary.
    """
    noise = noise or NoiseConfig()
    cam = scene.camera(agent)
    h_img, w_img = cam.image_height, cam.image_width

    depth_buf = np.full((h_img, w_img), np.inf)
    owner = np.full((h_img, w_img), -1, dtype=np.int32)
    for idx, obj in enumerate(scene.objects):
        _raycast_box(cam, obj, depth_buf, owner, idx)

    visibility = owner >= 0
    gt_depth = np.where(visibility, depth_buf, 0.0)

    features = np.zeros((h_img, w_img, NUM_FEATURE_CHANNELS), dtype=np.float32)
    if visibility.any():
        vs, us = np.nonzero(visibility)
        dirs = camera_rays(cam, us + 0.5, vs + 0.5)
        surface = cam.position + gt_depth[vs, us, None] * dirs
        for idx, obj in enumerate(scene.objects):
            mask = owner[vs, us] == idx
            if not mask.any():
                continue
            payload = np.zeros(NUM_FEATURE_CHANNELS, dtype=np.float32)
            payload[CLASSES.index(obj.cls)] = 1.0
            payload[CH_LOGSIZE] = np.log(obj.size)
            payload[CH_YAW] = (np.sin(obj.yaw), np.cos(obj.yaw))
            payload[CH_VEL] = obj.velocity
            features[vs[mask], us[mask]] = payload
            features[vs[mask], us[mask], CH_OFFSET] = (
                obj.center[:2] - surface[mask, :2]
            ).astype(np.float32)

    rng = np.random.default_rng(seed)
    unary = np.zeros((h_img, w_img, bins.k), dtype=np.float32)
    if visibility.any():
        vs, us = np.nonzero(visibility)
        diff = bins.centers[None, :] - gt_depth[vs, us, None]
        logits = -(diff**2) / (2.0 * noise.sigma_d**2)
        if noise.logit_sigma > 0:
            logits = logits + rng.normal(0.0, noise.logit_sigma, size=logits.shape)
        unary[vs, us] = logits.astype(np.float32)
        if noise.feat_sigma > 0:
            features[vs, us] += rng.normal(
                0.0, noise.feat_sigma, size=(len(vs), NUM_FEATURE_CHANNELS)
            ).astype(np.float32)

    return AgentFrame(
        agent=agent,
        domain=scene.domains[agent],
        features=features,
        gt_depth=gt_depth,
        unary_logits=unary,
        visibility=visibility,
    )


def scene_to_dict(scene: Scene) -> dict:
    cams = {}
    for name, cam in scene.cameras.items():
        cams[name] = {
            "domain": scene.domains[name],
            "intrinsics": cam.intrinsics.tolist(),
            "rotation": cam.rotation.tolist(),
            "translation": cam.translation.tolist(),
            "image_width": cam.image_width,
            "image_height": cam.image_height,
            "fov_deg": cam.fov_deg,
        }
    objs = [
        {
            "class": o.cls,
            "center": o.center.tolist(),
            "size": list(o.size),
            "yaw": o.yaw,
            "velocity": o.velocity.tolist(),
            "id": o.id,
        }
        for o in scene.objects
    ]
    return {
        "version": SCENE_FILE_VERSION,
        "seed": scene.seed,
        "timestamp": scene.timestamp,
        "cameras": cams,
        "objects": objs,
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("version") != SCENE_FILE_VERSION:
        raise ValueError(f"unsupported scene file version {doc.get('version')!r}")
    cameras, domains = {}, {}
    for name, c in doc["cameras"].items():
        cameras[name] = CameraModel(
            intrinsics=np.array(c["intrinsics"]),
            rotation=np.array(c["rotation"]),
            translation=np.array(c["translation"]),
            image_width=c["image_width"],
            image_height=c["image_height"],
            fov_deg=c["fov_deg"],
        )
        domains[name] = c["domain"]
    objects = tuple(
        SceneObject(
            o["class"], np.array(o["center"]), tuple(o["size"]), o["yaw"],
            np.array(o["velocity"]), o["id"],
        )
        for o in doc["objects"]
    )
    return Scene(objects=objects, cameras=cameras, domains=domains,
                 seed=doc["seed"], timestamp=doc.get("timestamp", 0.0))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
