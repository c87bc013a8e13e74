"""Run configuration: JSON ingestion with defaults, exhaustive validation
(every violation reported with its field path, unknown keys suggested by
edit distance), and the dataclass tree the pipeline consumes."""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field

from .cdca import AttentionConfig
from .depthcrf import CrfParams, DepthBins, make_depth_bins
from .geometry import BevGrid
from .scenesim import AERIAL, GROUND, NoiseConfig, RigCameraSpec, SceneConfig, default_rig

DEFAULT_AGENTS = ("vehicle", "uav_r", "uav_l")


class ConfigError(ValueError):
    """Carries the full list of validation problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class BinSpec:
    d_min: float
    d_max: float
    k: int

    def build(self) -> DepthBins:
        return make_depth_bins(self.d_min, self.d_max, self.k)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scenes: int = 10
    agents: tuple = DEFAULT_AGENTS
    use_cdo: bool = True
    use_cdca: bool = True
    scene: SceneConfig = field(default_factory=SceneConfig)
    render_width: int = 704
    render_height: int = 256
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    crf: CrfParams = field(default_factory=CrfParams)
    bins_ground: BinSpec = BinSpec(1.0, 101.0, 100)
    bins_aerial: BinSpec = BinSpec(1.0, 121.0, 120)
    grid: BevGrid = BevGrid(-30.0, 130.0, -55.0, 55.0, 0.5)
    fusion: AttentionConfig = field(default_factory=AttentionConfig)
    literal_correlation: bool = False
    threshold: float = 0.3

    def bins_for_domain(self, domain: str) -> DepthBins:
        return (self.bins_ground if domain == GROUND else self.bins_aerial).build()


_NOISE_KEYS = ("sigma_d", "logit_sigma", "feat_sigma")
_CRF_KEYS = ("theta", "w_intra", "w_cross", "neighborhood_radius", "iterations", "mode")
_SCENE_KEYS = (
    "n_objects", "class_mix", "spawn_x", "spawn_y", "occlusion_rate",
    "size_jitter", "max_speed", "min_gap", "max_retries",
)
_GRID_KEYS = ("x_min", "x_max", "y_min", "y_max", "cell_size")
_FUSION_KEYS = ("lambda", "token_pool", "d_k", "literal_correlation")
_BIN_KEYS = ("d_min", "d_max", "k")
_RIG_KEYS = (
    "name", "domain", "x", "y", "height_m", "pitch_deg", "yaw_deg",
    "roll_deg", "fov_deg",
)
_TOP_KEYS = (
    "seed", "scenes", "agents", "use_cdo", "use_cdca", "scene", "render",
    "rig", "noise", "crf", "bins", "grid", "fusion", "detector",
)


def _check_keys(doc: dict, known, path: str, errors: list):
    ok = True
    for key in doc:
        if key not in known:
            hint = difflib.get_close_matches(key, known, n=1)
            suffix = f"; did you mean {hint[0]!r}?" if hint else ""
            where = path or "top level"
            errors.append(f"{where}: unknown key {key!r}{suffix}")
            ok = False
    return ok


def _get(doc, key, default, path, errors, kind=None, check=None, describe=""):
    value = doc.get(key, default)
    full = f"{path}.{key}" if path else key
    if kind is not None:
        is_bool = isinstance(value, bool)
        ok = isinstance(value, kind) and (kind is bool or not is_bool)
        if kind is float and isinstance(value, int) and not is_bool:
            ok = True  # JSON integers are acceptable floats
        if not ok:
            errors.append(f"{full}: expected {kind.__name__}, got {value!r}")
            return default
    if check is not None and not check(value):
        errors.append(f"{full}: {describe}, got {value!r}")
        return default
    return value


def _parse_rig(items, render_w, render_h, errors):
    specs = []
    for i, item in enumerate(items):
        path = f"rig[{i}]"
        if not isinstance(item, dict):
            errors.append(f"{path}: expected object")
            continue
        _check_keys(item, _RIG_KEYS, path, errors)
        try:
            specs.append(
                RigCameraSpec(
                    name=str(item.get("name", f"agent{i}")),
                    domain=str(item.get("domain", GROUND)),
                    x=float(item.get("x", 0.0)),
                    y=float(item.get("y", 0.0)),
                    height_m=float(item.get("height_m", 2.0)),
                    pitch_deg=float(item.get("pitch_deg", 0.0)),
                    yaw_deg=float(item.get("yaw_deg", 0.0)),
                    roll_deg=float(item.get("roll_deg", 0.0)),
                    fov_deg=float(item.get("fov_deg", 70.0)),
                    width=render_w,
                    height=render_h,
                )
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"{path}: {exc}")
    domains = {s.domain for s in specs}
    if specs and not {GROUND, AERIAL} <= domains:
        errors.append("rig: need at least one camera per domain (ground and aerial)")
    return tuple(specs)


def validate_config(text: str) -> RunConfig:
    """Parse a JSON config, apply defaults, and report every violation.

    Raises ConfigError with the complete error list (syntax errors include
    line and column).
    """
    if not text.strip():
        doc = {}
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                [f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]
            ) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])

    errors: list = []
    _check_keys(doc, _TOP_KEYS, "", errors)

    seed = _get(doc, "seed", 0, "", errors, int)
    scenes = _get(doc, "scenes", 10, "", errors, int,
                  check=lambda v: v >= 1, describe="must be >= 1")
    use_cdo = _get(doc, "use_cdo", True, "", errors, bool)
    use_cdca = _get(doc, "use_cdca", True, "", errors, bool)

    render = doc.get("render", {})
    if _check_keys(render, ("width", "height"), "render", errors):
        pass
    width = _get(render, "width", 704, "render", errors, int,
                 check=lambda v: v >= 8, describe="must be >= 8")
    height = _get(render, "height", 256, "render", errors, int,
                  check=lambda v: v >= 8, describe="must be >= 8")

    if "rig" in doc:
        rig = _parse_rig(doc["rig"], width, height, errors)
    else:
        rig = default_rig(width, height)

    agents = tuple(_get(doc, "agents", list(s.name for s in rig), "", errors, list))
    rig_names = {s.name for s in rig}
    if not agents:
        errors.append("agents: at least one agent must be selected")
    for a in agents:
        if a not in rig_names:
            errors.append(f"agents: {a!r} is not in the rig {sorted(rig_names)}")

    sc = doc.get("scene", {})
    _check_keys(sc, _SCENE_KEYS, "scene", errors)
    scene_kwargs = {}
    scene_kwargs["n_objects"] = _get(sc, "n_objects", 12, "scene", errors, int,
                                     check=lambda v: v >= 0, describe="must be >= 0")
    scene_kwargs["occlusion_rate"] = _get(
        sc, "occlusion_rate", 0.0, "scene", errors, float,
        check=lambda v: 0.0 <= v <= 1.0, describe="must be in [0, 1]")
    scene_kwargs["size_jitter"] = _get(sc, "size_jitter", 0.1, "scene", errors, float,
                                       check=lambda v: 0.0 <= v < 1.0, describe="must be in [0, 1)")
    scene_kwargs["max_speed"] = _get(sc, "max_speed", 8.0, "scene", errors, float,
                                     check=lambda v: v >= 0, describe="must be >= 0")
    scene_kwargs["min_gap"] = _get(sc, "min_gap", 1.0, "scene", errors, float,
                                   check=lambda v: v >= 0, describe="must be >= 0")
    scene_kwargs["max_retries"] = _get(sc, "max_retries", 200, "scene", errors, int,
                                       check=lambda v: v >= 1, describe="must be >= 1")
    for key in ("class_mix", "spawn_x", "spawn_y"):
        if key in sc:
            scene_kwargs[key] = tuple(sc[key])

    noise_doc = doc.get("noise", {})
    _check_keys(noise_doc, _NOISE_KEYS, "noise", errors)
    noise_kwargs = {
        "sigma_d": _get(noise_doc, "sigma_d", 2.0, "noise", errors, float,
                        check=lambda v: v > 0, describe="must be positive"),
        "logit_sigma": _get(noise_doc, "logit_sigma", 1.0, "noise", errors, float,
                            check=lambda v: v >= 0, describe="must be >= 0"),
        "feat_sigma": _get(noise_doc, "feat_sigma", 0.1, "noise", errors, float,
                           check=lambda v: v >= 0, describe="must be >= 0"),
    }

    crf_doc = doc.get("crf", {})
    _check_keys(crf_doc, _CRF_KEYS, "crf", errors)
    crf_kwargs = {
        "theta": _get(crf_doc, "theta", 1.0, "crf", errors, float,
                      check=lambda v: v > 0, describe="must be positive"),
        "w_intra": _get(crf_doc, "w_intra", 0.1, "crf", errors, float,
                        check=lambda v: v >= 0, describe="must be >= 0"),
        "w_cross": _get(crf_doc, "w_cross", 0.1, "crf", errors, float,
                        check=lambda v: v >= 0, describe="must be >= 0"),
        "neighborhood_radius": _get(crf_doc, "neighborhood_radius", 2, "crf", errors, int,
                                    check=lambda v: v >= 1, describe="must be >= 1"),
        "iterations": _get(crf_doc, "iterations", 3, "crf", errors, int,
                           check=lambda v: v >= 0, describe="must be >= 0"),
        "mode": _get(crf_doc, "mode", "neighborhood", "crf", errors, str,
                     check=lambda v: v in ("neighborhood", "exact"),
                     describe="must be 'neighborhood' or 'exact'"),
    }

    bins_doc = doc.get("bins", {})
    _check_keys(bins_doc, (GROUND, AERIAL), "bins", errors)
    bin_specs = {}
    for domain, default in ((GROUND, BinSpec(1.0, 101.0, 100)), (AERIAL, BinSpec(1.0, 121.0, 120))):
        sub = bins_doc.get(domain, {})
        _check_keys(sub, _BIN_KEYS, f"bins.{domain}", errors)
        d_min = _get(sub, "d_min", default.d_min, f"bins.{domain}", errors, float,
                     check=lambda v: v >= 0, describe="must be >= 0")
        d_max = _get(sub, "d_max", default.d_max, f"bins.{domain}", errors, float)
        k = _get(sub, "k", default.k, f"bins.{domain}", errors, int,
                 check=lambda v: v >= 2, describe="must be >= 2")
        if d_max <= d_min:
            errors.append(f"bins.{domain}.d_max: must exceed d_min, got {d_max!r}")
        else:
            bin_specs[domain] = BinSpec(float(d_min), float(d_max), int(k))

    grid_doc = doc.get("grid", {})
    _check_keys(grid_doc, _GRID_KEYS, "grid", errors)
    gx0 = _get(grid_doc, "x_min", -30.0, "grid", errors, float)
    gx1 = _get(grid_doc, "x_max", 130.0, "grid", errors, float)
    gy0 = _get(grid_doc, "y_min", -55.0, "grid", errors, float)
    gy1 = _get(grid_doc, "y_max", 55.0, "grid", errors, float)
    cell = _get(grid_doc, "cell_size", 0.5, "grid", errors, float,
                check=lambda v: v > 0, describe="must be positive")
    if gx1 <= gx0 or gy1 <= gy0:
        errors.append("grid: extent must be non-empty")

    fusion_doc = doc.get("fusion", {})
    _check_keys(fusion_doc, _FUSION_KEYS, "fusion", errors)
    lam = _get(fusion_doc, "lambda", 0.5, "fusion", errors, float,
               check=lambda v: 0.0 <= v <= 1.0, describe="must be in range [0, 1]")
    token_pool = _get(fusion_doc, "token_pool", 4, "fusion", errors, int,
                      check=lambda v: v >= 1, describe="must be >= 1")
    d_k = fusion_doc.get("d_k")
    if d_k is not None and (not isinstance(d_k, int) or d_k < 1):
        errors.append(f"fusion.d_k: must be a positive integer or null, got {d_k!r}")
        d_k = None
    literal = _get(fusion_doc, "literal_correlation", False, "fusion", errors, bool)

    det_doc = doc.get("detector", {})
    _check_keys(det_doc, ("threshold",), "detector", errors)
    threshold = _get(det_doc, "threshold", 0.3, "detector", errors, float,
                     check=lambda v: v >= 0, describe="must be >= 0")

    if errors:
        raise ConfigError(errors)

    try:
        cfg = RunConfig(
            seed=seed,
            scenes=scenes,
            agents=agents,
            use_cdo=use_cdo,
            use_cdca=use_cdca,
            scene=SceneConfig(rig=rig, **scene_kwargs),
            render_width=width,
            render_height=height,
            noise=NoiseConfig(**noise_kwargs),
            crf=CrfParams(**crf_kwargs),
            bins_ground=bin_specs[GROUND],
            bins_aerial=bin_specs[AERIAL],
            grid=BevGrid(gx0, gx1, gy0, gy1, cell),
            fusion=AttentionConfig(d_k=d_k, token_pool=token_pool, lam=lam),
            literal_correlation=literal,
            threshold=threshold,
        )
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Echo the fully-resolved config (defaults included) for provenance."""
    return {
        "seed": cfg.seed,
        "scenes": cfg.scenes,
        "agents": list(cfg.agents),
        "use_cdo": cfg.use_cdo,
        "use_cdca": cfg.use_cdca,
        "render": {"width": cfg.render_width, "height": cfg.render_height},
        "rig": [
            {
                "name": s.name, "domain": s.domain, "x": s.x, "y": s.y,
                "height_m": s.height_m, "pitch_deg": s.pitch_deg,
                "yaw_deg": s.yaw_deg, "roll_deg": s.roll_deg, "fov_deg": s.fov_deg,
            }
            for s in cfg.scene.rig
        ],
        "scene": {
            "n_objects": cfg.scene.n_objects,
            "class_mix": list(cfg.scene.class_mix),
            "spawn_x": list(cfg.scene.spawn_x),
            "spawn_y": list(cfg.scene.spawn_y),
            "occlusion_rate": cfg.scene.occlusion_rate,
            "size_jitter": cfg.scene.size_jitter,
            "max_speed": cfg.scene.max_speed,
            "min_gap": cfg.scene.min_gap,
            "max_retries": cfg.scene.max_retries,
        },
        "noise": {
            "sigma_d": cfg.noise.sigma_d,
            "logit_sigma": cfg.noise.logit_sigma,
            "feat_sigma": cfg.noise.feat_sigma,
        },
        "crf": {
            "theta": cfg.crf.theta,
            "w_intra": cfg.crf.w_intra,
            "w_cross": cfg.crf.w_cross,
            "neighborhood_radius": cfg.crf.neighborhood_radius,
            "iterations": cfg.crf.iterations,
            "mode": cfg.crf.mode,
        },
        "bins": {
            GROUND: vars(cfg.bins_ground).copy(),
            AERIAL: vars(cfg.bins_aerial).copy(),
        },
        "grid": {
            "x_min": cfg.grid.x_min, "x_max": cfg.grid.x_max,
            "y_min": cfg.grid.y_min, "y_max": cfg.grid.y_max,
            "cell_size": cfg.grid.cell_size,
        },
        "fusion": {
            "lambda": cfg.fusion.lam,
            "token_pool": cfg.fusion.token_pool,
            "d_k": cfg.fusion.d_k,
            "literal_correlation": cfg.literal_correlation,
        },
        "detector": {"threshold": cfg.threshold},
    }
