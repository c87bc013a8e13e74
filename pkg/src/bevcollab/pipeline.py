"""End-to-end execution: scene set generation, per-agent rendering, optional
CRF depth refinement, lifting, fusion (cross-domain or plain mean), decoding
and evaluation, plus the ablation sweep.

Ablation rows share one scene set with identical per-scene seeds; within a
scene, frames, refined depth distributions and lifted BEV maps are computed
once for the union of what the rows need and reused. Scenes can be processed
in parallel; aggregation is an ordered reduction over scene indices, so
results are deterministic for a fixed config.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import detector
from .bevlift import BevFeature, lift_splat
from .cdca import fuse
from .config import RunConfig, config_to_dict
from .depthcrf import (
    CrfParams,
    cross_domain_correspondence,
    mean_field_refine,
    normalized_unary,
)
from .metrics import MetricsConfig, MetricsReport, evaluate
from .scenesim import GROUND, generate_scene, render_agent_frame, scene_to_dict


@dataclass(frozen=True)
class RowSpec:
    """One pipeline variant evaluated on the shared scene set."""

    label: str
    agents: tuple
    use_cdo: bool
    use_cdca: bool
    lam: float

    @classmethod
    def from_config(cls, cfg: RunConfig, label: str = "run") -> "RowSpec":
        return cls(label, tuple(cfg.agents), cfg.use_cdo, cfg.use_cdca, cfg.fusion.lam)


@dataclass
class AblationReport:
    rows: list  # (label, MetricsReport, delta_mAP)
    baseline_label: str

    def to_csv_rows(self):
        out = []
        for label, report, delta in self.rows:
            out.append(
                [label, report.mAP, report.mATE, report.mASE, report.mAOE,
                 report.mAVE, report.mAAE, report.NDS, delta]
            )
        return out


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=base_seed, spawn_key=(index,)).generate_state(1)[0])


def render_seed(base_seed: int, index: int, agent_idx: int) -> int:
    return int(
        np.random.SeedSequence(
            entropy=base_seed, spawn_key=(index, agent_idx + 1)
        ).generate_state(1)[0]
    )


def _depth_distributions(cfg: RunConfig, scene, frames, agents, use_cdo):
    bins_by_agent = {a: cfg.bins_for_domain(scene.domains[a]) for a in agents}
    sub = {a: frames[a] for a in agents}
    if not use_cdo or cfg.crf.iterations == 0:
        return {a: normalized_unary(sub[a], bins_by_agent[a]) for a in agents}
    initial = {a: normalized_unary(sub[a], bins_by_agent[a]) for a in agents}
    correspondences = []
    if cfg.crf.w_cross > 0:
        for a, b in itertools.permutations(agents, 2):
            correspondences.append(
                cross_domain_correspondence(
                    sub[a], sub[b], scene.camera(a), scene.camera(b), initial[a]
                )
            )
    return mean_field_refine(sub, correspondences, cfg.crf, bins_by_agent)


def _fuse_row(cfg: RunConfig, scene, bevs: dict, row: RowSpec) -> BevFeature:
    agents = list(row.agents)
    if len(agents) == 1:
        return bevs[agents[0]]
    if not row.use_cdca:
        data = np.mean([bevs[a].data for a in agents], axis=0)
        return BevFeature(grid=cfg.grid, data=data, agent="mean", domain="fused")
    att = replace(cfg.fusion, lam=row.lam)
    ground = [bevs[a] for a in agents if scene.domains[a] == GROUND]
    aerial = [bevs[a] for a in agents if scene.domains[a] != GROUND]

    def fold(maps):
        out = maps[0]
        for nxt in maps[1:]:
            # same-domain merge: symmetric blend
            out = fuse(out, nxt, replace(att, lam=0.5), cfg.literal_correlation)
        return out

    if ground and aerial:
        return fuse(fold(ground), fold(aerial), att, cfg.literal_correlation)
    return fold(ground or aerial)


def run_scene(cfg: RunConfig, index: int, rows) -> dict:
    """Build one scene's artifacts and evaluate every row on them.

    Returns {"seed": ..., "gts": [...], "rows": {label: boxes}}.
    """
    seed = scene_seed(cfg.seed, index)
    scene = generate_scene(cfg.scene, seed)
    needed_agents = sorted({a for row in rows for a in row.agents})
    agent_order = [s.name for s in cfg.scene.rig]
    frames = {
        a: render_agent_frame(
            scene, a, cfg.bins_for_domain(scene.domains[a]), cfg.noise,
            render_seed(cfg.seed, index, agent_order.index(a)),
        )
        for a in needed_agents
    }

    dist_cache: dict = {}
    bev_cache: dict = {}
    results = {}
    for row in rows:
        key = (frozenset(row.agents), row.use_cdo)
        if key not in dist_cache:
            dist_cache[key] = _depth_distributions(cfg, scene, frames, row.agents, row.use_cdo)
        dists = dist_cache[key]
        for a in row.agents:
            bkey = (a, key)
            if bkey not in bev_cache:
                bev_cache[bkey] = lift_splat(frames[a], dists[a], scene.camera(a), cfg.grid)
        bevs = {a: bev_cache[(a, key)] for a in row.agents}
        fused = _fuse_row(cfg, scene, bevs, row)
        results[row.label] = detector.decode(fused, cfg.grid, cfg.threshold)

    gts = [
        detector.Box3D(o.center, o.size, o.yaw, o.velocity, o.cls, 1.0)
        for o in scene.objects
    ]
    return {"seed": seed, "scene": scene, "gts": gts, "rows": results}


def _run_scene_worker(args):
    cfg, index, rows = args
    out = run_scene(cfg, index, rows)
    out.pop("scene")
    return index, out


def execute(cfg: RunConfig, rows, jobs: int = 1, progress=None):
    """Run every row over the scene set; returns per-scene results in order."""
    rows = list(rows)
    tasks = [(cfg, i, rows) for i in range(cfg.scenes)]
    per_scene = [None] * cfg.scenes
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, out in pool.map(_run_scene_worker, tasks, chunksize=1):
                per_scene[index] = out
                if progress:
                    progress(index)
    else:
        for task in tasks:
            index, out = _run_scene_worker(task)
            per_scene[index] = out
            if progress:
                progress(index)
    return per_scene


def aggregate_report(per_scene, label: str, metrics_cfg: MetricsConfig | None = None) -> MetricsReport:
    samples = [(scene_out["rows"][label], scene_out["gts"]) for scene_out in per_scene]
    return evaluate(samples, metrics_cfg)


def per_scene_reports(per_scene, label: str, metrics_cfg: MetricsConfig | None = None):
    return [
        evaluate([(scene_out["rows"][label], scene_out["gts"])], metrics_cfg)
        for scene_out in per_scene
    ]


def run(cfg: RunConfig, out_dir=None, jobs: int = 1, progress=None):
    """Execute the configured pipeline; optionally write detection files and
    metrics.json (with the fully-resolved config echoed for provenance)."""
    row = RowSpec.from_config(cfg)
    per_scene = execute(cfg, [row], jobs=jobs, progress=progress)
    report = aggregate_report(per_scene, row.label)
    if out_dir is not None:
        out = Path(out_dir)
        det_dir = out / "detections"
        det_dir.mkdir(parents=True, exist_ok=True)
        for i, scene_out in enumerate(per_scene):
            detector.save_detections(
                scene_out["rows"][row.label], f"scene-{i:04d}", scene_out["seed"],
                det_dir / f"scene-{i:04d}.json",
            )
        doc = report.to_dict()
        doc["config"] = config_to_dict(cfg)
        (out / "metrics.json").write_text(json.dumps(doc, indent=1))
    return report, per_scene


ABLATION_CSV_HEADER = ["label", "mAP", "mATE", "mASE", "mAOE", "mAVE", "mAAE", "NDS", "delta_mAP"]

AXES = ("agents", "use_cdo", "use_cdca", "lambda")


def ablation_rows(cfg: RunConfig, axes) -> tuple:
    """Cartesian sweep rows plus the baseline row (the config itself)."""
    axes = list(axes)
    if not axes:
        raise ValueError("ablate requires at least one axis")
    for axis in axes:
        if axis not in AXES:
            raise ValueError(f"unknown ablation axis {axis!r}; valid: {AXES}")
    ground = tuple(s.name for s in cfg.scene.rig if s.domain == GROUND and s.name in cfg.agents)
    aerial = tuple(s.name for s in cfg.scene.rig if s.domain != GROUND and s.name in cfg.agents)
    domains = {
        "agents": [ground, aerial, tuple(cfg.agents)] if "agents" in axes else [tuple(cfg.agents)],
        "use_cdo": [False, True] if "use_cdo" in axes else [cfg.use_cdo],
        "use_cdca": [False, True] if "use_cdca" in axes else [cfg.use_cdca],
        "lambda": [0.0, 0.5, 1.0] if "lambda" in axes else [cfg.fusion.lam],
    }
    agent_labels = {ground: "ground", aerial: "aerial", tuple(cfg.agents): "all"}
    rows = []
    for agents, cdo, cdca, lam in itertools.product(
        domains["agents"], domains["use_cdo"], domains["use_cdca"], domains["lambda"]
    ):
        if not agents:
            continue
        parts = []
        if "agents" in axes:
            parts.append(f"agents={agent_labels[agents]}")
        if "use_cdo" in axes:
            parts.append(f"cdo={'on' if cdo else 'off'}")
        if "use_cdca" in axes:
            parts.append(f"cdca={'on' if cdca else 'off'}")
        if "lambda" in axes:
            parts.append(f"lambda={lam}")
        rows.append(RowSpec("|".join(parts), agents, cdo, cdca, lam))
    baseline = RowSpec.from_config(cfg, "baseline")
    return tuple(rows), baseline


def ablate(cfg: RunConfig, axes, out_dir=None, jobs: int = 1, progress=None) -> AblationReport:
    """Sweep the requested axes on a shared scene set and tabulate mAP deltas
    against the baseline (the unswept config)."""
    rows, baseline = ablation_rows(cfg, axes)
    all_rows = list(rows) + [baseline]
    per_scene = execute(cfg, all_rows, jobs=jobs, progress=progress)
    base_report = aggregate_report(per_scene, baseline.label)
    table = []
    for row in rows:
        report = aggregate_report(per_scene, row.label)
        table.append((row.label, report, report.mAP - base_report.mAP))
    table.append((baseline.label, base_report, 0.0))
    result = AblationReport(rows=table, baseline_label=baseline.label)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ABLATION_CSV_HEADER)
            writer.writerows(result.to_csv_rows())
        det_dir = out / "detections"
        for row in all_rows:
            row_dir = det_dir / row.label.replace("|", "_").replace("=", "-")
            row_dir.mkdir(parents=True, exist_ok=True)
            for i, scene_out in enumerate(per_scene):
                detector.save_detections(
                    scene_out["rows"][row.label], f"scene-{i:04d}", scene_out["seed"],
                    row_dir / f"scene-{i:04d}.json",
                )
    return result


def simulate(cfg: RunConfig, out_dir, progress=None):
    """Generate and store the scene set only."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(cfg.scenes):
        scene = generate_scene(cfg.scene, scene_seed(cfg.seed, i))
        path = out / f"scene-{i:04d}.json"
        path.write_text(json.dumps(scene_to_dict(scene), indent=1))
        paths.append(path)
        if progress:
            progress(i)
    return paths
