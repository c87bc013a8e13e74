"""Detection scoring: center-distance matching, interpolated average
precision over class x distance thresholds, true-positive error means, the
composite detection score, and the training-loss evaluator.

AP follows the public nuScenes convention: greedy score-ordered matching
against the nearest unmatched ground truth (strictly) within the distance
gate, precision interpolated on a 101-point recall grid, samples at recall
<= 0.1 dropped, precision reduced by the 0.1 floor, and the mean divided
by 0.9.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenesim import CLASSES

TP_METRICS = ("mATE", "mASE", "mAOE", "mAVE", "mAAE")
MIN_RECALL = 0.1
MIN_PRECISION = 0.1


@dataclass(frozen=True)
class MetricsConfig:
    classes: tuple = CLASSES
    dist_thresholds: tuple = (0.5, 1.0, 2.0, 4.0)
    tp_threshold: float = 2.0
    recall_points: int = 101

    def __post_init__(self):
        th = self.dist_thresholds
        if any(t <= 0 for t in th) or list(th) != sorted(th):
            raise ValueError("dist_thresholds must be positive ascending")
        if self.tp_threshold not in th:
            raise ValueError("tp_threshold must be one of dist_thresholds")


@dataclass
class MetricsReport:
    """Aggregate evaluation output. TP error means are stored unclamped (the
    velocity error can exceed 1); clamping happens inside the NDS formula."""

    per_class_ap: dict  # (cls, dist) -> float, defined entries only
    mAP: float
    mATE: float
    mASE: float
    mAOE: float
    mAVE: float
    mAAE: float
    NDS: float
    excluded_classes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "mATE": self.mATE,
            "mASE": self.mASE,
            "mAOE": self.mAOE,
            "mAVE": self.mAVE,
            "mAAE": self.mAAE,
            "NDS": self.NDS,
            "per_class_ap": {f"{c}@{d}": ap for (c, d), ap in self.per_class_ap.items()},
            "excluded_classes": list(self.excluded_classes),
        }


@dataclass(frozen=True)
class LossWeights:
    bbox: float = 1.0
    cls: float = 1.0
    direction: float = 1.0

    def __post_init__(self):
        if min(self.bbox, self.cls, self.direction) < 0:
            raise ValueError("loss weights must be non-negative")


def bev_distance(a, b) -> float:
    return float(np.hypot(*(a.bev_center - b.bev_center)))


def match(preds, gts, cls: str, d: float):
    """Greedy score-descending matching of predictions to the nearest
    unmatched same-class ground truth strictly within distance d.

    Ties in score fall back to prediction index; equal distances keep the
    lowest ground-truth index. Returns (matches, unmatched_pred_indices,
    unmatched_gt_indices) with matches as (pred_idx, gt_idx, distance).
    """
    pred_idx = [i for i, p in enumerate(preds) if p.cls == cls]
    gt_idx = [j for j, g in enumerate(gts) if g.cls == cls]
    order = sorted(pred_idx, key=lambda i: (-preds[i].score, i))
    taken: set = set()
    matches = []
    unmatched_preds = []
    for i in order:
        best_j, best_d = None, np.inf
        for j in gt_idx:
            if j in taken:
                continue
            dist = bev_distance(preds[i], gts[j])
            if dist < best_d:
                best_j, best_d = j, dist
        if best_j is not None and best_d < d:
            taken.add(best_j)
            matches.append((i, best_j, best_d))
        else:
            unmatched_preds.append(i)
    unmatched_gts = [j for j in gt_idx if j not in taken]
    return matches, unmatched_preds, unmatched_gts


def _accumulate(samples, cls: str, d: float):
    """Pooled score-ordered TP/FP flags across (preds, gts) sample pairs."""
    entries = []  # (-score, sample_idx, pred_idx)
    n_gt = 0
    for si, (preds, gts) in enumerate(samples):
        n_gt += sum(1 for g in gts if g.cls == cls)
        for i, p in enumerate(preds):
            if p.cls == cls:
                entries.append((-p.score, si, i))
    entries.sort()
    taken: set = set()
    tp, fp, scores = [], [], []
    for neg_score, si, i in entries:
        preds, gts = samples[si]
        best_j, best_d = None, np.inf
        for j, g in enumerate(gts):
            if g.cls != cls or (si, j) in taken:
                continue
            dist = bev_distance(preds[i], g)
            if dist < best_d:
                best_j, best_d = j, dist
        if best_j is not None and best_d < d:
            taken.add((si, best_j))
            tp.append(1)
            fp.append(0)
        else:
            tp.append(0)
            fp.append(1)
        scores.append(-neg_score)
    return np.array(tp, dtype=float), np.array(fp, dtype=float), n_gt


def ap_from_sequence(tp: np.ndarray, fp: np.ndarray, n_gt: int, cfg: MetricsConfig) -> float:
    """Interpolated AP from a score-ordered TP/FP sequence."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    grid = np.linspace(0.0, 1.0, cfg.recall_points)
    if len(tp) == 0:
        prec_i = np.zeros_like(grid)
    else:
        ctp = np.cumsum(tp)
        cfp = np.cumsum(fp)
        prec = ctp / (ctp + cfp)
        rec = ctp / n_gt
        prec_i = np.interp(grid, rec, prec, right=0.0)
    first = round((cfg.recall_points - 1) * MIN_RECALL) + 1
    clipped = np.maximum(prec_i[first:] - MIN_PRECISION, 0.0)
    return float(np.mean(clipped) / (1.0 - MIN_PRECISION))


def average_precision(preds, gts, cls: str, d: float, cfg: MetricsConfig | None = None):
    """AP for one class at one distance gate; None when the class has no
    ground truth (the caller excludes such entries from the mean)."""
    cfg = cfg or MetricsConfig()
    tp, fp, n_gt = _accumulate([(preds, gts)], cls, d)
    if n_gt == 0:
        return None
    return ap_from_sequence(tp, fp, n_gt, cfg)


def map_score(ap_table: dict, cfg: MetricsConfig | None = None) -> float:
    """Mean over the defined (class, threshold) AP entries."""
    defined = [v for v in ap_table.values() if v is not None]
    if not defined:
        raise ValueError("AP table has no defined entries")
    return float(np.mean(defined))


def scale_iou(size_a, size_b) -> float:
    """IoU of two center- and yaw-aligned boxes."""
    mins = np.minimum(size_a, size_b)
    inter = float(np.prod(mins))
    vol_a, vol_b = float(np.prod(size_a)), float(np.prod(size_b))
    return inter / (vol_a + vol_b - inter)


def yaw_difference(a: float, b: float) -> float:
    """Smallest absolute angle between two yaws, in [0, pi]."""
    d = abs(a - b) % (2.0 * np.pi)
    return float(min(d, 2.0 * np.pi - d))


def tp_errors(samples, cfg: MetricsConfig | None = None):
    """Per-class TP error means at the tp threshold, plus their class means.

    Classes without any ground truth are excluded; classes with ground truth
    but no matches score worst-case 1 on every metric. Returns
    (per_class, mtp) dicts keyed by the metric names.
    """
    cfg = cfg or MetricsConfig()
    per_class: dict = {}
    for cls in cfg.classes:
        n_gt = sum(1 for _, gts in samples for g in gts if g.cls == cls)
        if n_gt == 0:
            continue
        pairs = []
        for preds, gts in samples:
            matches, _, _ = match(preds, gts, cls, cfg.tp_threshold)
            pairs.extend((preds[i], gts[j], dist) for i, j, dist in matches)
        if not pairs:
            per_class[cls] = dict.fromkeys(TP_METRICS, 1.0)
            continue
        ate = float(np.mean([dist for _, _, dist in pairs]))
        ase = float(np.mean([1.0 - scale_iou(p.size, g.size) for p, g, _ in pairs]))
        aoe = float(np.mean([yaw_difference(p.yaw, g.yaw) for p, g, _ in pairs]))
        ave = float(np.mean([np.linalg.norm(p.velocity - g.velocity) for p, g, _ in pairs]))
        per_class[cls] = {"mATE": ate, "mASE": ase, "mAOE": aoe, "mAVE": ave, "mAAE": 0.0}
    mtp = {
        name: float(np.mean([per_class[c][name] for c in per_class])) if per_class else 1.0
        for name in TP_METRICS
    }
    return per_class, mtp


def nds(map_value: float, mtps: dict) -> float:
    """Composite score: (5 * mAP + sum of (1 - clamped TP error)) / 10."""
    total = 5.0 * map_value
    for name in TP_METRICS:
        total += 1.0 - min(1.0, max(0.0, mtps[name]))
    return total / 10.0


def evaluate(samples, cfg: MetricsConfig | None = None) -> MetricsReport:
    """Full report over (preds, gts) sample pairs: AP table, mAP, TP error
    means, NDS."""
    cfg = cfg or MetricsConfig()
    ap_table: dict = {}
    excluded = []
    for cls in cfg.classes:
        for d in cfg.dist_thresholds:
            tp, fp, n_gt = _accumulate(samples, cls, d)
            if n_gt == 0:
                if cls not in excluded:
                    excluded.append(cls)
                continue
            ap_table[(cls, d)] = ap_from_sequence(tp, fp, n_gt, cfg)
    m_ap = map_score(ap_table, cfg) if ap_table else 0.0
    _, mtp = tp_errors(samples, cfg)
    return MetricsReport(
        per_class_ap=ap_table,
        mAP=m_ap,
        mATE=mtp["mATE"],
        mASE=mtp["mASE"],
        mAOE=mtp["mAOE"],
        mAVE=mtp["mAVE"],
        mAAE=mtp["mAAE"],
        NDS=nds(m_ap, mtp),
        excluded_classes=tuple(excluded),
    )


def save_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))


# ---------------------------------------------------------------------------
# Loss evaluator


@dataclass
class LossInputs:
    cls_heatmap: np.ndarray  # (n_x, n_y, n_cls), values strictly in (0, 1)
    reg: np.ndarray  # (n_x, n_y, 7): offset(2) + log size(3) + velocity(2)
    dir_logits: np.ndarray  # (n_x, n_y, 2)


@dataclass
class LossTargets:
    cls_heatmap: np.ndarray  # from bev_gt_heatmap
    centers: np.ndarray  # (N, 2) int cell indices
    reg_targets: np.ndarray  # (N, 7)
    dir_bins: np.ndarray  # (N,) in {0, 1}


def direction_bin(yaw: float) -> int:
    """0 when the box points within 90 degrees of +x, else 1."""
    return 0 if np.cos(yaw) > 0 else 1


def smooth_l1(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * x**2 / beta, ax - 0.5 * beta)


def gaussian_focal_loss(pred: np.ndarray, target: np.ndarray, alpha=2.0, beta=4.0) -> float:
    """CenterNet-style focal loss over Gaussian heatmaps, normalized by the
    number of unit peaks."""
    pos = target >= 1.0
    pos_loss = -((1.0 - pred[pos]) ** alpha) * np.log(pred[pos])
    neg = ~pos
    neg_loss = -((1.0 - target[neg]) ** beta) * (pred[neg] ** alpha) * np.log(1.0 - pred[neg])
    n_pos = max(int(pos.sum()), 1)
    return float((pos_loss.sum() + neg_loss.sum()) / n_pos)


def total_loss(pred: LossInputs, target: LossTargets, weights: LossWeights | None = None) -> float:
    """Weighted sum of the regression, classification and direction terms."""
    weights = weights or LossWeights()
    heat = np.asarray(pred.cls_heatmap, dtype=float)
    if np.any(heat <= 0.0) or np.any(heat >= 1.0):
        raise ValueError("predicted heatmap probabilities must lie strictly in (0, 1)")

    l_cls = gaussian_focal_loss(heat, np.asarray(target.cls_heatmap, dtype=float))

    centers = np.asarray(target.centers, dtype=int).reshape(-1, 2)
    if len(centers):
        pred_reg = pred.reg[centers[:, 0], centers[:, 1]]
        l_bbox = float(np.mean(smooth_l1(pred_reg - target.reg_targets)))
        logits = pred.dir_logits[centers[:, 0], centers[:, 1]]
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        l_dir = float(-np.mean(logp[np.arange(len(centers)), target.dir_bins]))
    else:
        l_bbox = 0.0
        l_dir = 0.0

    return weights.bbox * l_bbox + weights.cls * l_cls + weights.direction * l_dir
