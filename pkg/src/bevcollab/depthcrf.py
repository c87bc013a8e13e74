"""Cross-domain CRF refinement of discretized per-pixel depth distributions.

The depth label of every pixel ranges over K uniform bins. A labeling is
scored by an energy with a unary term (negative log of the rendered depth
probabilities) and pairwise terms that couple pixels with similar semantic
features: within one agent's image over a Chebyshev neighborhood, and across
agents along geometric pixel correspondences. Inference is synchronous naive
mean field; with uniform bins the per-label expected compatibility
E|D_l - x_j| is computed with prefix sums, so one iteration is
O(H * W * K * neighbors) instead of O(H * W * K^2 * neighbors).

Pairwise sums follow the energy's ordered-pair convention: each unordered
in-image neighbor pair appears twice in the energy, so mean-field messages
from in-image neighbors carry a factor 2 while each correspondence edge
(listed once) carries a factor 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import TYPE_CHECKING

import numpy as np

from .errors import CapacityError
from .geometry import CameraModel, project_points, unproject_points

if TYPE_CHECKING:
    from .scenesim import AgentFrame

PROB_FLOOR = 1e-12
EXACT_MODE_MAX_PIXELS = 64


@dataclass(frozen=True)
class DepthBins:
    """K uniformly spaced depth bin centers over (d_min, d_max) meters."""

    d_min: float
    d_max: float
    k: int
    centers: np.ndarray

    @property
    def spacing(self) -> float:
        return (self.d_max - self.d_min) / self.k


def make_depth_bins(d_min: float, d_max: float, k: int) -> DepthBins:
    # d_min = 0 is allowed: the first bin center is still strictly positive.
    if not 0 <= d_min < d_max:
        raise ValueError(f"need 0 <= d_min < d_max, got ({d_min}, {d_max})")
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    step = (d_max - d_min) / k
    centers = d_min + (np.arange(k) + 0.5) * step
    return DepthBins(float(d_min), float(d_max), int(k), centers)


@dataclass(frozen=True)
class CrfParams:
    theta: float = 1.0
    w_intra: float = 0.1
    w_cross: float = 0.1
    neighborhood_radius: int = 2
    iterations: int = 3
    mode: str = "neighborhood"

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.w_intra < 0 or self.w_cross < 0:
            raise ValueError("kernel weights must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.mode not in ("neighborhood", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class DepthDistribution:
    """Per-pixel categorical depth distribution (mean-field marginals)."""

    q: np.ndarray  # (H, W, K), rows sum to 1
    bins: DepthBins

    def expected_depth(self) -> np.ndarray:
        return self.q @ self.bins.centers


@dataclass(frozen=True)
class Correspondence:
    """Directed pixel pairing between two agents (one entry per source pixel)."""

    agent_a: str
    agent_b: str
    pixels_a: np.ndarray  # (N, 2) int (row, col)
    pixels_b: np.ndarray  # (N, 2) int (row, col)

    def __len__(self) -> int:
        return len(self.pixels_a)

    @property
    def pairs(self):
        return [
            ((self.agent_a, tuple(pa)), (self.agent_b, tuple(pb)))
            for pa, pb in zip(self.pixels_a, self.pixels_b)
        ]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def unary(logits: np.ndarray) -> np.ndarray:
    """Unary potentials -log P(x_i = D_k) from raw per-pixel depth logits."""
    p = softmax(logits)
    return -np.log(np.maximum(p, PROB_FLOOR))


def normalized_unary(frame: "AgentFrame", bins: DepthBins) -> DepthDistribution:
    """The zero-iteration depth distribution: softmax of the rendered logits."""
    if frame.unary_logits.shape[-1] != bins.k:
        raise ValueError("frame logits do not match the bin count")
    return DepthDistribution(q=softmax(frame.unary_logits), bins=bins)


def semantic_kernel(s_i, s_j, theta: float) -> np.ndarray:
    """Gaussian similarity exp(-||s_i - s_j||^2 / (2 theta^2)); broadcasts."""
    d2 = np.sum((np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float)) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * theta**2))


def pairwise(
    label_i: int,
    label_j: int,
    s_i,
    s_j,
    same_domain: bool,
    params: CrfParams,
    bins_i: DepthBins,
    bins_j: DepthBins | None = None,
) -> float:
    """Binary potential w * exp(-||s_i-s_j||^2/(2 theta^2)) * |D(l_i) - D(l_j)|.

    `same_domain` selects w_intra (pixels of one image) versus w_cross
    (corresponded pixels of different agents). Symmetric, zero for equal
    depth values.
    """
    bins_j = bins_j or bins_i
    w = params.w_intra if same_domain else params.w_cross
    compat = abs(float(bins_i.centers[label_i]) - float(bins_j.centers[label_j]))
    return w * float(semantic_kernel(s_i, s_j, params.theta)) * compat


def _bins_map(bins, frames: dict) -> dict:
    if isinstance(bins, DepthBins):
        return {a: bins for a in frames}
    return dict(bins)


def _neighbor_offsets(radius: int):
    return [(dy, dx) for dy, dx in product(range(-radius, radius + 1), repeat=2)
            if (dy, dx) != (0, 0)]


def crf_energy(
    labelings: dict,
    frames: dict,
    correspondences,
    params: CrfParams,
    bins,
) -> float:
    """Total energy of a hard labeling: unary plus ordered-pair pairwise sums.

    In exact mode every intra-image ordered pair contributes (capped at
    64 pixels per agent); in neighborhood mode only pairs within the
    Chebyshev radius do. Corresponded cross-agent pairs contribute once per
    listed pair in both modes.
    """
    bins_by_agent = _bins_map(bins, frames)
    energy = 0.0
    for agent, frame in frames.items():
        lab = np.asarray(labelings[agent])
        psi_u = unary(frame.unary_logits)
        h, w = lab.shape
        energy += float(np.take_along_axis(psi_u, lab[..., None], axis=-1).sum())

        feats = frame.features.reshape(h * w, -1).astype(float)
        depths = bins_by_agent[agent].centers[lab.ravel()]
        if params.mode == "exact":
            n = h * w
            if n > EXACT_MODE_MAX_PIXELS:
                raise CapacityError(
                    f"exact mode supports at most {EXACT_MODE_MAX_PIXELS} pixels "
                    f"per agent, got {n}"
                )
            d2 = np.sum((feats[:, None, :] - feats[None, :, :]) ** 2, axis=-1)
            kern = params.w_intra * np.exp(-d2 / (2.0 * params.theta**2))
            compat = np.abs(depths[:, None] - depths[None, :])
            np.fill_diagonal(kern, 0.0)
            energy += float((kern * compat).sum())
        else:
            fmap = frame.features.astype(float)
            dmap = depths.reshape(h, w)
            for dy, dx in _neighbor_offsets(params.neighborhood_radius):
                ys = slice(max(0, -dy), min(h, h - dy))
                xs = slice(max(0, -dx), min(w, w - dx))
                yt = slice(max(0, dy), min(h, h + dy))
                xt = slice(max(0, dx), min(w, w + dx))
                kern = params.w_intra * semantic_kernel(
                    fmap[ys, xs], fmap[yt, xt], params.theta
                )
                energy += float((kern * np.abs(dmap[ys, xs] - dmap[yt, xt])).sum())

    for corr in correspondences or []:
        fa, fb = frames[corr.agent_a], frames[corr.agent_b]
        ba, bb = bins_by_agent[corr.agent_a], bins_by_agent[corr.agent_b]
        la = np.asarray(labelings[corr.agent_a])[corr.pixels_a[:, 0], corr.pixels_a[:, 1]]
        lb = np.asarray(labelings[corr.agent_b])[corr.pixels_b[:, 0], corr.pixels_b[:, 1]]
        sa = fa.features[corr.pixels_a[:, 0], corr.pixels_a[:, 1]].astype(float)
        sb = fb.features[corr.pixels_b[:, 0], corr.pixels_b[:, 1]].astype(float)
        kern = params.w_cross * semantic_kernel(sa, sb, params.theta)
        energy += float((kern * np.abs(ba.centers[la] - bb.centers[lb])).sum())
    return energy


def cross_domain_correspondence(
    frame_a: "AgentFrame",
    frame_b: "AgentFrame",
    cam_a: CameraModel,
    cam_b: CameraModel,
    dist_a: DepthDistribution,
) -> Correspondence:
    """Pair each visible pixel of agent a with the pixel of agent b its
    expected-depth unprojection lands on; unmatchable pixels are skipped."""
    vs, us = np.nonzero(frame_a.visibility)
    if len(vs) == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return Correspondence(frame_a.agent, frame_b.agent, empty, empty)
    exp_depth = dist_a.q[vs, us] @ dist_a.bins.centers
    world = unproject_points(
        np.stack([us + 0.5, vs + 0.5], axis=-1), exp_depth, cam_a
    )
    uv_b, d_b = project_points(world, cam_b)
    with np.errstate(invalid="ignore"):
        ub = np.floor(uv_b[:, 0]).astype(np.int64)
        vb = np.floor(uv_b[:, 1]).astype(np.int64)
    ok = (
        (d_b > 0)
        & (ub >= 0) & (ub < cam_b.image_width)
        & (vb >= 0) & (vb < cam_b.image_height)
    )
    ok[ok] &= frame_b.visibility[vb[ok], ub[ok]]
    pixels_a = np.stack([vs[ok], us[ok]], axis=-1)
    pixels_b = np.stack([vb[ok], ub[ok]], axis=-1)
    return Correspondence(frame_a.agent, frame_b.agent, pixels_a, pixels_b)


def _expected_absdiff(q: np.ndarray, centers_src: np.ndarray, bins_q: DepthBins) -> np.ndarray:
    """E_{x~q}|c - x| for every c in centers_src; q is (..., K_q).

    Uses prefix sums over the (sorted, uniform) bin centers of q.
    """
    cq = np.cumsum(q, axis=-1)
    cd = np.cumsum(q * bins_q.centers, axis=-1)
    total_d = cd[..., -1]
    pos = np.searchsorted(bins_q.centers, centers_src, side="right")
    f = np.where(pos > 0, cq[..., np.maximum(pos - 1, 0)], 0.0)
    s = np.where(pos > 0, cd[..., np.maximum(pos - 1, 0)], 0.0)
    return 2.0 * (centers_src * f - s) + total_d[..., None] - centers_src


def mean_field_refine(
    frames: dict,
    correspondences,
    params: CrfParams,
    bins,
) -> dict:
    """Synchronous mean-field refinement of all agents' depth distributions.

    Zero iterations returns the normalized unaries unchanged. Every iteration
    reads the previous marginals only, so per-pixel updates are independent.
    The pairwise graph spans visible pixels: background carries no features
    and is never lifted, and its kernel weight against object pixels is
    negligible, so background rows pass through as normalized unaries.
    Returns {agent: DepthDistribution}; rows always sum to 1.
    """
    bins_by_agent = _bins_map(bins, frames)
    correspondences = list(correspondences or [])
    q_full = {a: softmax(f.unary_logits) for a, f in frames.items()}
    if params.iterations == 0:
        return {a: DepthDistribution(q_full[a], bins_by_agent[a]) for a in frames}

    # Sparse per-agent state over visible pixels only.
    pos: dict = {}
    q_vis: dict = {}
    neg_unary: dict = {}
    feats: dict = {}
    for agent, frame in frames.items():
        vis = frame.visibility
        idx = np.full(frame.shape, -1, dtype=np.int64)
        idx[vis] = np.arange(int(vis.sum()))
        pos[agent] = idx
        q_vis[agent] = q_full[agent][vis]
        neg_unary[agent] = -unary(frame.unary_logits[vis])
        feats[agent] = frame.features[vis].astype(np.float64)

    offsets = _neighbor_offsets(params.neighborhood_radius)
    intra_edges: dict = {a: [] for a in frames}
    if params.w_intra > 0:
        for agent, frame in frames.items():
            vis = frame.visibility
            h, w = frame.shape
            idx = pos[agent]
            for dy, dx in offsets:
                ys = slice(max(0, -dy), min(h, h - dy))
                xs = slice(max(0, -dx), min(w, w - dx))
                yt = slice(max(0, dy), min(h, h + dy))
                xt = slice(max(0, dx), min(w, w + dx))
                both = vis[ys, xs] & vis[yt, xt]
                if not both.any():
                    continue
                src = idx[ys, xs][both]
                tgt = idx[yt, xt][both]
                kern = params.w_intra * np.exp(
                    -np.sum((feats[agent][src] - feats[agent][tgt]) ** 2, axis=-1)
                    / (2.0 * params.theta**2)
                )
                intra_edges[agent].append((src, tgt, kern))

    cross_edges = []
    if params.w_cross > 0:
        for corr in correspondences:
            if len(corr) == 0:
                continue
            src = pos[corr.agent_a][corr.pixels_a[:, 0], corr.pixels_a[:, 1]]
            dst = pos[corr.agent_b][corr.pixels_b[:, 0], corr.pixels_b[:, 1]]
            kern = params.w_cross * np.exp(
                -np.sum((feats[corr.agent_a][src] - feats[corr.agent_b][dst]) ** 2, axis=-1)
                / (2.0 * params.theta**2)
            )
            cross_edges.append((corr.agent_a, corr.agent_b, src, dst, kern))

    for _ in range(params.iterations):
        expected = {
            a: _expected_absdiff(q_vis[a], bins_by_agent[a].centers, bins_by_agent[a])
            for a in frames
        }
        messages = {a: np.zeros_like(neg_unary[a]) for a in frames}
        for agent, edges in intra_edges.items():
            msg = messages[agent]
            exp = expected[agent]
            for src, tgt, kern in edges:
                # Ordered-pair energy: each neighbor relation counts twice.
                # Sources are unique within one offset, so plain fancy
                # indexing accumulates safely.
                msg[src] += 2.0 * kern[:, None] * exp[tgt]
        for agent_a, agent_b, src, dst, kern in cross_edges:
            to_a = _expected_absdiff(
                q_vis[agent_b][dst], bins_by_agent[agent_a].centers, bins_by_agent[agent_b]
            )
            messages[agent_a][src] += kern[:, None] * to_a
            to_b = _expected_absdiff(
                q_vis[agent_a][src], bins_by_agent[agent_b].centers, bins_by_agent[agent_a]
            )
            # Destination pixels may repeat; accumulate through bincount.
            k_b = bins_by_agent[agent_b].k
            flat = (dst[:, None] * k_b + np.arange(k_b)[None, :]).ravel()
            add = np.bincount(
                flat, weights=(kern[:, None] * to_b).ravel(), minlength=messages[agent_b].size
            )
            messages[agent_b] += add.reshape(messages[agent_b].shape)
        q_vis = {a: softmax(neg_unary[a] - messages[a]) for a in frames}

    out = {}
    for agent, frame in frames.items():
        q = q_full[agent]
        q[frame.visibility] = q_vis[agent]
        out[agent] = DepthDistribution(q, bins_by_agent[agent])
    return out
