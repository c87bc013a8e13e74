"""Cross-domain BEV fusion: multi-scale pyramid, cascaded-feature correlation
weights, enhanced per-domain sums, pooled cross-domain attention, and a
convex blend of the two domains.

The attention stage is training-free: queries, keys and values are the raw
pooled BEV tokens (identity projections). At each pooled position the query
attends over exactly two keys, its own domain's token and the other
domain's, and the resulting two softmax weights are applied to the
full-resolution maps. This keeps every attention row stochastic and makes
the whole chain a no-op when both domains carry identical features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bevlift import BevFeature

PYRAMID_LEVELS = 4
_POOL_CHAIN = 2 ** (PYRAMID_LEVELS - 1)  # spatial divisibility required


@dataclass(frozen=True)
class AttentionConfig:
    """d_k defaults to the channel count when None; `lam` is the blend
    weight on the vehicle/ground side (config key "lambda")."""

    d_k: int | None = None
    token_pool: int = 4
    lam: float = 0.5

    def __post_init__(self):
        if self.d_k is not None and self.d_k < 1:
            raise ValueError("d_k must be >= 1")
        if self.token_pool < 1:
            raise ValueError("token_pool must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class FusionWeights:
    beta: np.ndarray  # (4,) correlation per level
    omega: np.ndarray  # (4,) non-negative, sums to 1


@dataclass
class Pyramid:
    levels: list  # level m is the input average-pooled by 2^(m-1)
    rescaled: list  # all levels bilinearly resized to level-1 shape


def _data(f) -> np.ndarray:
    return f.data if isinstance(f, BevFeature) else np.asarray(f, dtype=float)


def _avg_pool(a: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = a.shape
    return a.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def _bilinear_resize(a: np.ndarray, out_hw) -> np.ndarray:
    """Separable bilinear resize with half-pixel sample centers and edge
    clamping. Constants are reproduced exactly and interior content is
    shift-equivariant under whole-factor translations."""

    def axis_coords(n_out, n_in):
        return np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)

    h_out, w_out = out_hw
    ys = axis_coords(h_out, a.shape[0])
    xs = axis_coords(w_out, a.shape[1])
    y0 = np.minimum(ys.astype(int), a.shape[0] - 1)
    y1 = np.minimum(y0 + 1, a.shape[0] - 1)
    fy = (ys - y0)[:, None, None]
    rows = a[y0] * (1 - fy) + a[y1] * fy
    x0 = np.minimum(xs.astype(int), a.shape[1] - 1)
    x1 = np.minimum(x0 + 1, a.shape[1] - 1)
    fx = (xs - x0)[None, :, None]
    return rows[:, x0] * (1 - fx) + rows[:, x1] * fx


def build_pyramid(f) -> Pyramid:
    """Four average-pooled levels (factors 1, 2, 4, 8) plus rescaled copies
    at the level-1 size."""
    a = _data(f)
    h, w = a.shape[:2]
    if h % _POOL_CHAIN or w % _POOL_CHAIN:
        pad_h = (-h) % _POOL_CHAIN
        pad_w = (-w) % _POOL_CHAIN
        raise ValueError(
            f"spatial dims {(h, w)} must be divisible by {_POOL_CHAIN}; "
            f"pad by {(pad_h, pad_w)} first"
        )
    levels = [a] + [_avg_pool(a, 2**m) for m in range(1, PYRAMID_LEVELS)]
    rescaled = [levels[0]] + [_bilinear_resize(lv, (h, w)) for lv in levels[1:]]
    return Pyramid(levels=levels, rescaled=rescaled)


def cascade(f_veh: np.ndarray, f_uav: np.ndarray) -> np.ndarray:
    """Channel concatenation (vehicle half first)."""
    f_veh, f_uav = _data(f_veh), _data(f_uav)
    if f_veh.shape != f_uav.shape:
        raise ValueError(f"shape mismatch {f_veh.shape} vs {f_uav.shape}")
    return np.concatenate([f_veh, f_uav], axis=-1)


def correlation_weights(f_i, cascades, literal: bool = False) -> FusionWeights:
    """Per-level scalar correlations of the domain map against the cascaded
    maps, shifted by +1 and normalized into convex weights.

    Default mode reduces each 2C-channel cascade by averaging the halves
    and takes the cosine similarity. `literal` keeps the written form:
    dot against the vehicle half, normalized by ||f_i||^2.
    """
    v = _data(f_i).ravel()
    norm_v = np.linalg.norm(v)
    betas = []
    for casc in cascades:
        casc = _data(casc)
        c = casc.shape[-1] // 2
        if literal:
            m = casc[..., :c].ravel()
            denom = norm_v * norm_v
        else:
            m = 0.5 * (casc[..., :c] + casc[..., c:]).ravel()
            denom = norm_v * np.linalg.norm(m)
        betas.append(float(v @ m / denom) if denom > 0 else 0.0)
    beta = np.asarray(betas)
    shifted = beta + 1.0
    total = shifted.sum()
    if norm_v == 0.0 or total <= 0.0:
        omega = np.full(len(cascades), 1.0 / len(cascades))
    else:
        omega = shifted / total
    return FusionWeights(beta=beta, omega=omega)


def enhance(pyramid_rescaled, weights: FusionWeights) -> np.ndarray:
    """Convex combination of the rescaled pyramid levels."""
    out = np.zeros_like(_data(pyramid_rescaled[0]))
    for w, level in zip(weights.omega, pyramid_rescaled):
        out = out + w * _data(level)
    return out


def attention_weights(f_veh_sum: np.ndarray, f_uav_sum: np.ndarray, cfg: AttentionConfig):
    """Per-token softmax over the two domains' keys.

    Returns (a_veh, a_uav) where a_m is (h_tok, w_tok, 2): the row of
    attention weights for domain m's query (own key first). Rows sum to 1.
    """
    fv, fu = _data(f_veh_sum), _data(f_uav_sum)
    if fv.shape != fu.shape:
        raise ValueError(f"shape mismatch {fv.shape} vs {fu.shape}")
    h, w, c = fv.shape
    p = cfg.token_pool
    if h % p or w % p:
        raise ValueError(f"token_pool {p} does not divide spatial dims {(h, w)}")
    tv = _avg_pool(fv, p) if p > 1 else fv
    tu = _avg_pool(fu, p) if p > 1 else fu
    d_k = cfg.d_k if cfg.d_k is not None else c
    scale = 1.0 / np.sqrt(d_k)
    s_vv = (tv * tv).sum(axis=-1) * scale
    s_vu = (tv * tu).sum(axis=-1) * scale
    s_uu = (tu * tu).sum(axis=-1) * scale
    a_veh = _softmax2(s_vv, s_vu)
    a_uav = _softmax2(s_uu, s_vu)
    return a_veh, a_uav


def _softmax2(s_own, s_other) -> np.ndarray:
    m = np.maximum(s_own, s_other)
    e_own = np.exp(s_own - m)
    e_other = np.exp(s_other - m)
    z = e_own + e_other
    return np.stack([e_own / z, e_other / z], axis=-1)


def cross_domain_attention(f_veh_sum, f_uav_sum, cfg: AttentionConfig):
    """Blend each domain's map with the other using pooled-token attention
    weights applied at full resolution. Returns (f_veh', f_uav')."""
    fv, fu = _data(f_veh_sum), _data(f_uav_sum)
    a_veh, a_uav = attention_weights(fv, fu, cfg)
    p = cfg.token_pool
    if p > 1:
        a_veh = np.repeat(np.repeat(a_veh, p, axis=0), p, axis=1)
        a_uav = np.repeat(np.repeat(a_uav, p, axis=0), p, axis=1)
    f_veh_out = a_veh[..., :1] * fv + a_veh[..., 1:] * fu
    f_uav_out = a_uav[..., :1] * fu + a_uav[..., 1:] * fv
    return f_veh_out, f_uav_out


def blend(f_veh, f_uav, lam: float) -> np.ndarray:
    """f_p = lam * f_veh + (1 - lam) * f_uav."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    fv, fu = _data(f_veh), _data(f_uav)
    if fv.shape != fu.shape:
        raise ValueError(f"shape mismatch {fv.shape} vs {fu.shape}")
    return lam * fv + (1.0 - lam) * fu


def _pad_to_multiple(a: np.ndarray, multiple: int):
    h, w = a.shape[:2]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h or pad_w:
        a = np.pad(a, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    return a, (h, w)


def fuse(
    bev_veh: BevFeature,
    bev_uav: BevFeature,
    cfg: AttentionConfig,
    literal_correlation: bool = False,
) -> BevFeature:
    """Full fusion chain on two same-grid BEV maps.

    Grids whose dimensions are not divisible by the pyramid/pooling factors
    are edge-padded internally and cropped back afterwards.
    """
    if bev_veh.grid != bev_uav.grid:
        raise ValueError("fused maps must share one BEV grid")
    multiple = int(np.lcm(_POOL_CHAIN, cfg.token_pool))
    fv, orig = _pad_to_multiple(np.asarray(bev_veh.data, dtype=float), multiple)
    fu, _ = _pad_to_multiple(np.asarray(bev_uav.data, dtype=float), multiple)

    pyr_veh = build_pyramid(fv)
    pyr_uav = build_pyramid(fu)
    cascades = [cascade(pv, pu) for pv, pu in zip(pyr_veh.rescaled, pyr_uav.rescaled)]
    w_veh = correlation_weights(fv, cascades, literal=literal_correlation)
    w_uav = correlation_weights(fu, cascades, literal=literal_correlation)
    sum_veh = enhance(pyr_veh.rescaled, w_veh)
    sum_uav = enhance(pyr_uav.rescaled, w_uav)
    att_veh, att_uav = cross_domain_attention(sum_veh, sum_uav, cfg)
    fused = blend(att_veh, att_uav, cfg.lam)[: orig[0], : orig[1]]
    return BevFeature(
        grid=bev_veh.grid,
        data=fused,
        agent=f"fused({bev_veh.agent},{bev_uav.agent})",
        domain="fused",
    )
