import numpy as np
import pytest

from bevcollab.bevlift import BevFeature
from bevcollab.cdca import (
    AttentionConfig,
    FusionWeights,
    attention_weights,
    blend,
    build_pyramid,
    cascade,
    correlation_weights,
    cross_domain_attention,
    enhance,
    fuse,
)
from bevcollab.geometry import BevGrid


def as_bev(data, grid=None):
    data = np.asarray(data, dtype=float)
    grid = grid or BevGrid(0.0, data.shape[0] * 1.0, 0.0, data.shape[1] * 1.0, 1.0)
    return BevFeature(grid=grid, data=data, agent="t", domain="ground")


class TestPyramid:
    def test_constant_preserved(self):
        f = np.full((16, 16, 3), 2.5)
        pyr = build_pyramid(f)
        for lv in pyr.levels + pyr.rescaled:
            np.testing.assert_allclose(lv, 2.5, atol=1e-12)

    def test_level_shapes(self):
        pyr = build_pyramid(np.zeros((8, 8, 1)))
        assert [lv.shape[:2] for lv in pyr.levels] == [(8, 8), (4, 4), (2, 2), (1, 1)]
        assert all(lv.shape[:2] == (8, 8) for lv in pyr.rescaled)

    def test_checkerboard_level2_zero(self):
        f = np.indices((8, 8)).sum(0) % 2
        f = (2.0 * f - 1.0)[..., None]  # +-1 checkerboard
        pyr = build_pyramid(f)
        np.testing.assert_allclose(pyr.levels[1], 0.0, atol=1e-12)

    def test_indivisible_dims_error_names_padding(self):
        with pytest.raises(ValueError, match="pad by \\(4, 0\\)"):
            build_pyramid(np.zeros((220, 8, 1)))


class TestCascade:
    def test_two_channel_stack(self):
        a = np.ones((4, 4, 1))
        b = np.zeros((4, 4, 1))
        c = cascade(a, b)
        assert c.shape == (4, 4, 2)
        np.testing.assert_array_equal(c[..., 0], 1.0)
        np.testing.assert_array_equal(c[..., 1], 0.0)

    def test_duplication_and_slicing(self, rng):
        x = rng.normal(size=(4, 4, 3))
        c = cascade(x, x)
        np.testing.assert_array_equal(c[..., :3], x)
        np.testing.assert_array_equal(c[..., 3:], x)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cascade(np.zeros((4, 4, 1)), np.zeros((4, 2, 1)))


class TestCorrelationWeights:
    def test_self_correlation_uniform(self, rng):
        f = rng.normal(size=(8, 8, 2))
        cascades = [cascade(f, f)] * 4
        w = correlation_weights(f, cascades)
        np.testing.assert_allclose(w.beta, 1.0, atol=1e-12)
        np.testing.assert_allclose(w.omega, 0.25, atol=1e-12)

    def test_unit_sum_random(self, rng):
        for _ in range(50):
            f = rng.normal(size=(8, 8, 3))
            cascades = [cascade(rng.normal(size=(8, 8, 3)), rng.normal(size=(8, 8, 3)))
                        for _ in range(4)]
            w = correlation_weights(f, cascades)
            assert w.omega.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(w.omega >= 0)

    def test_orthogonal_plus_equal_hand_values(self):
        # beta = (0, 1, 1, 1) -> shifted (1, 2, 2, 2) -> omega = (1/7, 2/7, 2/7, 2/7).
        f = np.zeros((2, 2, 1))
        f[0, 0, 0] = 1.0
        ortho = np.zeros((2, 2, 1))
        ortho[1, 1, 0] = 1.0  # disjoint support -> cosine 0
        cascades = [cascade(ortho, ortho)] + [cascade(f, f)] * 3
        w = correlation_weights(f, cascades)
        np.testing.assert_allclose(w.beta, [0.0, 1.0, 1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(w.omega, [1 / 7, 2 / 7, 2 / 7, 2 / 7], atol=1e-12)

    def test_zero_norm_fallback(self):
        f = np.zeros((4, 4, 1))
        cascades = [cascade(f, f)] * 4
        w = correlation_weights(f, cascades)
        np.testing.assert_allclose(w.omega, 0.25)

    def test_literal_mode_vehicle_half(self, rng):
        f = rng.normal(size=(4, 4, 2))
        other = rng.normal(size=(4, 4, 2))
        cascades = [cascade(f, other)] * 4
        w = correlation_weights(f, cascades, literal=True)
        v = f.ravel()
        expected = float(v @ v / (np.linalg.norm(v) ** 2))
        np.testing.assert_allclose(w.beta, expected, atol=1e-12)


class TestEnhance:
    def test_selector(self, rng):
        maps = [rng.normal(size=(4, 4, 2)) for _ in range(4)]
        w = FusionWeights(beta=np.zeros(4), omega=np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(enhance(maps, w), maps[0], atol=1e-12)

    def test_equal_levels(self, rng):
        x = rng.normal(size=(4, 4, 2))
        w = FusionWeights(beta=np.zeros(4), omega=np.array([0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_allclose(enhance([x] * 4, w), x, atol=1e-12)

    def test_half_half_spot_check(self, rng):
        a, b = rng.normal(size=(2, 6, 6, 1))
        w = FusionWeights(beta=np.zeros(4), omega=np.array([0.5, 0.5, 0.0, 0.0]))
        out = enhance([a, b, np.zeros_like(a), np.zeros_like(a)], w)
        idx = rng.integers(0, 6, size=(10, 2))
        for i, j in idx:
            assert out[i, j, 0] == pytest.approx(0.5 * (a[i, j, 0] + b[i, j, 0]), rel=1e-12)


class TestAttention:
    def test_identical_single_token(self):
        t = np.full((1, 1, 3), 1.7)
        cfg = AttentionConfig(token_pool=1)
        out_v, out_u = cross_domain_attention(t, t, cfg)
        np.testing.assert_allclose(out_v, t, atol=1e-12)
        np.testing.assert_allclose(out_u, t, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        cfg = AttentionConfig(token_pool=2)
        for _ in range(20):
            a = rng.normal(size=(8, 8, 3))
            b = rng.normal(size=(8, 8, 3))
            w_v, w_u = attention_weights(a, b, cfg)
            np.testing.assert_allclose(w_v.sum(-1), 1.0, atol=1e-9)
            np.testing.assert_allclose(w_u.sum(-1), 1.0, atol=1e-9)

    def test_hand_computed_two_key_scores(self):
        # d_k = 1, single position: vehicle token 1, uav token 11.
        # Vehicle query scores (1*1, 1*11) -> weights softmax(1, 11)
        # = (sigma(-10), sigma(10)); output = sigma(-10)*1 + sigma(10)*11.
        v = np.full((1, 1, 1), 1.0)
        u = np.full((1, 1, 1), 11.0)
        cfg = AttentionConfig(d_k=1, token_pool=1)
        out_v, out_u = cross_domain_attention(v, u, cfg)
        sig = lambda x: 1.0 / (1.0 + np.exp(-x))
        expect_v = sig(-10.0) * 1.0 + sig(10.0) * 11.0
        # uav query scores (11*11, 11*1) -> weights (sigma(110), sigma(-110))
        expect_u = sig(110.0) * 11.0 + sig(-110.0) * 1.0
        assert out_v[0, 0, 0] == pytest.approx(expect_v, abs=1e-6)
        assert out_u[0, 0, 0] == pytest.approx(expect_u, abs=1e-6)

    def test_pool_mismatch(self):
        with pytest.raises(ValueError):
            attention_weights(np.zeros((6, 6, 1)), np.zeros((6, 6, 1)), AttentionConfig(token_pool=4))


class TestBlend:
    def test_endpoints(self, rng):
        a, b = rng.normal(size=(2, 4, 4, 2))
        np.testing.assert_array_equal(blend(a, b, 1.0), a)
        np.testing.assert_array_equal(blend(a, b, 0.0), b)

    def test_midpoint_constants(self):
        a = np.full((4, 4, 1), 2.0)
        b = np.full((4, 4, 1), 4.0)
        np.testing.assert_allclose(blend(a, b, 0.5), 3.0, atol=1e-12)

    def test_convexity_on_ordered_inputs(self, rng):
        a = rng.normal(size=(4, 4, 2))
        b = a + np.abs(rng.normal(size=(4, 4, 2)))  # b >= a elementwise
        for lam in (0.0, 0.25, 0.5, 0.9, 1.0):
            out = blend(a, b, lam)
            assert np.all(out >= a - 1e-12) and np.all(out <= b + 1e-12)

    def test_invalid_lambda(self):
        with pytest.raises(ValueError):
            blend(np.zeros((2, 2, 1)), np.zeros((2, 2, 1)), 1.5)
        with pytest.raises(ValueError):
            AttentionConfig(lam=-0.1)


class TestFuse:
    def test_symmetric_fixed_point_constant(self):
        # Every stage preserves constants exactly, so fuse(X, X) = X.
        x = as_bev(np.full((32, 32, 3), 1.3))
        out = fuse(x, x, AttentionConfig(token_pool=4, lam=0.5))
        np.testing.assert_allclose(out.data, x.data, atol=1e-6)

    def test_symmetric_fixed_point_nondivisible_grid(self):
        # Default-extent grids are edge-padded internally; constants survive.
        grid = BevGrid(-30.0, 130.0, -55.0, 55.0, 0.5)  # 320 x 220
        x = BevFeature(grid=grid, data=np.full((320, 220, 2), 0.7), agent="a", domain="ground")
        out = fuse(x, x, AttentionConfig(token_pool=4, lam=0.5))
        assert out.data.shape == (320, 220, 2)
        np.testing.assert_allclose(out.data, 0.7, atol=1e-6)

    def test_zero_uav_lambda_one(self, rng):
        grid = BevGrid(0.0, 32.0, 0.0, 32.0, 1.0)
        veh = BevFeature(grid=grid, data=rng.normal(size=(32, 32, 2)), agent="v", domain="ground")
        zero = BevFeature(grid=grid, data=np.zeros((32, 32, 2)), agent="u", domain="aerial")
        out = fuse(veh, zero, AttentionConfig(token_pool=4, lam=1.0))
        # output is a function of the vehicle features only
        veh2 = BevFeature(grid=grid, data=veh.data.copy(), agent="v", domain="ground")
        out2 = fuse(veh2, zero, AttentionConfig(token_pool=4, lam=1.0))
        np.testing.assert_array_equal(out.data, out2.data)
        assert np.abs(out.data).max() > 0

    def test_uav_only_object_survives_blend(self):
        # A contribution present only in the aerial map keeps nonzero fused
        # mass at its cell for lambda < 1.
        grid = BevGrid(0.0, 32.0, 0.0, 32.0, 1.0)
        uav = np.zeros((32, 32, 3))
        uav[10, 12, 0] = 5.0
        veh = BevFeature(grid=grid, data=np.zeros((32, 32, 3)), agent="v", domain="ground")
        uavf = BevFeature(grid=grid, data=uav, agent="u", domain="aerial")
        out = fuse(veh, uavf, AttentionConfig(token_pool=4, lam=0.5))
        assert out.data[10, 12, 0] > 0

    def test_translation_equivariance(self, rng):
        grid = BevGrid(0.0, 64.0, 0.0, 64.0, 1.0)
        cfg = AttentionConfig(token_pool=4, lam=0.5)
        a = np.zeros((64, 64, 2))
        b = np.zeros((64, 64, 2))
        a[16:24, 16:24] = rng.normal(size=(8, 8, 2))
        b[16:24, 16:24] = rng.normal(size=(8, 8, 2))
        shift = 8  # multiple of every pooling factor
        a2 = np.roll(a, (shift, shift), axis=(0, 1))
        b2 = np.roll(b, (shift, shift), axis=(0, 1))
        out = fuse(as_bev(a, grid), as_bev(b, grid), cfg)
        out2 = fuse(as_bev(a2, grid), as_bev(b2, grid), cfg)
        np.testing.assert_allclose(
            np.roll(out.data, (shift, shift), axis=(0, 1)), out2.data, atol=1e-9
        )

    def test_grid_mismatch(self, rng):
        g1 = BevGrid(0.0, 32.0, 0.0, 32.0, 1.0)
        g2 = BevGrid(0.0, 32.0, 0.0, 32.0, 0.5)
        a = BevFeature(grid=g1, data=np.zeros((32, 32, 1)), agent="a", domain="ground")
        b = BevFeature(grid=g2, data=np.zeros((64, 64, 1)), agent="b", domain="aerial")
        with pytest.raises(ValueError):
            fuse(a, b, AttentionConfig())
