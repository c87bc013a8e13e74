import numpy as np
import pytest

from bevcollab import scenesim
from bevcollab.bevlift import BevFeature, bev_gt_heatmap, bev_gt_heatmap, class_mass, lift_splat
from bevcollab.depthcrf import DepthDistribution, make_depth_bins, normalized_unary
from bevcollab.geometry import BevGrid, bev_cell_of, camera_rays, make_camera
from bevcollab.scenesim import AgentFrame, CLASSES, NUM_FEATURE_CHANNELS, ZERO_NOISE


def one_pixel_frame(cam, pixel, depth, k_bins, feature=None):
    h, w = cam.image_height, cam.image_width
    vis = np.zeros((h, w), dtype=bool)
    vis[pixel] = True
    gt = np.zeros((h, w))
    gt[pixel] = depth
    feats = np.zeros((h, w, NUM_FEATURE_CHANNELS), dtype=np.float32)
    if feature is None:
        feature = np.zeros(NUM_FEATURE_CHANNELS)
        feature[0] = 1.0
    feats[pixel] = feature
    logits = np.zeros((h, w, k_bins.k), dtype=np.float32)
    return AgentFrame("a", "ground", feats, gt, logits, vis)


class TestLiftSplat:
    def test_delta_distribution_single_pixel(self):
        cam = make_camera(90.0, 4, 4, position=(0, 0, -1.0))
        bins = make_depth_bins(0.0, 40.0, 10)  # centers 2, 6, ..., 38
        grid = BevGrid(0.0, 40.0, -20.0, 20.0, 0.5)
        depth = 10.0  # equals bins.centers[2]
        frame = one_pixel_frame(cam, (1, 2), depth, bins)
        q = np.zeros((4, 4, 10))
        q[..., 0] = 1.0
        q[1, 2] = 0.0
        q[1, 2, 2] = 1.0
        dist = DepthDistribution(q, bins)
        bev = lift_splat(frame, dist, cam, grid)
        nz = np.argwhere(bev.data.sum(-1) != 0)
        assert len(nz) == 1
        ray = camera_rays(cam, np.array([2.5]), np.array([1.5]))[0]
        surface = cam.position + depth * ray
        assert tuple(nz[0]) == bev_cell_of(surface, grid)
        assert bev.data[nz[0][0], nz[0][1], 0] == pytest.approx(1.0)

    def test_zero_features_zero_bev(self, small_grid):
        cam = make_camera(70.0, 8, 8, position=(0, 0, -2.0))
        bins = make_depth_bins(1.0, 41.0, 8)
        frame = one_pixel_frame(cam, (3, 3), 10.0, bins, feature=np.zeros(NUM_FEATURE_CHANNELS))
        dist = DepthDistribution(np.full((8, 8, 8), 1 / 8), bins)
        bev = lift_splat(frame, dist, cam, small_grid)
        assert np.all(bev.data == 0)

    def test_uniform_two_bin_straddle(self):
        # Hand-computed: pixel (0,0) of a 2x2 fx=1 camera at the origin has
        # world ray (1, -0.5, -0.5); bins 2 and 6 land at (2,-1) and (6,-3),
        # i.e. cells (1,1) and (3,0) of a 2 m grid -> half the feature each.
        cam = make_camera(90.0, 2, 2, position=(0.0, 0.0, 0.0))
        bins = make_depth_bins(0.0, 8.0, 2)
        grid = BevGrid(0.0, 8.0, -4.0, 4.0, 2.0)
        frame = one_pixel_frame(cam, (0, 0), 4.0, bins)
        q = np.zeros((2, 2, 2))
        q[0, 0] = 0.5
        dist = DepthDistribution(q, bins)
        bev = lift_splat(frame, dist, cam, grid)
        assert bev.data[1, 1, 0] == pytest.approx(0.5, abs=1e-12)
        assert bev.data[3, 0, 0] == pytest.approx(0.5, abs=1e-12)
        assert bev.data[..., 0].sum() == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self, small_grid):
        cam = make_camera(70.0, 8, 8, position=(0, 0, -2.0))
        bins = make_depth_bins(1.0, 41.0, 8)
        frame = one_pixel_frame(cam, (3, 3), 10.0, bins)
        bad = DepthDistribution(np.full((4, 8, 8), 1 / 8), bins)
        with pytest.raises(ValueError):
            lift_splat(frame, bad, cam, small_grid)

    def _random_frame(self, rng, cam, bins):
        h, w = cam.image_height, cam.image_width
        vis = rng.random((h, w)) < 0.4
        gt = np.where(vis, rng.uniform(5, 60, size=(h, w)), 0.0)
        feats = np.zeros((h, w, NUM_FEATURE_CHANNELS), dtype=np.float32)
        feats[vis] = np.abs(rng.normal(size=(int(vis.sum()), NUM_FEATURE_CHANNELS))).astype(
            np.float32
        )
        logits = rng.normal(size=(h, w, bins.k)).astype(np.float32)
        frame = AgentFrame("a", "ground", feats, gt, logits, vis)
        return frame

    def test_mass_conservation_random_frames(self, rng, small_grid):
        cam = make_camera(70.0, 24, 16, position=(5.0, 0, -2.0), pitch_deg=-15.0)
        bins = make_depth_bins(1.0, 81.0, 16)
        for _ in range(20):
            frame = self._random_frame(rng, cam, bins)
            dist = normalized_unary(frame, bins)
            bev = lift_splat(frame, dist, cam, small_grid)
            vs, us = np.nonzero(frame.visibility)
            rays = camera_rays(cam, us + 0.5, vs + 0.5)
            px = cam.position[0] + np.outer(rays[:, 0], bins.centers)
            py = cam.position[1] + np.outer(rays[:, 1], bins.centers)
            ingrid = (
                (px >= small_grid.x_min) & (px < small_grid.x_max)
                & (py >= small_grid.y_min) & (py < small_grid.y_max)
            )
            q = dist.q[vs, us]
            feat_l1 = np.abs(frame.features[vs, us]).sum(-1)
            expected = float(((q * ingrid).sum(-1) * feat_l1).sum())
            assert bev.data.sum() == pytest.approx(expected, rel=1e-6)

    def test_linearity(self, rng, small_grid):
        cam = make_camera(70.0, 16, 12, position=(0, 0, -2.0))
        bins = make_depth_bins(1.0, 61.0, 12)
        frame = self._random_frame(rng, cam, bins)
        dist = normalized_unary(frame, bins)
        bev1 = lift_splat(frame, dist, cam, small_grid)
        frame.features *= 4.0  # power of two: exact in float32
        bev4 = lift_splat(frame, dist, cam, small_grid)
        np.testing.assert_allclose(bev4.data, 4.0 * bev1.data, rtol=1e-12)

    def test_order_independence_oracle(self, rng, small_grid):
        # Oracle: accumulate pixel by pixel in a shuffled order.
        cam = make_camera(70.0, 16, 12, position=(0, 0, -2.0))
        bins = make_depth_bins(1.0, 61.0, 12)
        frame = self._random_frame(rng, cam, bins)
        dist = normalized_unary(frame, bins)
        bev = lift_splat(frame, dist, cam, small_grid)

        acc = np.zeros_like(bev.data)
        vs, us = np.nonzero(frame.visibility)
        order = rng.permutation(len(vs))
        for i in order:
            v, u = vs[i], us[i]
            ray = camera_rays(cam, np.array([u + 0.5]), np.array([v + 0.5]))[0]
            for k in range(bins.k):
                p = cam.position + bins.centers[k] * ray
                cell = bev_cell_of(p, small_grid)
                if cell is None:
                    continue
                acc[cell[0], cell[1]] += dist.q[v, u, k] * frame.features[v, u]
        assert np.abs(acc - bev.data).max() < 1e-6

    def test_geometric_fidelity(self):
        # Straight-down view, sharp depth, one object per class: the class
        # channel's mass centroid stays within one cell of the true center.
        grid = BevGrid(-30.0, 130.0, -55.0, 55.0, 0.5)
        bins = make_depth_bins(1.0, 121.0, 240)
        rig = scenesim.default_rig(704, 384)
        objs = tuple(
            scenesim.SceneObject(
                cls,
                np.array([30.0 + 6.0 * i, 18.0 - 5.0 * i, -scenesim.CLASS_SIZES[cls][2] / 2]),
                scenesim.CLASS_SIZES[cls],
                0.3 * i,
                np.zeros(2),
                i,
            )
            for i, cls in enumerate(CLASSES)
        )
        scene = scenesim.Scene(
            objects=objs,
            cameras={s.name: s.build() for s in rig},
            domains={s.name: s.domain for s in rig},
            seed=0,
        )
        frame = scenesim.render_agent_frame(scene, "uav_r", bins, ZERO_NOISE, seed=0)
        dist = normalized_unary(frame, bins)
        bev = lift_splat(frame, dist, scene.cameras["uav_r"], grid)
        xs, ys = grid.cell_center(*np.meshgrid(np.arange(grid.n_x), np.arange(grid.n_y), indexing="ij"))
        for obj in objs:
            heat = bev.data[..., CLASSES.index(obj.cls)]
            assert heat.sum() > 0
            cx = (heat * xs).sum() / heat.sum()
            cy = (heat * ys).sum() / heat.sum()
            assert np.hypot(cx - obj.center[0], cy - obj.center[1]) <= grid.cell_size


class TestGtHeatmap:
    def test_empty_scene(self, small_rig, small_grid):
        scene = scenesim.generate_scene(scenesim.SceneConfig(n_objects=0, rig=small_rig), 0)
        heat = bev_gt_heatmap(scene, small_grid)
        assert heat.shape == (small_grid.n_x, small_grid.n_y, len(CLASSES))
        assert np.all(heat == 0)

    def test_unit_peak_at_center_cell(self, small_rig):
        grid = BevGrid(-30.0, 130.0, -55.0, 55.0, 0.5)
        obj = scenesim.SceneObject(
            "car", np.array([20.25, 0.25, -0.8]), (4.5, 1.9, 1.6), 0.0, np.zeros(2), 0
        )
        scene = scenesim.Scene(
            objects=(obj,),
            cameras={s.name: s.build() for s in small_rig},
            domains={s.name: s.domain for s in small_rig},
            seed=0,
        )
        heat = bev_gt_heatmap(scene, grid)
        ci = CLASSES.index("car")
        assert heat[..., ci].max() == 1.0
        ix, iy = np.unravel_index(np.argmax(heat[..., ci]), heat[..., ci].shape)
        assert bev_cell_of(obj.center, grid) == (ix, iy)

    def test_two_distant_cars_superpose(self, small_rig):
        grid = BevGrid(-30.0, 130.0, -55.0, 55.0, 0.5)
        mk = lambda x, oid: scenesim.SceneObject(
            "car", np.array([x, 0.0, -0.8]), (4.5, 1.9, 1.6), 0.0, np.zeros(2), oid
        )
        cams = {s.name: s.build() for s in small_rig}
        doms = {s.name: s.domain for s in small_rig}
        both = scenesim.Scene(objects=(mk(20.0, 0), mk(70.0, 1)), cameras=cams, domains=doms, seed=0)
        only1 = scenesim.Scene(objects=(mk(20.0, 0),), cameras=cams, domains=doms, seed=0)
        only2 = scenesim.Scene(objects=(mk(70.0, 1),), cameras=cams, domains=doms, seed=0)
        h_both = bev_gt_heatmap(both, grid)
        h_sum = bev_gt_heatmap(only1, grid) + bev_gt_heatmap(only2, grid)
        ci = CLASSES.index("car")
        assert (h_both[..., ci] == 1.0).sum() == 2
        assert h_both.sum() == pytest.approx(h_sum.sum(), rel=1e-12)
