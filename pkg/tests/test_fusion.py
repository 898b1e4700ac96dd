from unittest import mock

import numpy as np
import pytest

import blindtime.fusion as fusion
from blindtime.boxes import Box3D, BoxProposal, box_corners, world_to_box_local
from blindtime.events import EventEncoder, EventStream
from blindtime.fusion import (
    ActiveFrame, BlindTimeModel, HeadParams, MotionVector, RoiGridFeatures, VirtualEventFeatures, apply_motion,
    blind_time_detect, combine_score, fuse_motion_field, gather_virtual_event_features, predict_confidence,
    predict_motion, roi_grid_pool,
)
from blindtime.geometry import CameraModel
from blindtime.nn import init_mlp, linear_mlp, mlp_forward
from blindtime.voxels import PointCloud, VoxelConfig, build_voxel_features, compute_centroids, voxelize

from oracles import forward_oracle

CFG = VoxelConfig((-10, -10, -10), (10, 10, 10), (0.1, 0.1, 0.1))
UNIT_CAM = CameraModel(1, 1, 0, 0, image_size=(8, 8))


def grid_from(points, features=None):
    cloud = PointCloud(points)
    g = compute_centroids(voxelize(cloud, CFG), cloud)
    if features is None:
        features = np.arange(len(g) * 2, dtype=float).reshape(len(g), 2)
    from dataclasses import replace
    return replace(g, features=np.asarray(features, float))


class TestGather:
    def test_constant_map(self, rng):
        g = grid_from(rng.uniform(-0.2, 0.2, (30, 3)) + (0, 0, 1))
        emap = np.full((8, 8, 3), 2.5)
        cam = CameraModel(10, 10, 4, 4, image_size=(8, 8))
        vef = gather_virtual_event_features(g, cam, emap)
        assert vef.valid.all()
        assert np.all(vef.features == 2.5)

    def test_node(self, rng):
        # centroid projects to pixel (2, 3) exactly
        g = grid_from([(2.05, 3.05, 1.05)])
        emap = rng.normal(size=(8, 8, 4))
        cam = CameraModel(1, 1, 0, 0, image_size=(8, 8))
        c = g.centroids[0]
        cam = CameraModel(1, 1, 2 - c[0] / c[2], 3 - c[1] / c[2], image_size=(8, 8))
        vef = gather_virtual_event_features(g, cam, emap)
        assert np.allclose(vef.features[0], emap[3, 2], atol=1e-12)

    def test_bilinear_ramp(self):
        g = grid_from([(2.55, 3.05, 1.05)])
        c = g.centroids[0]
        cam = CameraModel(1, 1, 2.5 - c[0] / c[2], 3.0 - c[1] / c[2], image_size=(8, 8))
        v, u = np.mgrid[0:8, 0:8].astype(float)
        emap = (0.7 * u - 1.3 * v + 2.0)[..., None]
        vef = gather_virtual_event_features(g, cam, emap)
        assert vef.features[0, 0] == pytest.approx(0.7 * 2.5 - 1.3 * 3.0 + 2.0, abs=1e-12)

    def test_stride(self):
        g = grid_from([(4.05, 6.05, 1.05)])
        c = g.centroids[0]
        cam = CameraModel(1, 1, 4 - c[0] / c[2], 6 - c[1] / c[2], image_size=(8, 8))
        emap = np.arange(16 * 2, dtype=float).reshape(4, 4, 2)
        vef = gather_virtual_event_features(g, cam, emap, stride=2)
        assert np.allclose(vef.features[0], emap[3, 2])

    def test_invalid_rows(self):
        g = grid_from([(0.05, 0.05, 1.05), (0.05, 0.05, -1.05), (50 * 0.1 + 0.05, 0.05, 0.55)])
        cam = CameraModel(1, 1, 0, 0, image_size=(8, 8))
        vef = gather_virtual_event_features(g, cam, np.ones((8, 8, 2)))
        # behind camera and off-image rows are invalid with zero features
        assert len(vef.valid) == len(g)
        for k in range(len(g)):
            if not vef.valid[k]:
                assert not vef.features[k].any()
        assert vef.valid.sum() == 1

    def test_rows_align_with_nonempty_voxels(self, rng):
        g = grid_from(rng.uniform(-1, 1, (200, 3)) + (0, 0, 3))
        vef = gather_virtual_event_features(g, CameraModel(2, 2, 4, 4, image_size=(8, 8)), np.ones((8, 8, 2)))
        assert len(vef.features) == len(g) and np.all(g.counts >= 1)


class TestRoiPool:
    def test_no_centroids_inside(self, rng):
        g = grid_from(rng.uniform(-0.5, 0.5, (20, 3)))
        vef = VirtualEventFeatures(np.ones((len(g), 2)), np.ones(len(g), bool))
        roi = roi_grid_pool([Box3D((5, 5, 5), (1, 1, 1))], g, vef, 3)
        assert roi.empty.all() and not roi.event.any() and not roi.voxel.any()

    def test_single_cell_mean(self):
        g = grid_from([(0.05, 0.05, 0.05), (0.25, 0.05, 0.05), (0.05, 0.35, 0.05)], [[1, 2], [3, 4], [8, 0]])
        vef = VirtualEventFeatures(np.array([[1.0, 0], [2, 0], [6, 0]]), np.array([True, True, False]))
        roi = roi_grid_pool([Box3D((0.2, 0.2, 0.05), (1, 1, 1))], g, vef, 1)
        assert np.allclose(roi.voxel[0, 0], [4, 2])
        assert np.allclose(roi.event[0, 0], [1.5, 0])  # invalid row masked
        assert roi.voxel_counts[0, 0] == 3 and roi.event_counts[0, 0] == 2

    def test_octants_brute_force(self):
        box = Box3D((0.05, 0.05, 0.05), (1.0, 1.0, 1.0), 0.3)
        offsets = [(sx, sy, sz) for sx in (-0.25, 0.25) for sy in (-0.25, 0.25) for sz in (-0.25, 0.25)]
        R = box.rotation()
        pts = [box.center + R @ np.array(o) for o in offsets]
        feats = np.arange(16, dtype=float).reshape(8, 2)
        g = grid_from(pts)
        # order features by the grid's voxel order
        from dataclasses import replace
        local = world_to_box_local(box, g.centroids)
        g = replace(g, features=np.array([feats[offsets.index(tuple(np.sign(l) * 0.25))] for l in np.round(local, 2)]))
        vef = VirtualEventFeatures(g.features.copy(), np.ones(len(g), bool))
        roi = roi_grid_pool([box], g, vef, 2)
        for k, l in enumerate(world_to_box_local(box, g.centroids)):
            ix, iy, iz = (int(c > 0) for c in l)
            cell = ix * 4 + iy * 2 + iz
            assert np.array_equal(roi.voxel[0, cell], g.features[k])
            assert np.array_equal(roi.event[0, cell], g.features[k])
        assert roi.voxel_counts.sum() == 8 and np.all(roi.voxel_counts == 1)

    def test_every_centroid_in_one_cell(self, rng):
        g = grid_from(rng.uniform(-1, 1, (500, 3)))
        vef = VirtualEventFeatures(np.ones((len(g), 2)), np.ones(len(g), bool))
        box = Box3D((0.1, -0.2, 0), (1.2, 0.9, 1.1), 0.4)
        roi = roi_grid_pool([box], g, vef, 4)
        inside = np.all(np.abs(world_to_box_local(box, g.centroids)) <= box.dims / 2, axis=1).sum()
        assert roi.voxel_counts.sum() == inside


def random_roi(rng, n=2, S=2, C=3):
    cells = S ** 3
    return RoiGridFeatures(rng.normal(size=(n, cells, C)), rng.normal(size=(n, cells, C)),
                           np.ones((n, cells), int), np.ones((n, cells), int), S)


class TestHeads:
    def test_zero_field(self, rng):
        roi = RoiGridFeatures(np.zeros((1, 8, 3)), np.zeros((1, 8, 3)), np.zeros((1, 8)), np.zeros((1, 8)), 2)
        mlp = init_mlp([6, 5, 4], ["relu", "identity"], rng)
        assert not fuse_motion_field(roi, mlp).any()

    def test_single_cell_definition(self, rng):
        roi = random_roi(rng, 1, 1, 3)
        mlp = init_mlp([6, 5, 4], ["relu", "identity"], rng, zero_bias=False)
        direct, _ = mlp_forward(mlp, np.concatenate([roi.event[0, 0], roi.voxel[0, 0]]))
        assert np.allclose(fuse_motion_field(roi, mlp)[0, 0], direct)

    def test_fuse_oracle(self, rng):
        roi = random_roi(rng)
        mlp = init_mlp([6, 5, 4], ["relu", "identity"], rng, zero_bias=False)
        field = fuse_motion_field(roi, mlp)
        layers = [(l.weight, l.bias, l.activation) for l in mlp.layers]
        for i in range(2):
            for c in range(8):
                x = np.concatenate([roi.event[i, c], roi.voxel[i, c]])
                assert np.allclose(field[i, c], forward_oracle(layers, x), atol=1e-10)

    def test_fuse_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            fuse_motion_field(random_roi(rng), init_mlp([5, 4], ["relu"], rng))

    def test_motion_zero(self, rng):
        ms = predict_motion(np.zeros((2, 8, 4)), linear_mlp(np.zeros((4, 32))))
        assert all(np.array_equal(m.as_array(), np.zeros(4)) for m in ms)

    def test_motion_linear_flatten_order(self, rng):
        field = rng.normal(size=(1, 8, 2))
        L = rng.normal(size=(4, 16)) * 0.1
        m = predict_motion(field, linear_mlp(L))[0]
        # cell index = ix*S*S + iy*S + iz, channels innermost
        flat = np.array([field[0, ix * 4 + iy * 2 + iz, f]
                         for ix in range(2) for iy in range(2) for iz in range(2) for f in range(2)])
        assert np.allclose(m.as_array(), L @ flat)

    def test_motion_oracle(self, rng):
        field = rng.normal(size=(3, 8, 2))
        mlp = init_mlp([16, 6, 4], ["relu", "identity"], rng, zero_bias=False)
        mlp = mlp.with_tensors([t * 0.3 for t in mlp.tensors()])
        ms = predict_motion(field, mlp)
        layers = [(l.weight, l.bias, l.activation) for l in mlp.layers]
        for i in range(3):
            expect = forward_oracle(layers, field[i].ravel())
            assert np.allclose(ms[i].as_array()[:3], expect[:3], atol=1e-10)

    def test_confidence(self, rng):
        field = rng.normal(size=(3, 8, 2))
        assert np.allclose(predict_confidence(field, linear_mlp(np.zeros((1, 16)))), 0.5)
        huge = predict_confidence(np.ones((1, 8, 2)), linear_mlp(np.full((1, 16), 1e4)))
        assert huge[0] == 1.0
        mlp = init_mlp([16, 6, 1], ["relu", "identity"], rng, zero_bias=False)
        layers = [(l.weight, l.bias, l.activation) for l in mlp.layers]
        conf = predict_confidence(field, mlp)
        for i in range(3):
            z = forward_oracle(layers, field[i].ravel())[0]
            assert conf[i] == pytest.approx(1 / (1 + np.exp(-z)), abs=1e-10)


class TestApplyMotion:
    def test_zero(self, rng):
        b = Box3D(rng.normal(size=3), (2, 1, 1), 0.4)
        assert apply_motion(b, MotionVector()) == b

    def test_rotated_shift(self):
        b = apply_motion(Box3D((0, 0, 0), (2, 1, 1), np.pi / 2), MotionVector(1, 0, 0, 0))
        assert np.allclose(b.center, (0, 1, 0), atol=1e-12)

    def test_local_consistency_and_inverse(self, rng):
        for _ in range(50):
            b0 = Box3D(rng.normal(size=3), rng.uniform(0.5, 3, 3), rng.uniform(-3, 3))
            m = MotionVector(*rng.normal(size=3), rng.uniform(-3, 3))
            bt = apply_motion(b0, m)
            assert np.allclose(world_to_box_local(b0, bt.center), m.shift, atol=1e-12)
            c0, c1 = box_corners(b0), box_corners(bt)
            assert np.allclose(np.linalg.norm(c0[0] - c0[1:], axis=1), np.linalg.norm(c1[0] - c1[1:], axis=1))
            back = MotionVector(*(-bt.rotation().T @ b0.rotation() @ m.shift), -m.dalpha)
            b2 = apply_motion(bt, back)
            assert np.allclose(b2.center, b0.center, atol=1e-9)
            assert abs(np.angle(np.exp(1j * (b2.yaw - b0.yaw)))) < 1e-9

    def test_dalpha_wrapped(self):
        assert MotionVector(0, 0, 0, 4.0).dalpha == pytest.approx(4.0 - 2 * np.pi)


class TestCombineScore:
    @pytest.mark.parametrize("p0,pm,expected", [(1.0, 0.5, 0.5), (0.0, 0.7, 0.0), (0.8, 0.8, 0.64)])
    def test_product(self, p0, pm, expected):
        assert combine_score(p0, pm) == pytest.approx(expected, abs=1e-15)

    def test_range(self):
        with pytest.raises(ValueError):
            combine_score(1.2, 0.5)

    def test_monotone_and_ranking(self, rng):
        p0 = rng.uniform(size=50)
        pm = rng.uniform(size=50)
        s = [combine_score(a, b) for a, b in zip(p0, pm)]
        for c in (1.0, 0.5, 0.013):
            sc = [combine_score(c * a, b) for a, b in zip(p0, pm)]
            assert list(np.argsort(s, kind="stable")) == list(np.argsort(sc, kind="stable"))
        assert combine_score(0.5, 0.6) <= combine_score(0.6, 0.6) <= combine_score(0.6, 0.7)


def small_scene(rng):
    box = Box3D((8, 0, 0), (2, 1, 1), 0.2)
    local = (rng.random((300, 3)) - 0.5) * box.dims
    pts = local @ box.rotation().T + box.center
    cfg = VoxelConfig((0, -5, -2), (20, 5, 2), (0.2, 0.2, 0.2))
    grid = build_voxel_features(PointCloud(pts), cfg)
    cam = CameraModel(20, 20, 16, 12, CameraModel(1, 1, 0, 0).extrinsic, (32, 24))
    from blindtime.geometry import forward_camera
    cam = forward_camera(32, 24, 20.0)
    ev = EventStream(np.sort(rng.uniform(0, 1, 400)), rng.integers(0, 32, 400), rng.integers(0, 24, 400),
                     rng.choice([-1, 1], 400))
    return [BoxProposal(box, "vehicle", 0.9, "a")], grid, ev, cam


def small_model(rng, grid_channels=7):
    heads = HeadParams.init(channels=grid_channels, S=2, field_channels=3, fusion_hidden=4, head_hidden=(5,), seed=1)
    mlp = init_mlp([5, 7], ["identity"], rng)
    return BlindTimeModel(heads, EventEncoder(stride=2, mlp=mlp), S=2, bins=5)


class TestBlindTimeDetect:
    def test_t0_passthrough(self, rng):
        props, grid, ev, cam = small_scene(rng)
        out = blind_time_detect(props, grid, ev, cam, small_model(rng), 0.0)
        assert out == props

    def test_zero_motion_head(self, rng):
        props, grid, ev, cam = small_scene(rng)
        model = small_model(rng)
        model = BlindTimeModel(HeadParams(model.heads.fusion, model.heads.motion.zeros_like(),
                                          model.heads.confidence), model.event_encoder, 2, 5)
        for t in (0.1, 0.5, 0.9):
            out = blind_time_detect(props, grid, ev, cam, model, t)
            assert out[0].box == props[0].box
            assert 0 <= out[0].score <= props[0].score

    def test_rejects_t_outside(self, rng):
        props, grid, ev, cam = small_scene(rng)
        with pytest.raises(ValueError):
            blind_time_detect(props, grid, ev, cam, small_model(rng), 1.0)

    def test_voxel_features_computed_once(self, rng):
        props, grid, ev, cam = small_scene(rng)
        model = small_model(rng)
        with mock.patch.object(fusion, "_mean_pool", wraps=fusion._mean_pool) as pool, \
                mock.patch("blindtime.voxels.voxelize") as vox, \
                mock.patch("blindtime.voxels.encode_voxel_features") as enc:
            frame = ActiveFrame(props, grid, cam, model.S)
            voxel_pools = pool.call_count
            for t in np.arange(10) / 10:
                frame.detect(ev, model, float(t))
            # the voxel branch is pooled at construction only; each t pools the event branch once per proposal
            assert voxel_pools == len(props)
            assert pool.call_count == voxel_pools + 9 * len(props)
            assert vox.call_count == 0 and enc.call_count == 0
        assert frame.grid is grid

    def test_unmasked_variant_runs(self, rng):
        props, grid, ev, cam = small_scene(rng)
        model = small_model(rng)
        m2 = BlindTimeModel(model.heads, model.event_encoder, 2, 5, nonempty_mask=False)
        out = blind_time_detect(props, grid, ev, cam, m2, 0.5)
        assert len(out) == 1
