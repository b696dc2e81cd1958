"""Forward-warp tests. The projection is checked bit-for-bit against a
naive per-point splat oracle that implements the z-buffer rule with
explicit loops, and against the ray-cast simulator on synthetic scenes."""

import numpy as np
import pytest

from futureseg3d.geometry import (
    MISSING,
    CameraIntrinsics,
    DepthMap,
    EgoMotionVector,
    LabeledPointCloud,
    SegmentationMap,
    depth_to_pointcloud,
    egomotion_to_se3,
    se3_compose,
    transform_pointcloud,
)
from futureseg3d.metrics import evaluate
from futureseg3d.simulator import CameraPose, PlanePatch, Scene, render
from futureseg3d.warp import predict_future, predict_step, project_to_segmentation


def splat_oracle(cloud: LabeledPointCloud, k: CameraIntrinsics, reverse=False):
    """Slow reference: iterate points one by one (optionally in reverse) and
    keep the nearest-depth, lowest-source-index winner per pixel."""
    seg = np.full((k.height, k.width), MISSING, dtype=np.int16)
    zbuf = np.full((k.height, k.width), np.nan)
    best_src = np.full((k.height, k.width), -1, dtype=np.int64)
    h, w = cloud.valid.shape
    order = range(h * w)
    if reverse:
        order = reversed(list(order))
    for src in order:
        j, i = divmod(src, w)
        if not cloud.valid[j, i]:
            continue
        x, y, z = cloud.points[j, i]
        if z <= 0:
            continue
        ci = int(np.rint(k.fx * x / z + k.cx))
        rj = int(np.rint(k.fy * y / z + k.cy))
        if not (0 <= ci < k.width and 0 <= rj < k.height):
            continue
        old = zbuf[rj, ci]
        if np.isnan(old) or z < old or (z == old and src < best_src[rj, ci]):
            zbuf[rj, ci] = z
            seg[rj, ci] = cloud.labels[j, i]
            best_src[rj, ci] = src
    return seg, zbuf


def random_cloud(rng, k, num_classes=6, collisions=True):
    h, w = k.height, k.width
    if collisions:
        # depths drawn from a tiny set so many points share a pixel and
        # exact depth ties actually occur
        dvals = rng.choice([1.0, 2.0, 2.0, 5.0], size=(h, w))
    else:
        dvals = rng.uniform(1.0, 9.0, size=(h, w))
    labels = rng.integers(0, num_classes, size=(h, w)).astype(np.int16)
    cloud = depth_to_pointcloud(DepthMap(dvals), SegmentationMap(labels, num_classes), k)
    # shear the cloud through a transform so projections collide
    motion = EgoMotionVector.from_array(np.concatenate([
        rng.uniform(-0.5, 0.5, 2), [rng.uniform(-0.8, 0.2)],
        rng.uniform(-0.1, 0.1, 3)]))
    return transform_pointcloud(cloud, egomotion_to_se3(motion))


class TestProjectToSegmentation:
    def test_identity_roundtrip_reproduces_input(self):
        k = CameraIntrinsics(33.0, 21.0, 10.5, 8.25, 24, 18)
        rng = np.random.default_rng(0)
        dvals = rng.uniform(0.5, 20.0, size=(18, 24))
        dvals[3, 4] = np.nan
        labels = rng.integers(0, 5, size=(18, 24)).astype(np.int16)
        labels[10, 11] = MISSING
        d, s = DepthMap(dvals), SegmentationMap(labels, 5)
        res = project_to_segmentation(depth_to_pointcloud(d, s, k), k)
        live = d.valid & ~s.missing
        np.testing.assert_array_equal(res.segmentation.classes[live], s.classes[live])
        np.testing.assert_array_equal(res.depth_buffer.values[live], dvals[live])
        assert np.all(res.segmentation.classes[~live] == MISSING)
        assert res.missing_count == int((~live).sum())

    def test_zbuffer_keeps_nearest(self):
        k = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
        pts = np.zeros((1, 2, 3))
        pts[0, 0] = [0.0, 0.0, 1.0]   # class 0, nearer
        pts[0, 1] = [0.0, 0.0, 2.0]   # class 1, behind
        cloud = LabeledPointCloud(pts, np.array([[0, 1]], np.int16),
                                  np.ones((1, 2), bool), 2)
        res = project_to_segmentation(cloud, k)
        assert res.segmentation.classes[2, 2] == 0
        assert res.depth_buffer.values[2, 2] == 1.0

    def test_depth_tie_resolves_to_lowest_source_index(self):
        k = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
        pts = np.zeros((2, 1, 3))
        pts[0, 0] = [0.0, 0.0, 3.0]
        pts[1, 0] = [0.0, 0.0, 3.0]
        cloud = LabeledPointCloud(pts, np.array([[4], [2]], np.int16),
                                  np.ones((2, 1), bool), 5)
        res = project_to_segmentation(cloud, k)
        assert res.segmentation.classes[2, 2] == 4  # source index 0 wins

    def test_pinhole_column_arithmetic(self):
        # fx x/z + cx: (1, 0, 2) -> column 100; at z = 1 -> column 150
        k = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 200, 101)
        pts = np.zeros((1, 1, 3))
        pts[0, 0] = [1.0, 0.0, 2.0]
        cloud = LabeledPointCloud(pts, np.array([[3]], np.int16),
                                  np.ones((1, 1), bool), 4)
        res = project_to_segmentation(cloud, k)
        assert res.segmentation.classes[50, 100] == 3
        moved = transform_pointcloud(cloud, egomotion_to_se3(EgoMotionVector(tz=-1.0)))
        res2 = project_to_segmentation(moved, k)
        assert res2.segmentation.classes[50, 150] == 3

    def test_out_of_frame_points_dropped(self):
        k = CameraIntrinsics(10.0, 10.0, 2.0, 2.0, 5, 5)
        pts = np.zeros((1, 1, 3))
        pts[0, 0] = [10.0, 0.0, 1.0]  # column 102, far outside
        cloud = LabeledPointCloud(pts, np.array([[0]], np.int16),
                                  np.ones((1, 1), bool), 1)
        res = project_to_segmentation(cloud, k)
        assert res.missing_count == 25

    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_matches_loop_oracle_bit_for_bit(self, seed):
        rng = np.random.default_rng(seed)
        k = CameraIntrinsics(12.0, 12.0, 7.5, 5.5, 16, 12)
        cloud = random_cloud(rng, k)
        res = project_to_segmentation(cloud, k)
        seg_fwd, zbuf_fwd = splat_oracle(cloud, k)
        seg_rev, zbuf_rev = splat_oracle(cloud, k, reverse=True)
        # oracle output is independent of its iteration order
        np.testing.assert_array_equal(seg_fwd, seg_rev)
        np.testing.assert_array_equal(res.segmentation.classes, seg_fwd)
        np.testing.assert_array_equal(res.depth_buffer.values[~np.isnan(zbuf_fwd)],
                                      zbuf_fwd[~np.isnan(zbuf_fwd)])
        assert np.all(np.isnan(res.depth_buffer.values[np.isnan(zbuf_fwd)]))

    def test_missing_iff_depth_invalid(self):
        rng = np.random.default_rng(6)
        k = CameraIntrinsics(12.0, 12.0, 7.5, 5.5, 16, 12)
        res = project_to_segmentation(random_cloud(rng, k), k)
        np.testing.assert_array_equal(res.segmentation.missing,
                                      ~res.depth_buffer.valid)
        assert res.missing_count == int(res.segmentation.missing.sum())


def fullframe_plane_scene():
    plane = PlanePatch(2, origin=(-50.0, -50.0, 5.0), edge_u=(100.0, 0.0, 0.0),
                       edge_v=(0.0, 100.0, 0.0))
    return Scene((plane,), num_classes=3)


class TestPredictStep:
    def test_zero_motion_reproduces_source(self):
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        d, s = render(fullframe_plane_scene(), CameraPose.identity(), k)
        cloud = depth_to_pointcloud(d, s, k)
        _, res = predict_step(cloud, EgoMotionVector(), k)
        np.testing.assert_array_equal(res.segmentation.classes, s.classes)

    def test_one_step_agrees_with_oracle_render(self):
        from futureseg3d.simulator import default_camera, street_canyon
        k = default_camera(128, 64)
        scene = street_canyon()
        motion = EgoMotionVector(0.0, 0.0, -0.35, 0.0, 0.01, 0.0)
        d, s = render(scene, CameraPose.identity(), k)
        future_pose = CameraPose(egomotion_to_se3(motion).inverse())
        d_gt, s_gt = render(scene, future_pose, k)
        _, res = predict_step(depth_to_pointcloud(d, s, k), motion, k)
        both = ~res.segmentation.missing & ~s_gt.missing
        # exclude disocclusions: compare only where the warped depth agrees
        # with the oracle depth to 2%
        close = np.zeros_like(both)
        close[both] = np.abs(res.depth_buffer.values[both] - d_gt.values[both]) \
            < 0.02 * d_gt.values[both]
        agree = res.segmentation.classes[close] == s_gt.classes[close]
        assert agree.mean() >= 0.99

    def test_camera_retreat_leaves_holes(self):
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        d, s = render(fullframe_plane_scene(), CameraPose.identity(), k)
        assert int(s.missing.sum()) == 0
        cloud = depth_to_pointcloud(d, s, k)
        _, res = predict_step(cloud, EgoMotionVector(tz=1.0), k)
        assert res.missing_count > 0


class TestPredictFuture:
    def test_single_zero_step_equals_input(self):
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        rng = np.random.default_rng(7)
        dvals = rng.uniform(1.0, 10.0, size=(16, 16))
        dvals[0, 0] = np.nan
        labels = rng.integers(0, 4, size=(16, 16)).astype(np.int16)
        d, s = DepthMap(dvals), SegmentationMap(labels, 4)
        seq = predict_future(d, s, k, [EgoMotionVector()], inpaint_enabled=False)
        assert len(seq.steps) == 1
        valid = d.valid
        np.testing.assert_array_equal(seq.steps[0].inpainted.classes[valid],
                                      s.classes[valid])

    def test_empty_motion_list_rejected(self):
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        d = DepthMap(np.ones((16, 16)))
        s = SegmentationMap(np.zeros((16, 16), np.int16), 1)
        with pytest.raises(ValueError):
            predict_future(d, s, k, [])

    def test_five_steps_yield_five_entries(self):
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        d = DepthMap(np.full((16, 16), 5.0))
        s = SegmentationMap(np.zeros((16, 16), np.int16), 1)
        motions = [EgoMotionVector(tz=-0.1)] * 5
        seq = predict_future(d, s, k, motions, inpaint_enabled=True)
        assert [st.index for st in seq.steps] == [1, 2, 3, 4, 5]

    def test_three_steps_beat_frozen_copy_baseline(self):
        from futureseg3d.simulator import default_camera, default_trajectory, street_canyon
        from futureseg3d.simulator import generate_sequence
        k = default_camera(128, 64)
        scene = street_canyon()
        frames = generate_sequence(scene, default_trajectory(3), k)
        motions = [fr.motion_to_next for fr in frames[:-1]]
        seq = predict_future(frames[0].depth, frames[0].segmentation, k, motions)
        gt = frames[3].segmentation
        warped_iou = evaluate(seq.steps[2].inpainted, gt).mean_iou
        frozen_iou = evaluate(frames[0].segmentation, gt).mean_iou
        assert warped_iou >= frozen_iou

    def test_two_steps_equal_one_composed_step(self):
        # recursion must act on the persistent 3D cloud
        k = CameraIntrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
        rng = np.random.default_rng(8)
        d = DepthMap(rng.uniform(2.0, 10.0, size=(16, 16)))
        s = SegmentationMap(rng.integers(0, 3, size=(16, 16)).astype(np.int16), 3)
        motion = EgoMotionVector(0.01, -0.02, -0.2, 0.004, -0.01, 0.02)
        t = egomotion_to_se3(motion)
        cloud = depth_to_pointcloud(d, s, k)
        c1, _ = predict_step(cloud, motion, k)
        c2, res_two = predict_step(c1, motion, k)
        composed = transform_pointcloud(cloud, se3_compose(t, t))
        assert np.abs(c2.points[c2.valid] - composed.points[c2.valid]).max() < 1e-9
        res_one = project_to_segmentation(composed, k)
        np.testing.assert_array_equal(res_two.segmentation.classes,
                                      res_one.segmentation.classes)

    def test_outputs_are_class_or_missing_only(self):
        from futureseg3d.simulator import default_camera, default_trajectory, street_canyon
        from futureseg3d.simulator import generate_sequence
        k = default_camera(64, 32)
        frames = generate_sequence(street_canyon(), default_trajectory(2), k)
        motions = [fr.motion_to_next for fr in frames[:-1]]
        seq = predict_future(frames[0].depth, frames[0].segmentation, k, motions)
        for step in seq.steps:
            for arr in (step.raw.segmentation.classes, step.inpainted.classes):
                assert np.all((arr == MISSING) | ((arr >= 0) & (arr < 5)))
