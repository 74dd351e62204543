import numpy as np
import pytest

from conftest import random_cloud
from oracles import frustum_oracle, project_oracle, zbuffer_oracle
from xmkd.geometry import (
    IGNORE,
    CalibrationSet,
    GeometryError,
    PointCloudFrame,
    backproject,
    compose_rigid,
    format_calibration,
    fov_coverage,
    invert_rigid,
    parse_calibration,
    pinhole_calibration,
    project_labels,
    project_points,
)


def cloud_of(*pts, labels=None):
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    return PointCloudFrame(pts, np.zeros(len(pts)), labels)


def test_principal_point(simple_calib):
    corr = project_points(cloud_of((0, 0, 2)), simple_calib)
    assert corr.pixel_uv[0].tolist() == [50.0, 50.0]
    assert corr.depth[0] == 2.0
    assert corr.in_fov[0]


def test_right_edge_is_outside(simple_calib):
    # u = 100 * 1/2 + 50 = 100 = W: half-open boundary excludes it
    corr = project_points(cloud_of((1, 0.5, 2)), simple_calib)
    u, v, d = project_oracle((1, 0.5, 2), simple_calib.cam_projection, simple_calib.lidar_to_cam)
    assert (u, v) == (100.0, 75.0)
    np.testing.assert_allclose(corr.pixel_uv[0], [100.0, 75.0], atol=1e-12)
    assert not corr.in_fov[0]


def test_behind_camera(simple_calib):
    corr = project_points(cloud_of((0, 0, -1), (0.1, 0.1, -1)), simple_calib)
    assert not corr.in_fov.any()
    assert fov_coverage(corr) == 0.0


def test_all_on_axis_is_full_coverage(simple_calib):
    corr = project_points(cloud_of(*[(0, 0, z) for z in (1, 2, 5, 9)]), simple_calib)
    assert fov_coverage(corr) == 1.0


def test_empty_cloud_coverage_raises(simple_calib):
    corr = project_points(PointCloudFrame(np.zeros((0, 3)), np.zeros(0)), simple_calib)
    with pytest.raises(GeometryError):
        fov_coverage(corr)


def test_non_finite_point_reports_index(simple_calib):
    pts = np.zeros((4, 3))
    pts[2, 1] = np.nan
    with pytest.raises(GeometryError, match="index 2"):
        project_points(PointCloudFrame(pts, np.zeros(4)), simple_calib)


def test_calibration_invariants():
    P = np.eye(3, 4)
    bad = np.concatenate([np.diag([1.0, 1.0, 1.1]), np.zeros((3, 1))], axis=1)
    with pytest.raises(GeometryError):
        CalibrationSet(P, bad, 10, 10)
    with pytest.raises(GeometryError):
        CalibrationSet(P, np.eye(3, 4), 0, 10)
    with pytest.raises(GeometryError):
        CalibrationSet(np.eye(3), np.eye(3, 4), 10, 10)


def test_fov_coverage_matches_frustum_oracle():
    rng = np.random.default_rng(1)
    calib = pinhole_calibration((40, 120), 90.0, position=(0.3, 0.0, 0.1), yaw=0.4, pitch=-0.05)
    cloud = random_cloud(rng, 500)
    corr = project_points(cloud, calib)
    flags = [frustum_oracle(p, calib.cam_projection, calib.lidar_to_cam, 40, 120) for p in cloud.positions]
    assert corr.in_fov.tolist() == flags
    assert fov_coverage(corr) == sum(flags) / 500


def test_single_label_splat(simple_calib):
    cloud = cloud_of((0, 0, 2), labels=np.array([3]))
    img = project_labels(cloud, project_points(cloud, simple_calib), simple_calib.image_size)
    assert img[50, 50] == 3
    assert (img != IGNORE).sum() == 1


def test_zbuffer_nearest_wins(simple_calib):
    cloud = cloud_of((0, 0, 2.0), (0, 0, 5.0), labels=np.array([1, 2]))
    img = project_labels(cloud, project_points(cloud, simple_calib), simple_calib.image_size)
    assert img[50, 50] == 1
    cloud = cloud_of((0, 0, 5.0), (0, 0, 2.0), labels=np.array([2, 1]))
    img = project_labels(cloud, project_points(cloud, simple_calib), simple_calib.image_size)
    assert img[50, 50] == 1


def test_label_splat_matches_bruteforce():
    rng = np.random.default_rng(2)
    calib = pinhole_calibration((12, 20), 100.0)
    for _ in range(5):
        cloud = random_cloud(rng, 300, scale=6.0)
        img = project_labels(cloud, project_points(cloud, calib), calib.image_size)
        ref = zbuffer_oracle(cloud.positions, cloud.labels, calib.cam_projection, calib.lidar_to_cam, 12, 20)
        assert np.array_equal(img, ref)


def test_backproject_round_trip():
    rng = np.random.default_rng(3)
    calib = pinhole_calibration((64, 192), 120.0, position=(0.27, 0, -0.08), yaw=0.2, pitch=-0.05)
    uv = rng.uniform([0, 0], [192, 64], size=(50, 2))
    depth = rng.uniform(1, 40, 50)
    pts = backproject(uv, depth, calib)
    corr = project_points(PointCloudFrame(pts, np.zeros(50)), calib)
    assert np.abs(corr.pixel_uv - uv).max() <= 1e-4
    np.testing.assert_allclose(corr.depth, depth, atol=1e-9)


def test_rigid_invariance():
    rng = np.random.default_rng(4)
    calib = pinhole_calibration((40, 120), 90.0, yaw=0.3)
    cloud = random_cloud(rng, 200)
    a, b = rng.normal(size=3), rng.normal(size=3)
    R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(R) < 0:
        R[:, 0] *= -1
    G = np.concatenate([R, (a - b)[:, None]], axis=1)
    moved = PointCloudFrame(cloud.positions @ R.T + G[:, 3], cloud.intensity, cloud.labels)
    calib2 = CalibrationSet(calib.cam_projection, compose_rigid(calib.lidar_to_cam, invert_rigid(G)), 40, 120)
    c1, c2 = project_points(cloud, calib), project_points(moved, calib2)
    assert np.array_equal(c1.in_fov, c2.in_fov)
    np.testing.assert_allclose(c1.pixel_uv[c1.in_fov], c2.pixel_uv[c2.in_fov], atol=1e-6)


def test_parse_calibration_kitti_style():
    calib = pinhole_calibration((64, 192), 120.0, yaw=0.1)
    text = "junk: 1 2 3\n" + format_calibration(calib)
    lines = text.strip().splitlines()
    parsed = parse_calibration("\n".join(reversed(lines)))
    np.testing.assert_allclose(parsed.cam_projection, calib.cam_projection, rtol=1e-12)
    np.testing.assert_allclose(parsed.lidar_to_cam, calib.lidar_to_cam, atol=1e-12)
    assert parsed.image_size == (64, 192)


def test_parse_tr_velo_to_cam_and_r0():
    P = np.array([[100.0, 0, 50, 0], [0, 100.0, 50, 0], [0, 0, 1, 0]])
    text = (
        "P2: " + " ".join(map(str, P.ravel())) + "\n"
        "R0_rect: 1 0 0 0 1 0 0 0 1\n"
        "Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    )
    calib = parse_calibration(text, image_size=(100, 100))
    np.testing.assert_allclose(calib.cam_projection, P)
    with pytest.raises(GeometryError):
        parse_calibration("P2: 1 2 3\n", image_size=(10, 10))
