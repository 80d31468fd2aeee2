import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from pvhdet.exceptions import DegenerateProjection, InvalidScale
from pvhdet.services.camera_service import (
    adjust_intrinsics,
    augment_view,
    camera_center,
    is_valid,
    perturb_extrinsics,
    project_point,
    project_points,
    projection_matrix,
    random_translation_noise,
)
from tests.helpers import make_camera, random_rotation


def test_projection_matrix_identity():
    cam = make_camera(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    np.testing.assert_array_equal(projection_matrix(cam), np.hstack([np.eye(3), np.zeros((3, 1))]))


def test_projection_matrix_intrinsics_layout():
    cam = make_camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0)
    np.testing.assert_array_equal(projection_matrix(cam)[0], [100.0, 0.0, 50.0, 0.0])


def test_projection_matrix_matches_naive_multiply():
    rng = np.random.default_rng(0)
    for _ in range(20):
        R = random_rotation(rng)
        t = rng.normal(size=3)
        cam = make_camera(fx=rng.uniform(50, 500), fy=rng.uniform(50, 500), cx=rng.uniform(0, 100),
                          cy=rng.uniform(0, 100), R=R, t=t)
        K = [[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1]]
        Rt = [list(R[i]) + [t[i]] for i in range(3)]
        expected = [[sum(K[i][k] * Rt[k][j] for k in range(3)) for j in range(4)] for i in range(3)]
        np.testing.assert_allclose(projection_matrix(cam), expected, rtol=0, atol=1e-12)


def test_project_point_identity_camera():
    cam = make_camera(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    assert project_point(cam, (0.0, 0.0, 1.0)) == (0.0, 0.0, 1.0)


def test_project_point_on_optical_axis_hits_principal_point():
    cam = make_camera()
    u, v, depth = project_point(cam, (0.0, 0.0, 2.0))
    assert (u, v, depth) == pytest.approx((50.0, 50.0, 2.0))


def test_project_points_matches_homogeneous_oracle():
    rng = np.random.default_rng(1)
    cam = make_camera(fx=420.0, fy=410.0, cx=300.0, cy=200.0, R=random_rotation(rng), t=(0.2, -0.1, 10.0))
    points = rng.uniform(-1, 1, size=(100, 3))
    uv, depth = project_points(cam, points)

    P = projection_matrix(cam)
    for k, X in enumerate(points):
        h = P @ np.append(X, 1.0)
        assert uv[k] == pytest.approx(h[:2] / h[2], abs=1e-10)
        assert depth[k] == pytest.approx(h[2], abs=1e-12)


def test_project_point_on_principal_plane_raises():
    cam = make_camera(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(DegenerateProjection):
        project_point(cam, (1.0, 1.0, 0.0))


@pytest.mark.parametrize(
    "point, expected",
    [
        ((0.0, 0.0, 1.0), True),  # u = v = 0 落在边界上
        ((0.0, 0.0, -1.0), False),
        ((20.0, 0.0, 1.0), False),
        ((10.0, 10.0, 1.0), True),
    ],
)
def test_is_valid_closed_bounds_and_depth(point, expected):
    cam = make_camera(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    assert is_valid(cam, point, 10, 10) is expected


def test_adjust_intrinsics_identity():
    cam = make_camera(R=random_rotation(np.random.default_rng(2)), t=(1, 2, 3))
    assert adjust_intrinsics(cam, 1.0) == cam


def test_adjust_intrinsics_quarter_scale():
    cam = make_camera(fx=100.0, fy=100.0, cx=0.0, cy=0.0)
    X = (1.0, 0.6, 1.0)
    assert project_point(cam, X)[:2] == pytest.approx((100.0, 60.0))
    assert project_point(adjust_intrinsics(cam, 0.25), X)[:2] == pytest.approx((25.0, 15.0))


@settings(max_examples=50, deadline=None)
@given(
    scale=st.floats(0.8, 1.2),
    shift_u=st.floats(-20, 20),
    shift_v=st.floats(-20, 20),
    seed=st.integers(0, 2 ** 16),
)
def test_adjust_intrinsics_equals_transform_after_projection(scale, shift_u, shift_v, seed):
    rng = np.random.default_rng(seed)
    cam = make_camera(fx=300.0, fy=320.0, cx=160.0, cy=120.0, R=random_rotation(rng), t=(0.0, 0.0, 8.0))
    points = rng.uniform(-1, 1, size=(50, 3))
    uv, _ = project_points(cam, points)
    uv_adj, _ = project_points(adjust_intrinsics(cam, scale, shift_u, shift_v), points)
    np.testing.assert_allclose(uv_adj, uv * scale + [shift_u, shift_v], rtol=0, atol=1e-9)


def test_adjust_intrinsics_separate_vertical_scale():
    cam = make_camera(fx=100.0, fy=100.0, cx=40.0, cy=30.0, width=80, height=60)
    adjusted = adjust_intrinsics(cam, 0.5, scale_v=0.25, image_size=(40, 15))
    assert (adjusted.fx, adjusted.fy, adjusted.cx, adjusted.cy) == (50.0, 25.0, 20.0, 7.5)
    assert (adjusted.image_w, adjusted.image_h) == (40, 15)


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_adjust_intrinsics_rejects_non_positive_scale(scale):
    with pytest.raises(InvalidScale):
        adjust_intrinsics(make_camera(), scale)


def test_perturb_extrinsics():
    cam = make_camera(t=(1.0, 2.0, 3.0))
    assert perturb_extrinsics(cam, (0.0, 0.0, 0.0)) == cam
    assert perturb_extrinsics(cam, (0.1, 0.0, 0.0)).t == pytest.approx((1.1, 2.0, 3.0))


def test_perturb_extrinsics_moves_projection_of_origin():
    rng = np.random.default_rng(3)
    R = random_rotation(rng)
    cam = make_camera(R=R, t=(0.0, 0.0, 5.0))
    noise = rng.normal(scale=0.1, size=3)
    moved = perturb_extrinsics(cam, noise)
    h = cam.K @ (R @ np.zeros(3) + np.array([0.0, 0.0, 5.0]) + noise)
    assert project_point(moved, (0.0, 0.0, 0.0))[:2] == pytest.approx(h[:2] / h[2], abs=1e-10)


def test_random_translation_noise_has_fixed_norm():
    rng = np.random.default_rng(4)
    for _ in range(10):
        assert np.linalg.norm(random_translation_noise(rng, 0.2)) == pytest.approx(0.2)
    assert not random_translation_noise(rng, 0.0).any()


def test_camera_center_inverts_translation():
    rng = np.random.default_rng(5)
    R = random_rotation(rng)
    C = np.array([1.0, -2.0, 3.0])
    cam = make_camera(R=R, t=-R @ C)
    np.testing.assert_allclose(camera_center(cam), C, atol=1e-12)


def test_non_orthonormal_rotation_rejected():
    with pytest.raises(ValidationError):
        make_camera(R=2.0 * np.eye(3))


def test_calibration_aliases():
    cam = make_camera(width=640, height=480)
    dumped = cam.model_dump(by_alias=True)
    assert dumped["width"] == 640 and dumped["height"] == 480
    assert len(dumped["R"]) == 9


def test_augment_view_keeps_projection_consistent():
    height, width = 40, 60
    # 线性斜坡：连续坐标 x 处的值为 x
    image = np.tile(np.arange(width, dtype=np.float64) + 0.5, (height, 1))
    cam = make_camera(fx=50.0, fy=50.0, cx=30.0, cy=20.0, width=width, height=height)

    warped, adjusted = augment_view(image, cam, np.random.default_rng(7))
    assert warped.shape == image.shape and warped.dtype == np.float32

    s = adjusted.fx / cam.fx
    shift_u = adjusted.cx - s * cam.cx
    cols = np.arange(width) + 0.5
    source = (cols - shift_u) / s - 0.5
    inside = (source >= 0.01) & (source <= width - 1.01)
    assert inside.sum() > width // 2
    np.testing.assert_allclose(warped[height // 2, inside], (cols[inside] - shift_u) / s, atol=1e-4)


def test_augment_view_warps_every_plane_without_warnings():
    rng = np.random.default_rng(3)
    plane = rng.uniform(size=(12, 16))
    image = np.stack([plane, plane])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        warped, _ = augment_view(image, make_camera(width=16, height=12), np.random.default_rng(1), max_shift=2.0)
    assert warped.shape == (2, 12, 16)
    np.testing.assert_array_equal(warped[0], warped[1])


def test_augment_view_rejects_bad_range():
    with pytest.raises(InvalidScale):
        augment_view(np.zeros((4, 4)), make_camera(), np.random.default_rng(0), scale_range=(1.2, 0.8))
