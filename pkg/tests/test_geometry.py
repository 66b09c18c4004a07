import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citypano.errors import DegenerateInput, DomainError
from citypano.geometry import (
    CameraPose,
    EquirectGrid,
    PerspectiveIntrinsics,
    equirect_pixel_to_ray,
    make_view_set,
    perspective_project,
    pose_rotation,
    ray_to_equirect_pixel,
    unproject_pixel,
    world_to_pano,
)

HD_GRID = EquirectGrid(13312, 6656)
SMALL_GRID = EquirectGrid(512, 256)


class TestEquirectPixelToRay:
    def test_center_pixel_is_forward(self):
        assert np.allclose(equirect_pixel_to_ray(HD_GRID, 6656, 3328), [0, 1, 0], atol=1e-12)

    def test_top_row_is_zenith(self):
        assert np.allclose(equirect_pixel_to_ray(HD_GRID, 6656, 0), [0, 0, 1], atol=1e-12)

    def test_quarter_turn_west(self):
        # phi = -pi/2, theta = 0 by direct evaluation of the mapping
        assert np.allclose(equirect_pixel_to_ray(SMALL_GRID, 128, 128), [-1, 0, 0], atol=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            equirect_pixel_to_ray(SMALL_GRID, 512, 10)
        with pytest.raises(DomainError):
            equirect_pixel_to_ray(SMALL_GRID, -0.1, 10)

    def test_output_always_unit(self, rng):
        u = rng.uniform(0, 511.999, 200)
        v = rng.uniform(0, 256, 200)
        d = equirect_pixel_to_ray(SMALL_GRID, u, v)
        assert np.max(np.abs(np.linalg.norm(d, axis=-1) - 1)) < 1e-9


class TestRayToEquirectPixel:
    def test_forward_maps_to_center(self):
        assert ray_to_equirect_pixel(SMALL_GRID, np.array([0, 1, 0])) == (256, 128)

    def test_nadir_maps_to_bottom_u0(self):
        u, v = ray_to_equirect_pixel(SMALL_GRID, np.array([0, 0, -1]))
        assert u == 0 and v == 256

    def test_round_trip_fractional_pixel(self):
        d = equirect_pixel_to_ray(SMALL_GRID, 100.25, 77.5)
        u, v = ray_to_equirect_pixel(SMALL_GRID, d)
        assert abs(u - 100.25) < 1e-6 and abs(v - 77.5) < 1e-6

    def test_round_trip_over_full_grid(self):
        jj, ii = np.meshgrid(np.arange(0.5, 512), np.arange(1.0, 255.0))
        d = equirect_pixel_to_ray(SMALL_GRID, jj, ii)
        u, v = ray_to_equirect_pixel(SMALL_GRID, d)
        assert np.max(np.abs(u - jj)) < 1e-6
        assert np.max(np.abs(v - ii)) < 1e-6

    @given(
        u=st.floats(0, 511.99999),
        v=st.floats(1.0, 254.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, u, v):
        d = equirect_pixel_to_ray(SMALL_GRID, u, v)
        uu, vv = ray_to_equirect_pixel(SMALL_GRID, d)
        assert abs(uu - u) < 1e-6 and abs(vv - v) < 1e-6


class TestCameraPose:
    def test_upside_down_rejected(self):
        with pytest.raises(DomainError):
            CameraPose(location=[0, 0, 0], azimuth=0.0, up=[0, 0, -1])

    def test_non_unit_up_rejected(self):
        with pytest.raises(DomainError):
            CameraPose(location=[0, 0, 0], azimuth=0.0, up=[0, 0, 2])

    def test_rotation_orthonormal_over_random_poses(self, rng):
        for _ in range(100):
            tilt = rng.uniform(-0.7, 0.7, 2)
            up = np.array([tilt[0], tilt[1], 1.0])
            up /= np.linalg.norm(up)
            pose = CameraPose(location=rng.uniform(-10, 10, 3), azimuth=rng.uniform(-7, 7), up=up)
            r = pose_rotation(pose)
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
            assert abs(np.linalg.det(r) - 1) < 1e-9


class TestWorldToPano:
    def test_point_straight_ahead(self):
        pose = CameraPose(location=[0, 0, 0], azimuth=0.0)
        assert np.allclose(world_to_pano(pose, [0, 10, 0]), [0, 1, 0], atol=1e-12)

    def test_point_straight_up(self):
        pose = CameraPose(location=[0, 0, 0], azimuth=0.0)
        assert np.allclose(world_to_pano(pose, [0, 0, 5]), [0, 0, 1], atol=1e-12)

    def test_azimuth_quarter_turn(self):
        pose = CameraPose(location=[0, 0, 0], azimuth=np.pi / 2)
        assert np.allclose(world_to_pano(pose, [10, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_degenerate_point_raises(self):
        pose = CameraPose(location=[1, 2, 3], azimuth=0.0)
        with pytest.raises(DegenerateInput):
            world_to_pano(pose, [1, 2, 3])

    def test_output_unit_length(self, rng):
        pose = CameraPose(location=[1, 2, 3], azimuth=0.7)
        pts = rng.uniform(-50, 50, size=(100, 3))
        d = world_to_pano(pose, pts)
        assert np.max(np.abs(np.linalg.norm(d, axis=1) - 1)) < 1e-9


class TestPerspectiveProject:
    INTR = PerspectiveIntrinsics(90.0, 512, 512)

    def test_optical_axis(self):
        assert perspective_project(self.INTR, np.array([0, 0, 1.0])) == (256, 256, True)

    def test_right_edge_at_45deg(self):
        u, v, ok = perspective_project(self.INTR, np.array([1, 0, 1.0]) / np.sqrt(2))
        assert ok and abs(u - 512) < 1e-9 and abs(v - 256) < 1e-9

    def test_behind_camera(self):
        _, _, ok = perspective_project(self.INTR, np.array([0, 0, -1.0]))
        assert not ok

    def test_project_unproject_round_trip(self, rng):
        u = rng.uniform(0, 512, 300)
        v = rng.uniform(0, 512, 300)
        d = unproject_pixel(self.INTR, u, v)
        uu, vv, ok = perspective_project(self.INTR, d)
        assert ok.all()
        assert np.max(np.abs(uu - u)) < 1e-6 and np.max(np.abs(vv - v)) < 1e-6

    def test_bad_fov_rejected(self):
        with pytest.raises(DomainError):
            PerspectiveIntrinsics(0.0, 10, 10)
        with pytest.raises(DomainError):
            PerspectiveIntrinsics(180.0, 10, 10)


class TestMakeViewSet:
    def test_yaws_exactly_45_apart(self):
        for seed in (0, 1, 99):
            views = make_view_set(seed)
            assert [v.yaw for v in views] == [np.radians(45.0 * k) for k in range(8)]

    def test_determinism(self):
        a = make_view_set(7)
        b = make_view_set(7)
        assert [v.pitch for v in a] == [v.pitch for v in b]

    def test_pitch_range(self):
        for seed in range(25):
            views = make_view_set(seed)
            assert all(0 <= np.degrees(v.pitch) <= 45 for v in views)

    def test_standard_frame(self):
        views = make_view_set(3)
        assert all(v.fov_deg == 90.0 and v.width == 512 and v.height == 512 for v in views)


def test_equirect_grid_requires_2_to_1():
    with pytest.raises(DomainError):
        EquirectGrid(512, 512)
