import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import axis_angle_matrix
from rotsym.errors import BehindCameraError
from rotsym.geometry import PolygonParams3D, RotationGroup, normalize_axis, vertex_angles
from rotsym.projection import (
    DEFAULT_DEPTHS,
    EPS_DEPTH,
    CameraGridSpec,
    CameraIntrinsics,
    backproject,
    cca_reference_points,
    project_point,
    project_points,
    project_polygon,
)


class TestIntrinsics:
    def test_default_is_image_centered(self):
        K = CameraIntrinsics.default(1280, 720)
        assert (K.f, K.cx, K.cy) == (1000.0, 640.0, 360.0)

    @pytest.mark.parametrize("f", [0.0, -1.0, math.inf])
    def test_invalid_focal(self, f):
        with pytest.raises(ValueError):
            CameraIntrinsics(f=f, cx=0, cy=0)


class TestProjectPoint:
    def test_on_axis(self, K):
        assert project_point((0, 0, 2), K) == (640.0, 360.0)

    def test_direct_evaluation(self):
        assert project_point((0.5, -0.25, 1), CameraIntrinsics(1000, 0, 0)) == (500.0, -250.0)

    @pytest.mark.parametrize("z", [0.0, -1.0, EPS_DEPTH / 2])
    def test_behind_camera(self, K, z):
        with pytest.raises(BehindCameraError):
            project_point((0, 0, z), K)

    def test_at_eps_depth_is_allowed(self, K):
        project_point((0, 0, EPS_DEPTH), K)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 50), st.floats(0.1, 10))
    def test_scale_invariance(self, x, y, z, lam):
        K = CameraIntrinsics(1000, 640, 360)
        a = project_point((x, y, z), K)
        b = project_point((lam * x, lam * y, lam * z), K)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-9)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 50))
    def test_backproject_round_trip(self, x, y, z):
        K = CameraIntrinsics(1000, 640, 360)
        p = backproject(project_point((x, y, z), K), z, K)
        assert abs(p[0] - x) <= 1e-9 and abs(p[1] - y) <= 1e-9

    def test_monotone_depth(self, K):
        prev = math.inf
        for z in np.linspace(0.5, 10, 40):
            u, v = project_point((0.3, -0.2, z), K)
            d = math.hypot(u - K.cx, v - K.cy)
            assert d < prev
            prev = d

    def test_vectorized_matches_scalar(self, rng, K):
        pts = np.column_stack([rng.normal(size=(20, 2)), rng.uniform(0.5, 4, 20)])
        out = project_points(pts, K)
        for p, uv in zip(pts, out):
            assert tuple(uv) == project_point(p, K)

    def test_vectorized_reports_index(self, K):
        with pytest.raises(BehindCameraError) as exc:
            project_points([(0, 0, 1), (0, 0, 2), (0, 0, -1)], K)
        assert exc.value.index == 2


class TestProjectPolygon:
    def test_square_example(self, K):
        p = PolygonParams3D(c=(0, 0, 2), s=(1, 0, 2), a=(0, 0, 1), group="C4")
        poly = project_polygon(p, K)
        assert poly.center == (640.0, 360.0)
        np.testing.assert_allclose(poly.vertices, [(640, 860), (140, 360), (640, -140), (1140, 360)], atol=1e-9)
        assert poly.group is RotationGroup.C4
        assert poly.scores is None

    def test_frontoparallel_similarity(self, K):
        c = np.array([0.2, -0.1, 3.0])
        p = PolygonParams3D(c=c, s=c + (0.25, 0.1, 0), a=(0, 0, 5), group="C6")
        poly = project_polygon(p, K)
        from rotsym.geometry import reconstruct

        v3 = reconstruct(p)
        expected = v3[:, :2] * (K.f / 3.0) + (K.cx, K.cy)
        np.testing.assert_allclose(poly.vertices, expected, atol=1e-9)

    def test_composition_oracle(self, make_params, K):
        for _ in range(50):
            p = make_params()
            poly = project_polygon(p, K)
            k = normalize_axis(p.a)
            r = np.subtract(p.s, p.c)
            for th, uv in zip(vertex_angles(p.group, p.beta), poly.vertices):
                x, y, z = np.asarray(p.c) + axis_angle_matrix(k, th) @ r
                assert uv == pytest.approx((K.f * x / z + K.cx, K.f * y / z + K.cy), abs=1e-9)

    def test_behind_camera_names_point(self, K):
        p = PolygonParams3D(c=(0, 0, 0.5), s=(0, 0, 1.5), a=(1, 0, 0), group="C4")
        with pytest.raises(BehindCameraError) as exc:
            project_polygon(p, K)
        assert exc.value.index == 1  # rotated half a turn about x: z = -0.5

    def test_center_behind(self, K):
        p = PolygonParams3D(c=(0, 0, -1), s=(1, 0, 1), a=(0, 0, 1), group="C4")
        with pytest.raises(BehindCameraError) as exc:
            project_polygon(p, K)
        assert exc.value.index == "center"


class TestReferenceGrid:
    def test_defaults(self):
        g = CameraGridSpec()
        assert (g.nx, g.ny, g.depths) == (50, 50, DEFAULT_DEPTHS)

    def test_cell_centers(self):
        xs, ys = CameraGridSpec(nx=4, ny=2).cell_centers()
        np.testing.assert_allclose(xs, [-0.75, -0.25, 0.25, 0.75])
        np.testing.assert_allclose(ys, [-0.5, 0.5])

    @pytest.mark.parametrize(
        "kw",
        [dict(nx=0), dict(x_range=(1, 1)), dict(depths=()), dict(depths=(1, 1)), dict(depths=(2, 1)), dict(depths=(0, 1))],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CameraGridSpec(**kw)

    def test_on_axis_ray(self, K):
        # odd grid puts the middle cell on the optical axis
        g = CameraGridSpec(nx=3, ny=3, depths=(1, 2, 3, 4))
        s = cca_reference_points(g, K, 1280, 720)
        np.testing.assert_array_equal(s.uv[1, 1], [[640, 360]] * 4)
        assert s.in_bounds[1, 1].all()

    def test_corner_example(self, K):
        g = CameraGridSpec(nx=1, ny=1, x_range=(0.5, 1.5), y_range=(0.5, 1.5), depths=(2.0,))
        s = cca_reference_points(g, K, 1280, 720)
        np.testing.assert_array_equal(s.uv[0, 0, 0], [1140, 860])
        assert not s.in_bounds[0, 0, 0]

    def test_matches_project_point_exactly(self, K):
        g = CameraGridSpec(nx=7, ny=5, depths=(0.5, 1.5, 2.5, 3.5))
        s = cca_reference_points(g, K, 1280, 720)
        for i, x in enumerate(s.xs):
            for j, y in enumerate(s.ys):
                for d, z in enumerate(s.depths):
                    assert tuple(s.uv[i, j, d]) == project_point((x, y, z), K)

    def test_in_bounds_fraction_recount(self, K):
        g = CameraGridSpec()
        s = cca_reference_points(g, K, 1280, 720)
        xs, ys = g.cell_centers()
        hits = 0
        for x in xs:
            for y in ys:
                for z in g.depths:
                    u, v = project_point((x, y, z), K)
                    hits += (0 <= u < 1280) and (0 <= v < 720)
        assert s.in_bounds_fraction == hits / (50 * 50 * 4)
        assert s.uv.shape == (50, 50, 4, 2)
