import math

import numpy as np
import pytest

from conftest import axis_angle_matrix
from rotsym.errors import DegenerateError, ShapeError
from rotsym.fit import (
    FitOptions,
    analytic_jacobian,
    check_nondegenerate,
    default_inits,
    finite_diff_jacobian,
    fit_polygon,
    forward,
    jacobian_error,
)
from rotsym.geometry import CYCLIC_GROUPS, PolygonParams3D, RotationGroup, invariant_violations, normalize_axis, vertex_angles
from rotsym.projection import CameraIntrinsics, project_polygon
from rotsym.scene import Polygon2D
from rotsym.synth import SynthConfig, sample_camera, sample_polygon, scene_rng


def oracle_flat(x, group, K):
    """Projected center and vertices built from the outer-product rotation matrix."""
    c, s, a, beta = x[0:3], x[3:6], x[6:9], x[9]
    k = np.asarray(a) / np.linalg.norm(a)
    k = k if k[2] > 0 or (k[2] == 0 and (k[1] > 0 or (k[1] == 0 and k[0] > 0))) else -k
    pts = [c] + [c + axis_angle_matrix(k, th) @ (s - c) for th in vertex_angles(group, beta)]
    return np.concatenate([(K.f * p[0] / p[2] + K.cx, K.f * p[1] / p[2] + K.cy) for p in pts])


def observe(p, K, noise=0.0, rng=None):
    poly = project_polygon(p, K)
    verts = np.asarray(poly.vertices)
    center = np.asarray(poly.center)
    if noise:
        verts = verts + rng.normal(0, noise, verts.shape)
        center = center + rng.normal(0, noise, 2)
    return Polygon2D(center=tuple(center), vertices=tuple(map(tuple, verts)), group=p.group)


class TestJacobian:
    def test_frontoparallel_center_columns(self):
        K = CameraIntrinsics(800, 320, 240)
        p = PolygonParams3D(c=(0, 0, 2.5), s=(0.3, 0, 2.5), a=(0, 0, 1), group="C4")
        J = analytic_jacobian(p, K)
        np.testing.assert_allclose(J[0:2, 0:3], [[800 / 2.5, 0, 0], [0, 800 / 2.5, 0]], atol=1e-12)

    @pytest.mark.parametrize("group", [g for g in CYCLIC_GROUPS if g is not RotationGroup.C2])
    def test_beta_column_zero(self, group, make_params, K):
        assert np.all(analytic_jacobian(make_params(group), K)[:, 9] == 0)

    def test_c2_beta_column_nonzero(self, make_params, K):
        J = analytic_jacobian(make_params("C2"), K)
        assert np.all(J[[0, 1, 2, 3, 6, 7], 9] == 0)
        assert np.linalg.norm(J[[4, 5, 8, 9], 9]) > 0

    def test_shape(self, make_params, K):
        for g in CYCLIC_GROUPS:
            assert analytic_jacobian(make_params(g), K).shape == (2 * (g.n_vertices + 1), 10)

    def test_against_independent_differences(self, make_params, K):
        h = 1e-6
        for _ in range(60):
            p = make_params()
            x0 = p.to_vector()
            Ja = analytic_jacobian(p, K)
            for j in range(10):
                e = np.zeros(10)
                e[j] = h
                col = (oracle_flat(x0 + e, p.group, K) - oracle_flat(x0 - e, p.group, K)) / (2 * h)
                scale = max(np.linalg.norm(col), 1.0)
                assert np.linalg.norm(Ja[:, j] - col) <= 1e-5 * scale

    def test_forward_matches_oracle(self, make_params, K):
        for _ in range(30):
            p = make_params()
            c, v = forward(p, K)
            np.testing.assert_allclose(np.concatenate([c, v.ravel()]), oracle_flat(p.to_vector(), p.group, K), atol=1e-9)

    def test_axis_scale_gauge(self, make_params, K):
        # scaling a leaves the projection unchanged, so the axis block annihilates a
        for _ in range(20):
            p = make_params()
            J = analytic_jacobian(p, K)
            assert np.linalg.norm(J[:, 6:9] @ np.asarray(p.a)) <= 1e-8 * np.linalg.norm(J[:, 6:9])

    def test_package_fd_agrees(self, make_params, K):
        for _ in range(20):
            p = make_params()
            assert jacobian_error(p, K) <= 1e-5
            np.testing.assert_allclose(finite_diff_jacobian(p, K), analytic_jacobian(p, K), rtol=1e-4, atol=1e-3)

    def test_fault_is_detected(self, make_params, K):
        p = make_params("C4")
        assert jacobian_error(p, K, jacobian=lambda q, K: 1.01 * analytic_jacobian(q, K)) > 1e-5

    @pytest.mark.parametrize(
        "kw",
        [dict(a=(1, 0, 0)), dict(a=(1e-9, 0, 0)), dict(s=(0, 0, 2)), dict(c=(0, 0, 1e-7), s=(0.1, 0, 1e-7))],
    )
    def test_degenerate(self, kw, K):
        base = dict(c=(0, 0, 2), s=(0.3, 0, 2), a=(0, 0, 1), group="C4")
        base.update(kw)
        p = PolygonParams3D(**base)
        with pytest.raises(DegenerateError):
            check_nondegenerate(p)
        with pytest.raises(DegenerateError):
            analytic_jacobian(p, K)


class TestFit:
    def test_exact_init_is_stationary(self, make_params, K):
        for g in CYCLIC_GROUPS:
            p = make_params(g)
            rep = fit_polygon(observe(p, K), g, K, init=p, opts=FitOptions(multistart=False))
            assert rep.iterations == 0 and rep.converged
            assert rep.rms_reprojection < 1e-9

    @pytest.mark.parametrize("group", CYCLIC_GROUPS)
    def test_noiseless_recovery(self, group):
        cfg = SynthConfig()
        rng = scene_rng(99, CYCLIC_GROUPS.index(group))
        K = sample_camera(cfg, rng)
        for _ in range(5):
            p = sample_polygon(cfg, K, rng, group)
            rep = fit_polygon(observe(p, K), group, K)
            assert rep.converged and rep.rms_reprojection < 1e-6
            assert invariant_violations(rep.params, tol=1e-9) == []
            assert rep.params.group is group

    def test_jittered_init(self, make_params, K, rng):
        p = make_params("C4", max_tilt_deg=50.0)
        obs = observe(p, K)
        for _ in range(5):
            init = PolygonParams3D(
                c=np.asarray(p.c) + rng.normal(0, 0.02, 3),
                s=np.asarray(p.s) + rng.normal(0, 0.02, 3),
                a=np.asarray(p.a) + rng.normal(0, 0.05, 3),
                group="C4",
            )
            rep = fit_polygon(obs, "C4", K, init=init)
            assert rep.rms_reprojection < 1e-6

    def test_vertex_order_free(self, make_params, K, rng):
        p = make_params("C5", max_tilt_deg=50.0)
        obs = observe(p, K)
        shuffled = Polygon2D(center=obs.center, vertices=tuple(obs.vertices[i] for i in rng.permutation(5)), group="C5")
        assert fit_polygon(shuffled, "C5", K).rms_reprojection < 1e-6

    def test_history_non_increasing(self, make_params, K, rng):
        for g in ("C2", "C3", "C6"):
            p = make_params(g, max_tilt_deg=50.0)
            rep = fit_polygon(observe(p, K, 1.0, rng), g, K)
            h = np.array(rep.history)
            assert len(h) >= 1 and np.all(np.diff(h) <= 0)
            assert h[-1] == pytest.approx(rep.rms_reprojection, rel=1e-12)

    def test_noisy_fit_keeps_priors(self, make_params, K, rng):
        for g in CYCLIC_GROUPS:
            p = make_params(g, max_tilt_deg=50.0)
            rep = fit_polygon(observe(p, K, 1.0, rng), g, K)
            assert rep.rms_reprojection < 3.0
            assert invariant_violations(rep.params, tol=1e-9) == []
            assert rep.l1_error >= rep.rms_reprojection

    def test_reported_axis_is_canonical(self, make_params, K):
        p = make_params("C3")
        rep = fit_polygon(observe(p, K), "C3", K)
        a = np.asarray(rep.params.a)
        np.testing.assert_allclose(a, normalize_axis(a), atol=0)
        assert abs(np.linalg.norm(a) - 1) < 1e-12

    def test_polygon_round_trip(self, make_params, K):
        p = make_params("C8")
        rep = fit_polygon(observe(p, K), "C8", K)
        poly = rep.polygon(K)
        assert poly.group is RotationGroup.C8 and poly.params == rep.params
        assert math.dist(poly.center, project_polygon(p, K).center) < 1e-6

    def test_wrong_vertex_count(self, K):
        obs = Polygon2D(center=(0, 0), vertices=((1, 0), (0, 1), (-1, 0)), group="C3")
        with pytest.raises(ShapeError):
            fit_polygon(obs, "C4", K)

    def test_so2_rejected(self, K):
        with pytest.raises(ValueError):
            fit_polygon(Polygon2D(center=(0, 0), group="SO2"), "SO2", K)

    def test_default_inits_in_front(self, make_params, K):
        p = make_params("C4")
        inits = default_inits(observe(p, K), "C4", K)
        assert len(inits) > 10
        for q in inits:
            assert q.c[2] > 0 and q.s[2] > 0
