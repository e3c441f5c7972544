import math

import numpy as np
import pytest

from rotsym.checks import random_params
from rotsym.projection import CameraIntrinsics


def axis_angle_matrix(axis, theta):
    """Rotation matrix from the outer-product form, built without Rodrigues' vector formula."""
    x, y, z = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
    c, s = math.cos(theta), math.sin(theta)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def K():
    return CameraIntrinsics(f=1000.0, cx=640.0, cy=360.0)


@pytest.fixture
def make_params(rng):
    def make(group=None, **kw):
        return random_params(rng, group, **kw)

    return make


def perturbed_fixture(n_scenes=20, seed=3):
    """Small-image synthetic scenes with noisy predictions plus a few scripted edits.

    The edits cover ties in score, a duplicated detection, a center offset to
    exactly the threshold distance and a prediction of the wrong group.
    """
    from rotsym.scene import Polygon2D, Scene
    from rotsym.synth import NoiseSpec, SynthConfig, generate

    cfg = SynthConfig(
        rng_seed=seed, n_scenes=n_scenes, polygons_per_scene=(2, 5), width=128, height=96, focal=100.0,
        max_tilt_deg=50.0,
    )
    noise = NoiseSpec(
        center_sigma=0.04, vertex_sigma=0.03, axis_jitter_sigma=0.1, score_scale_px=4.0, drop_rate=0.15,
        spurious_rate=0.3,
    )
    gts, preds = generate(cfg, noise)
    thr = 0.025 * 128
    edited = []
    for idx, (g, p) in enumerate(zip(gts, preds)):
        polys = list(p.polygons)
        if idx % 5 == 0 and polys:
            polys.append(polys[0])  # duplicate detection
        if idx % 5 == 1 and len(polys) >= 2:
            a, b = polys[0], polys[1]
            polys[1] = Polygon2D(center=b.center, vertices=b.vertices, group=b.group, scores={b.group: a.confidence})
        if idx % 5 == 2 and g.polygons:
            t = g.polygons[0]
            polys.append(Polygon2D(center=(t.center[0] + thr, t.center[1]), vertices=t.vertices, group=t.group,
                                   scores={t.group: 0.95}))
        if idx % 5 == 3 and g.polygons:
            t = g.polygons[-1]
            other = "SO2" if t.group.value != "SO2" else "C3"
            polys.append(Polygon2D(center=t.center, group=other, scores={other: 0.6}))
        edited.append(Scene(id=p.id, width=p.width, height=p.height, polygons=tuple(polys), intrinsics=p.intrinsics))
    return gts, edited
