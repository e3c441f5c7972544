"""Randomized self-checks: Jacobian vs finite differences and geometry invariants."""

from __future__ import annotations

import math

import numpy as np

from rotsym import fit as _fit
from rotsym.geometry import CYCLIC_GROUPS, PolygonParams3D, invariant_violations, reconstruct
from rotsym.projection import CameraIntrinsics

JACOBIAN_TOL = 1e-5
INVARIANT_TOL = 1e-9


def random_params(rng: np.random.Generator, group=None, max_tilt_deg: float = 70.0) -> PolygonParams3D:
    """Random polygon comfortably in front of the camera, away from degenerate axes."""
    if group is None:
        group = CYCLIC_GROUPS[int(rng.integers(len(CYCLIC_GROUPS)))]
    while True:
        c = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.0, 4.0)])
        a = rng.normal(size=3)
        a[2] = abs(a[2])
        a *= rng.uniform(0.2, 5.0) / np.linalg.norm(a)
        if math.degrees(math.acos(a[2] / np.linalg.norm(a))) > max_tilt_deg:
            continue
        r = rng.normal(size=3)
        r *= rng.uniform(0.05, 0.5) / np.linalg.norm(r)
        # keep a healthy in-plane component so the polygon is not a sliver
        k = a / np.linalg.norm(a)
        if np.linalg.norm(r - k * (k @ r)) < 0.3 * np.linalg.norm(r):
            continue
        p = PolygonParams3D(c=c, s=c + r, a=a, beta=rng.uniform(0.05, math.pi / 2 - 0.05), group=group)
        if np.all(np.vstack([c, reconstruct(p)])[:, 2] > 0.2):
            return p


def random_camera(rng: np.random.Generator) -> CameraIntrinsics:
    return CameraIntrinsics(f=rng.uniform(500, 1500), cx=rng.uniform(300, 700), cy=rng.uniform(200, 400))


def run_checks(n: int, seed: int = 0) -> list[str]:
    """Run ``n`` Jacobian checks and ``n`` invariant sweeps; return failure messages."""
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n):
        p = random_params(rng)
        K = random_camera(rng)
        err = _fit.jacobian_error(p, K, jacobian=_fit.analytic_jacobian)
        if not err <= JACOBIAN_TOL:
            failures.append(f"jacobian sample {i}: relative error {err:.3e} > {JACOBIAN_TOL:g}; params={p}; K={K}")
        q = random_params(rng)
        bad = invariant_violations(q, tol=INVARIANT_TOL)
        flipped = PolygonParams3D(q.c, q.s, tuple(-t for t in q.a), q.beta, q.group)
        if not np.array_equal(reconstruct(q), reconstruct(flipped)):
            bad.append("axis sign changes the vertex set")
        if bad:
            failures.append(f"invariant sample {i}: {'; '.join(bad)}; params={q}")
    return failures
