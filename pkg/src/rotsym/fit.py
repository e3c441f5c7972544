"""Recover 3D polygon parameters from observed 2D centers and vertices.

The residual stacks ``forward(params) - observed`` for the center followed by
the vertices, as (u, v) pairs. Because vertices are generated from a single
seed and axis, every fitted polygon satisfies the symmetry priors exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from rotsym.errors import BehindCameraError, DegenerateError, ShapeError
from rotsym.geometry import (
    EPS_AXIS,
    PolygonParams3D,
    RotationGroup,
    axis_sign,
    normalize_axis,
    reconstruct,
    vertex_angles,
)
from rotsym.matching import match_vertices
from rotsym.projection import EPS_DEPTH, CameraIntrinsics, backproject, project_points
from rotsym.scene import Polygon2D

N_PARAMS = 10
HALF_PI = math.pi / 2
MAX_B_STEP = 2.0


def forward(params: PolygonParams3D, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Projected center (2,) and vertices (V, 2)."""
    pts = np.vstack([np.asarray(params.c)[None, :], reconstruct(params)])
    uv = project_points(pts, K)
    return uv[0], uv[1:]


def _flat(params, K) -> np.ndarray:
    center, verts = forward(params, K)
    return np.concatenate([center, verts.ravel()])


def _skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def check_nondegenerate(params: PolygonParams3D) -> None:
    """Raise DegenerateError within 10 eps of a precondition boundary."""
    a = np.asarray(params.a)
    if np.linalg.norm(a) < 10 * EPS_AXIS:
        raise DegenerateError("axis norm near zero")
    if abs(a[2]) < 10 * EPS_AXIS:
        # canonical axis sign flips here; the vertex order is discontinuous
        raise DegenerateError("axis lies in the image plane")
    if np.linalg.norm(np.subtract(params.s, params.c)) < 10 * EPS_AXIS:
        raise DegenerateError("seed near center")
    pts = np.vstack([np.asarray(params.c)[None, :], reconstruct(params)])
    if np.any(pts[:, 2] < 10 * EPS_DEPTH):
        raise DegenerateError("point near the camera plane")


def analytic_jacobian(params: PolygonParams3D, K: CameraIntrinsics) -> np.ndarray:
    """d(projected center, vertices) / d(c, s, a, beta), shape (2(V+1), 10)."""
    check_nondegenerate(params)
    c = np.asarray(params.c)
    r = np.subtract(params.s, params.c)
    a = np.asarray(params.a)
    k = normalize_axis(a)
    # d(khat)/d(a): tangent projection scaled by 1/|a|, times the canonical sign
    dk_da = axis_sign(a) * (np.eye(3) - np.outer(k, k)) / np.linalg.norm(a)

    thetas = vertex_angles(params.group, params.beta) if params.group.is_cyclic else np.zeros(0)
    n = len(thetas)
    J = np.zeros((2 * (n + 1), N_PARAMS))
    J[0:2, 0:3] = _proj_jac(c[None, :], K)[0]
    if n == 0:
        return J

    eye = np.eye(3)
    kx = _skew(k)
    kk = np.outer(k, k)
    kr = float(k @ r)
    cos = np.cos(thetas)[:, None, None]
    sin = np.sin(thetas)[:, None, None]
    R = cos * eye + sin * kx + (1 - cos) * kk  # (n, 3, 3)
    P = _proj_jac(c + R @ r, K)  # (n, 2, 3)
    dR_dk = -sin * _skew(r) + (1 - cos) * (kr * eye + np.outer(k, r))
    blocks = np.zeros((n, 2, N_PARAMS))
    blocks[:, :, 0:3] = P @ (eye - R)
    blocks[:, :, 3:6] = P @ R
    blocks[:, :, 6:9] = P @ dR_dk @ dk_da
    if params.group is RotationGroup.C2:
        kxr = np.cross(k, r)
        for idx in (1, 3):
            th = thetas[idx]
            dp_dth = -r * math.sin(th) + kxr * math.cos(th) + k * kr * math.sin(th)
            blocks[idx, :, 9] = P[idx] @ dp_dth
    J[2:] = blocks.reshape(2 * n, N_PARAMS)
    return J


def _proj_jac(pts, K) -> np.ndarray:
    """Pinhole derivative d(u, v)/d(x, y, z) for each row of ``pts``, shape (n, 2, 3)."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    out = np.zeros((len(pts), 2, 3))
    out[:, 0, 0] = K.f / z
    out[:, 1, 1] = K.f / z
    out[:, 0, 2] = -K.f * x / (z * z)
    out[:, 1, 2] = -K.f * y / (z * z)
    return out


def finite_diff_jacobian(params: PolygonParams3D, K: CameraIntrinsics, step: float = 1e-6) -> np.ndarray:
    """Central differences of the flattened forward map; test oracle."""
    if not step > 0:
        raise ValueError("step must be positive")
    x0 = params.to_vector()
    base = _flat(params, K)
    J = np.zeros((base.size, N_PARAMS))
    for j in range(N_PARAMS):
        xp, xm = x0.copy(), x0.copy()
        xp[j] += step
        xm[j] -= step
        fp = _flat(PolygonParams3D.from_vector(xp, params.group), K)
        fm = _flat(PolygonParams3D.from_vector(xm, params.group), K)
        J[:, j] = (fp - fm) / (2 * step)
    return J


def jacobian_error(params: PolygonParams3D, K: CameraIntrinsics, step: float = 1e-6, jacobian=None) -> float:
    """Max over columns of |J - J_fd| / |J| (absolute for all-zero columns)."""
    Ja = (jacobian or analytic_jacobian)(params, K)
    Jf = finite_diff_jacobian(params, K, step)
    worst = 0.0
    for j in range(N_PARAMS):
        norm = np.linalg.norm(Ja[:, j])
        diff = np.linalg.norm(Ja[:, j] - Jf[:, j])
        worst = max(worst, diff / norm if norm > 0 else diff)
    return float(worst)


@dataclass(frozen=True)
class FitReport:
    params: PolygonParams3D
    rms_reprojection: float
    l1_error: float
    iterations: int
    converged: bool
    history: tuple[float, ...] = ()  # rms after each accepted step of the final refinement

    def polygon(self, K: CameraIntrinsics) -> Polygon2D:
        center, verts = forward(self.params, K)
        return Polygon2D(center=tuple(center), vertices=tuple(map(tuple, verts)), group=self.params.group,
                         params=self.params)


@dataclass(frozen=True)
class FitOptions:
    damping: float = 1e-3
    damping_factor: float = 10.0
    max_damping: float = 1e16
    max_iter: int = 200
    rms_tol: float = 1e-10
    multistart: bool = True
    screen_iter: int = 5
    n_refine: int = 3


# optimizer coordinates: (c, s, a) and, for C2, an unbounded b with beta = pi/2 * sigmoid(b)

def _sigmoid(b: float) -> float:
    if b >= 0:
        return 1.0 / (1.0 + math.exp(-b))
    e = math.exp(b)
    return e / (1.0 + e)


def _beta_from_b(b: float) -> float:
    return HALF_PI * _sigmoid(b)


def _b_from_beta(beta: float) -> float:
    t = min(max(beta / HALF_PI, 1e-9), 1 - 1e-9)
    return math.log(t / (1 - t))


def _to_params(z: np.ndarray, group) -> PolygonParams3D:
    beta = _beta_from_b(float(z[9])) if group is RotationGroup.C2 else math.pi / 4
    return PolygonParams3D(c=z[0:3], s=z[3:6], a=z[6:9], beta=beta, group=group)


def _to_z(p: PolygonParams3D) -> np.ndarray:
    z = p.to_vector()
    if p.group is RotationGroup.C2:
        z[9] = _b_from_beta(p.beta)
    return z


class _Problem:
    def __init__(self, observed: Polygon2D, group, K):
        self.group = group
        self.K = K
        self.center = np.asarray(observed.center, dtype=np.float64)
        self.verts = np.asarray(observed.vertices, dtype=np.float64).reshape(-1, 2)
        # overall scale is unobservable under a pinhole, so the center depth is
        # held at its starting value; beta is free only for C2
        free = [0, 1, 3, 4, 5, 6, 7, 8] + ([9] if group is RotationGroup.C2 else [])
        self.free = np.array(free, dtype=np.int64)

    def residual(self, z):
        """Residual with vertex correspondence re-solved; None if infeasible."""
        try:
            p = _to_params(z, self.group)
            center, verts = forward(p, self.K)
        except (BehindCameraError, ValueError):
            return None, None
        rho = match_vertices(verts, self.verts)
        order = np.array([m for _, m in sorted(rho.pairs)], dtype=np.int64)
        res = np.concatenate([center - self.center, (verts - self.verts[order]).ravel()])
        return res, p

    def jacobian(self, z, p):
        J = analytic_jacobian(p, self.K)
        if self.group is RotationGroup.C2:
            s = _sigmoid(float(z[9]))
            J[:, 9] *= HALF_PI * s * (1 - s)
        return J[:, self.free]


def _rms(res) -> float:
    return math.sqrt(float(res @ res) / (len(res) // 2))


def _l1(res) -> float:
    return float(np.abs(res).sum())


def _levenberg_marquardt(prob: _Problem, z0: np.ndarray, opts: FitOptions):
    z = z0.copy()
    res, p = prob.residual(z)
    if res is None:
        raise BehindCameraError("initial parameters project behind the camera")
    cost = float(res @ res)
    history = [_rms(res)]
    lam = opts.damping
    it = 0
    converged = _rms(res) <= opts.rms_tol
    J = None
    while not converged and it < opts.max_iter:
        if J is None:
            try:
                J = prob.jacobian(z, p)
            except DegenerateError:
                break
            A = J.T @ J
            g = J.T @ res
            diag = np.maximum(np.diag(A), 1e-12 * max(float(np.diag(A).max()), 1e-300))
        it += 1
        try:
            step = np.linalg.solve(A + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            lam *= opts.damping_factor
            continue
        if prob.free[-1] == 9:
            # the sigmoid flattens quickly; large jumps in b strand beta at 0 or pi/2
            step[-1] = min(max(step[-1], -MAX_B_STEP), MAX_B_STEP)
        z_new = z.copy()
        z_new[prob.free] += step
        # axis length is a gauge; keep it at one
        z_new[6:9] /= np.linalg.norm(z_new[6:9])
        res_new, p_new = prob.residual(z_new)
        cost_new = float(res_new @ res_new) if res_new is not None else math.inf
        if cost_new < cost:
            old_rms = _rms(res)
            z, res, p, cost = z_new, res_new, p_new, cost_new
            history.append(_rms(res))
            lam = max(lam / opts.damping_factor, 1e-15)
            J = None
            if abs(old_rms - _rms(res)) < opts.rms_tol or _rms(res) <= opts.rms_tol:
                converged = True
        else:
            lam *= opts.damping_factor
            if lam > opts.max_damping:
                # no descent direction left at working precision: stationary point
                converged = True
    return z, res, p, it, converged, history


def default_inits(observed: Polygon2D, group, K: CameraIntrinsics, depth: float = 2.0) -> list[PolygonParams3D]:
    """Starting points: the center ray at ``depth`` with a spread of candidate axes.

    Axes include the viewing ray itself, the two tilts suggested by the
    second moments of the observed vertices, and a cone of fixed tilts.
    """
    group = RotationGroup.parse(group)
    center = np.asarray(observed.center, dtype=np.float64)
    verts = np.asarray(observed.vertices, dtype=np.float64).reshape(-1, 2)
    c = backproject(center, depth, K)
    d = c / np.linalg.norm(c)
    e1 = np.cross(d, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)

    axes = [d]
    offsets = verts - center
    if len(verts) >= 3:
        evals, evecs = np.linalg.eigh(offsets.T @ offsets)
        if evals[1] > 0:
            tilt = math.acos(math.sqrt(max(min(evals[0] / evals[1], 1.0), 0.0)))
            minor = evecs[:, 0]
            lateral = minor[0] * np.array([1.0, 0.0, 0.0]) + minor[1] * np.array([0.0, 1.0, 0.0])
            lateral -= d * (lateral @ d)
            if np.linalg.norm(lateral) > 0:
                lateral /= np.linalg.norm(lateral)
                for sgn in (1.0, -1.0):
                    axes.append(math.cos(tilt) * d + sgn * math.sin(tilt) * lateral)
    for tilt in (25.0, 50.0, 70.0):
        t = math.radians(tilt)
        for phi in np.arange(6) * (math.pi / 3):
            axes.append(math.cos(t) * d + math.sin(t) * (math.cos(phi) * e1 + math.sin(phi) * e2))

    inits = []
    seeds = verts[:2] if group is RotationGroup.C2 else verts[:1]
    for a in axes:
        for uv in seeds:
            ray = backproject(uv, 1.0, K)
            denom = float(ray @ a)
            if abs(denom) < 1e-9:
                continue
            s = ray * (float(c @ a) / denom)
            if s[2] < EPS_DEPTH or np.linalg.norm(s - c) < 10 * EPS_AXIS:
                continue
            inits.append(PolygonParams3D(c=c, s=s, a=a, beta=math.pi / 4, group=group))
    return inits


def fit_polygon(
    observed: Polygon2D,
    group,
    K: CameraIntrinsics,
    init: PolygonParams3D | None = None,
    opts: FitOptions = FitOptions(),
) -> FitReport:
    """Least-squares fit of (c, s, a, beta) to an observed center and vertex set.

    Vertex correspondence is re-solved at every evaluation, so observed
    vertices may come in any order. With no ``init``, several starting points
    are screened briefly and the best is refined. A supplied ``init`` joins
    that screen unless ``opts.multistart`` is False.
    """
    group = RotationGroup.parse(group)
    if group is RotationGroup.SO2:
        raise ValueError("SO2 has no vertices to fit")
    if len(observed.vertices) != group.n_vertices:
        raise ShapeError(f"{group.value} needs {group.n_vertices} observed vertices, got {len(observed.vertices)}")
    prob = _Problem(observed, group, K)

    starts = []
    if init is not None:
        starts.append(init if init.group is group else PolygonParams3D(init.c, init.s, init.a, init.beta, group))
    if init is None or opts.multistart:
        starts.extend(default_inits(observed, group, K))
    if not starts:
        raise DegenerateError("could not build a starting point from the observation")

    if len(starts) > 1:
        # short screen of every start, then full refinement of the most promising few
        screen = replace(opts, max_iter=opts.screen_iter)
        screened = []
        for p0 in starts:
            try:
                z, res, p, it, conv, _ = _levenberg_marquardt(prob, _to_z(p0), screen)
            except (BehindCameraError, DegenerateError):
                continue
            screened.append((float(res @ res), len(screened), z, it))
            if _rms(res) <= opts.rms_tol:
                break
        if not screened:
            raise DegenerateError("no starting point could be evaluated")
        screened.sort(key=lambda t: t[:2])
        best = None
        for _, _, z0, it0 in screened[: opts.n_refine]:
            z, res, p, it, conv, hist = _levenberg_marquardt(prob, z0, opts)
            if best is None or float(res @ res) < float(best[1] @ best[1]):
                best = (z, res, p, it + it0, conv, hist)
            if _rms(res) <= opts.rms_tol:
                break
        z, res, p, it, conv, hist = best
    else:
        z, res, p, it, conv, hist = _levenberg_marquardt(prob, _to_z(starts[0]), opts)
    # report the axis in canonical form; the reconstruction is unchanged
    p = PolygonParams3D(c=p.c, s=p.s, a=normalize_axis(p.a), beta=p.beta, group=group)
    return FitReport(params=p, rms_reprojection=_rms(res), l1_error=_l1(res), iterations=it, converged=conv,
                     history=tuple(hist))
