"""Pinhole projection and the camera-query reference grid.

Pixel coordinates follow ``u = f * x / z + cx`` and ``v = f * y / z + cy``;
there is no distortion, skew or aspect ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rotsym.errors import BehindCameraError

EPS_DEPTH = 1e-6
DEFAULT_FOCAL = 1000.0
DEFAULT_DEPTHS = (0.5, 1.5, 2.5, 3.5)
DEFAULT_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("f", "cx", "cy"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"intrinsics {name} must be finite")
            object.__setattr__(self, name, val)
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")

    @classmethod
    def default(cls, width: float, height: float, f: float = DEFAULT_FOCAL) -> "CameraIntrinsics":
        return cls(f=f, cx=width / 2.0, cy=height / 2.0)


def project_point(p, K: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = (float(t) for t in p)
    if not z >= EPS_DEPTH:
        raise BehindCameraError(f"depth {z:.3g} below {EPS_DEPTH:g}")
    return (K.f * (x / z) + K.cx, K.f * (y / z) + K.cy)


def project_points(points, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized ``project_point`` over an (n, 3) array; returns (n, 2)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    bad = np.flatnonzero(~(z >= EPS_DEPTH))
    if bad.size:
        raise BehindCameraError(f"point {bad[0]} has depth {z[bad[0]]:.3g}", index=int(bad[0]))
    out = np.empty((len(pts), 2))
    out[:, 0] = K.f * (pts[:, 0] / z) + K.cx
    out[:, 1] = K.f * (pts[:, 1] / z) + K.cy
    return out


def backproject(uv, depth: float, K: CameraIntrinsics) -> np.ndarray:
    """Point at ``depth`` on the ray through pixel ``uv``."""
    u, v = uv
    return np.array([(u - K.cx) / K.f * depth, (v - K.cy) / K.f * depth, depth])


def project_polygon(p, K: CameraIntrinsics):
    """Reconstruct a polygon in 3D and project center and vertices.

    Confidence is left unset; the producer fills ``scores``. Raises
    BehindCameraError with ``index`` set to ``"center"`` or the vertex position.
    """
    from rotsym.geometry import reconstruct
    from rotsym.scene import Polygon2D

    try:
        center = project_point(p.c, K)
    except BehindCameraError as exc:
        raise BehindCameraError(f"center: {exc}", index="center") from None
    verts = reconstruct(p)
    try:
        uv = project_points(verts, K) if len(verts) else np.zeros((0, 2))
    except BehindCameraError as exc:
        raise BehindCameraError(f"vertex {exc.index}: {exc}", index=exc.index) from None
    return Polygon2D(center=center, vertices=tuple(map(tuple, uv)), group=p.group, params=p)


@dataclass(frozen=True)
class CameraGridSpec:
    """Camera-query grid: nx * ny cells over the x-y window, sampled at ``depths``."""

    nx: int = 50
    ny: int = 50
    x_range: tuple[float, float] = DEFAULT_RANGE
    y_range: tuple[float, float] = DEFAULT_RANGE
    depths: tuple[float, ...] = DEFAULT_DEPTHS

    def __post_init__(self):
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValueError("grid resolution must be positive")
        for name in ("x_range", "y_range"):
            lo, hi = (float(t) for t in getattr(self, name))
            if not hi > lo:
                raise ValueError(f"{name} is degenerate: [{lo}, {hi}]")
            object.__setattr__(self, name, (lo, hi))
        depths = tuple(float(d) for d in self.depths)
        if not depths:
            raise ValueError("need at least one depth")
        if any(d < EPS_DEPTH for d in depths):
            raise ValueError("depths must be positive")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("depths must be strictly increasing")
        object.__setattr__(self, "depths", depths)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """x (length nx) and y (length ny) coordinates of the cell midpoints."""
        def mids(lo, hi, n):
            return lo + (np.arange(n) + 0.5) * ((hi - lo) / n)
        return mids(*self.x_range, self.nx), mids(*self.y_range, self.ny)


@dataclass(frozen=True)
class ReferenceSamples:
    """Projected reference points indexed as ``[i, j, d]``.

    ``uv`` has shape (nx, ny, n_depths, 2); ``in_bounds`` is True iff
    ``0 <= u < width`` and ``0 <= v < height``.
    """

    xs: np.ndarray
    ys: np.ndarray
    depths: np.ndarray
    uv: np.ndarray
    in_bounds: np.ndarray

    @property
    def in_bounds_fraction(self) -> float:
        return float(self.in_bounds.mean())


def cca_reference_points(grid: CameraGridSpec, K: CameraIntrinsics, image_w, image_h) -> ReferenceSamples:
    xs, ys = grid.cell_centers()
    zs = np.asarray(grid.depths)
    X = xs[:, None, None]
    Y = ys[None, :, None]
    Z = zs[None, None, :]
    shape = (len(xs), len(ys), len(zs))
    uv = np.empty(shape + (2,))
    uv[..., 0] = K.f * (X / Z) + K.cx
    uv[..., 1] = K.f * (Y / Z) + K.cy
    u, v = uv[..., 0], uv[..., 1]
    inside = (u >= 0) & (u < image_w) & (v >= 0) & (v < image_h)
    return ReferenceSamples(xs=xs, ys=ys, depths=zs, uv=uv, in_bounds=inside)
