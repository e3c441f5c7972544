"""Rotation-symmetry primitives: axis handling, Rodrigues rotation and vertex
reconstruction for cyclic groups.

Points and directions are 3-vectors in camera coordinates (meters, +z along
the optical axis). Everything is computed in float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rotsym.errors import DegenerateSeedError, ZeroAxisError

EPS_AXIS = 1e-9

Vector3 = tuple[float, float, float]


class RotationGroup(str, enum.Enum):
    SO2 = "SO2"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"
    C8 = "C8"

    @property
    def is_cyclic(self) -> bool:
        return self is not RotationGroup.SO2

    @property
    def order(self) -> int:
        """Order N of the cyclic group. Undefined for SO2."""
        if self is RotationGroup.SO2:
            raise ValueError("SO2 has no finite order")
        return int(self.value[1:])

    @property
    def n_vertices(self) -> int:
        """Number of reconstructed vertices (4 for C2 rectangles, 0 for SO2)."""
        if self is RotationGroup.SO2:
            return 0
        if self is RotationGroup.C2:
            return 4
        return self.order

    @classmethod
    def parse(cls, tag) -> "RotationGroup":
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).upper().replace("(", "").replace(")", ""))
        except ValueError:
            raise ValueError(f"unknown rotation group {tag!r}") from None


CYCLIC_GROUPS = tuple(g for g in RotationGroup if g.is_cyclic)


def _vec3(x, name: str) -> Vector3:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class PolygonParams3D:
    """Regression-head parameterization of one symmetric polygon.

    Attributes:
        c: rotation center.
        s: seed vertex.
        a: rotation axis, stored unnormalized.
        beta: angle bias in [0, pi/2]; only used by C2.
        group: rotation group.
    """

    c: Vector3
    s: Vector3
    a: Vector3
    beta: float = math.pi / 4
    group: RotationGroup = RotationGroup.C4

    def __post_init__(self):
        object.__setattr__(self, "c", _vec3(self.c, "c"))
        object.__setattr__(self, "s", _vec3(self.s, "s"))
        object.__setattr__(self, "a", _vec3(self.a, "a"))
        object.__setattr__(self, "group", RotationGroup.parse(self.group))
        beta = float(self.beta)
        if not math.isfinite(beta):
            raise ValueError("beta must be finite")
        object.__setattr__(self, "beta", beta)

    def to_vector(self) -> np.ndarray:
        """Flatten to the 10-vector (c, s, a, beta)."""
        return np.array([*self.c, *self.s, *self.a, self.beta])

    @classmethod
    def from_vector(cls, x, group) -> "PolygonParams3D":
        x = np.asarray(x, dtype=np.float64)
        return cls(c=x[0:3], s=x[3:6], a=x[6:9], beta=float(x[9]), group=group)


def normalize_axis(a) -> np.ndarray:
    """Unit axis with canonical sign (prefer +z, then +y, then +x).

    ``a`` and ``-a`` describe the same physical axis, so both map to the same
    representative.
    """
    a = np.asarray(a, dtype=np.float64)
    norm = math.sqrt(float(a @ a))
    if not norm >= EPS_AXIS:
        raise ZeroAxisError(f"axis norm {norm:.3g} below {EPS_AXIS:g}")
    u = a / norm
    return u * _sign_of_unit(u)


def axis_sign(a) -> float:
    """+1 or -1: the factor normalize_axis applies to bring ``a`` to canonical sign."""
    a = np.asarray(a, dtype=np.float64)
    norm = math.sqrt(float(a @ a))
    # decide on the unit vector: a tiny component can underflow to zero when scaled
    return _sign_of_unit(a / norm if norm > 0 else a)


def _sign_of_unit(u) -> float:
    x, y, z = (float(t) for t in u)
    if z < 0 or (z == 0 and (y < 0 or (y == 0 and x < 0))):
        return -1.0
    return 1.0


def rodrigues_rotate(r, a_unit, theta) -> np.ndarray:
    """Rotate ``r`` about the unit axis ``a_unit`` by ``theta`` radians.

    ``theta`` may be an array of angles, in which case the result has shape
    ``theta.shape + (3,)``.
    """
    r = np.asarray(r, dtype=np.float64)
    k = np.asarray(a_unit, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    cos = np.cos(theta)[..., None]
    sin = np.sin(theta)[..., None]
    kxr = np.array([k[1] * r[2] - k[2] * r[1], k[2] * r[0] - k[0] * r[2], k[0] * r[1] - k[1] * r[0]])
    return r * cos + kxr * sin + k * (k @ r) * (1.0 - cos)


def vertex_angles(group, beta: float = math.pi / 4) -> np.ndarray:
    """Rotation angles applied to the seed offset, in emitted vertex order.

    Cyclic C_N uses 2*pi*k/N for k = 1..N so the last vertex is the seed itself.
    C2 uses {0, pi/4 + beta, pi, 5*pi/4 + beta}: two antipodal pairs, which is
    a rectangle for any beta in [0, pi/2] and a square at beta = pi/4.
    """
    group = RotationGroup.parse(group)
    if group is RotationGroup.SO2:
        raise ValueError("SO2 has no vertex set")
    if group is RotationGroup.C2:
        return np.array([0.0, math.pi / 4 + beta, math.pi, 5 * math.pi / 4 + beta])
    n = group.order
    return 2.0 * math.pi * np.arange(1, n + 1) / n


def _seed_offset(p: PolygonParams3D) -> np.ndarray:
    r = np.subtract(p.s, p.c)
    if not math.sqrt(float(r @ r)) >= EPS_AXIS:
        raise DegenerateSeedError("seed coincides with center")
    return r


def reconstruct_vertices(p: PolygonParams3D) -> np.ndarray:
    """Vertices of a C3..C8 polygon, shape (N, 3), in increasing angle order."""
    if not p.group.is_cyclic or p.group is RotationGroup.C2:
        raise ValueError(f"reconstruct_vertices needs C3..C8, got {p.group.value}")
    r = _seed_offset(p)
    k = normalize_axis(p.a)
    return np.asarray(p.c) + rodrigues_rotate(r, k, vertex_angles(p.group))


def reconstruct_vertices_c2(p: PolygonParams3D) -> np.ndarray:
    """Four rectangle corners of a C2 instance, shape (4, 3)."""
    if p.group is not RotationGroup.C2:
        raise ValueError(f"reconstruct_vertices_c2 needs C2, got {p.group.value}")
    if not 0.0 <= p.beta <= math.pi / 2:
        raise ValueError(f"beta {p.beta} outside [0, pi/2]")
    r = _seed_offset(p)
    k = normalize_axis(p.a)
    return np.asarray(p.c) + rodrigues_rotate(r, k, vertex_angles(p.group, p.beta))


def reconstruct(p: PolygonParams3D) -> np.ndarray:
    """Dispatch on group; SO2 yields an empty (0, 3) array."""
    if p.group is RotationGroup.SO2:
        return np.zeros((0, 3))
    if p.group is RotationGroup.C2:
        return reconstruct_vertices_c2(p)
    return reconstruct_vertices(p)


def invariant_violations(p: PolygonParams3D, vertices: Sequence | None = None, tol: float = 1e-9) -> list[str]:
    """Check the geometric priors of a reconstructed polygon.

    Returns a list of human-readable violations; empty when every check passes.
    Tolerances are relative to the seed radius ``|s - c|``.
    """
    v = reconstruct(p) if vertices is None else np.asarray(vertices, dtype=np.float64)
    if len(v) == 0:
        return []
    c = np.asarray(p.c)
    k = normalize_axis(p.a)
    scale = float(np.linalg.norm(np.subtract(p.s, p.c)))
    out = []

    offsets = v - c
    radii = np.linalg.norm(offsets, axis=1)
    if radii.max() - radii.min() > tol * scale:
        out.append(f"unequal radii: spread {radii.max() - radii.min():.3e}")

    axial = offsets @ k
    if axial.max() - axial.min() > tol * scale:
        out.append(f"non-coplanar: axial spread {axial.max() - axial.min():.3e}")

    if float(np.linalg.norm(v[-1] - np.asarray(p.s))) > tol * scale:
        if p.group is not RotationGroup.C2:
            out.append("last vertex does not close onto the seed")
    if p.group is RotationGroup.C2:
        if float(np.linalg.norm(v[0] - np.asarray(p.s))) > tol * scale:
            out.append("first C2 vertex is not the seed")
        # diagonals cross where the axis meets the vertex plane (c itself when s - c is perpendicular to a)
        mid = 2 * (c + k * float(k @ np.subtract(p.s, p.c)))
        if float(np.abs(v[0] + v[2] - mid).max()) > tol * max(scale, 1.0) or float(
            np.abs(v[1] + v[3] - mid).max()
        ) > tol * max(scale, 1.0):
            out.append("C2 diagonals do not bisect at the plane center")
        return out

    planar = offsets - np.outer(axial, k)
    n = len(v)
    expected = 2.0 * math.pi / n
    x, y = planar, np.roll(planar, -1, axis=0)
    cross = x[:, [1, 2, 0]] * y[:, [2, 0, 1]] - x[:, [2, 0, 1]] * y[:, [1, 2, 0]]
    angles = np.arctan2(np.sqrt(np.einsum("ij,ij->i", cross, cross)), np.einsum("ij,ij->i", x, y))
    bad = np.flatnonzero(np.abs(angles - expected) > tol)
    if bad.size:
        i = int(bad[0])
        out.append(f"central angle {i}: {angles[i]:.12f} != {expected:.12f}")

    sides = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    if sides.max() - sides.min() > tol * max(sides.max(), scale):
        out.append(f"unequal sides: spread {sides.max() - sides.min():.3e}")
    return out
