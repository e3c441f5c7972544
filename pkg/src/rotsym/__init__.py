"""Geometry, matching and evaluation for 3D-prior rotation-symmetry detection."""

from rotsym.errors import (
    BehindCameraError,
    ConfigError,
    DegenerateError,
    DegenerateSeedError,
    IdMismatchError,
    MissingScoreError,
    RotsymError,
    ShapeError,
    ZeroAxisError,
)
from rotsym.geometry import (
    PolygonParams3D,
    RotationGroup,
    normalize_axis,
    reconstruct,
    reconstruct_vertices,
    reconstruct_vertices_c2,
    rodrigues_rotate,
)
from rotsym.projection import CameraGridSpec, CameraIntrinsics, cca_reference_points, project_point, project_polygon
from rotsym.scene import Polygon2D, Scene

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError",
    "ConfigError",
    "DegenerateError",
    "DegenerateSeedError",
    "IdMismatchError",
    "MissingScoreError",
    "RotsymError",
    "ShapeError",
    "ZeroAxisError",
    "PolygonParams3D",
    "RotationGroup",
    "normalize_axis",
    "reconstruct",
    "reconstruct_vertices",
    "reconstruct_vertices_c2",
    "rodrigues_rotate",
    "CameraGridSpec",
    "CameraIntrinsics",
    "cca_reference_points",
    "project_point",
    "project_polygon",
    "Polygon2D",
    "Scene",
]
