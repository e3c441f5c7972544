"""Image-space data types shared by matching, metrics, synth and the file layer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from rotsym.errors import MissingScoreError
from rotsym.geometry import PolygonParams3D, RotationGroup
from rotsym.projection import CameraIntrinsics

Point2D = tuple[float, float]


def _point(p) -> Point2D:
    u, v = (float(t) for t in p)
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError(f"non-finite image point {p!r}")
    return (u, v)


@dataclass(frozen=True)
class Polygon2D:
    """A symmetry instance in image space.

    ``group=None`` is the no-object placeholder used to pad ground-truth sets;
    it carries no geometry. Ground truth has ``scores=None``; predictions map
    groups to confidences in [0, 1]. ``params`` optionally records the 3D
    parameters the polygon was projected from.
    """

    center: Point2D | None
    vertices: tuple[Point2D, ...] = ()
    group: RotationGroup | None = None
    scores: Mapping[RotationGroup, float] | None = None
    params: PolygonParams3D | None = None

    def __post_init__(self):
        if self.group is None:
            if self.center is not None or self.vertices:
                raise ValueError("no-object instances carry no center or vertices")
        else:
            object.__setattr__(self, "group", RotationGroup.parse(self.group))
            object.__setattr__(self, "center", _point(self.center))
            object.__setattr__(self, "vertices", tuple(_point(v) for v in self.vertices))
            if self.vertices and len(self.vertices) != self.group.n_vertices:
                raise ValueError(
                    f"{self.group.value} needs {self.group.n_vertices} vertices, got {len(self.vertices)}"
                )
        if self.scores is not None:
            scores = {}
            for g, val in self.scores.items():
                key = None if g is None else RotationGroup.parse(g)
                val = float(val)
                if not 0.0 <= val <= 1.0:
                    raise ValueError(f"score {val} outside [0, 1]")
                scores[key] = val
            object.__setattr__(self, "scores", scores)

    @property
    def confidence(self) -> float:
        """Score of the polygon's own group (1.0 for unscored ground truth)."""
        if self.scores is None:
            return 1.0
        try:
            return self.scores[self.group]
        except KeyError:
            raise MissingScoreError(f"no score for own group {self.group.value}") from None


NO_OBJECT = Polygon2D(center=None)


@dataclass(frozen=True)
class Scene:
    id: str
    width: int
    height: int
    polygons: tuple[Polygon2D, ...] = ()
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"scene {self.id}: non-positive image size")
        object.__setattr__(self, "polygons", tuple(self.polygons))

    @property
    def camera(self) -> CameraIntrinsics:
        """Explicit intrinsics, or the image-centered f=1000 default."""
        if self.intrinsics is not None:
            return self.intrinsics
        return CameraIntrinsics.default(self.width, self.height)


@dataclass
class SceneFile:
    scenes: list[Scene] = field(default_factory=list)
    format_version: int = 1
