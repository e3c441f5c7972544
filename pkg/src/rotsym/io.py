"""Scene files and structured-text output.

Scene files are UTF-8 JSON::

    {"format_version": 1,
     "scenes": [{"id": ..., "width": ..., "height": ...,
                 "intrinsics": {"f": ..., "cx": ..., "cy": ...},   # optional
                 "polygons": [{"group": "C4", "center": [u, v],
                               "vertices": [[u, v], ...],         # absent for SO2
                               "scores": {"C4": 0.9},             # predictions only
                               "params": {"c": [...], "s": [...], "a": [...], "beta": ...}}]}]}

Reals are written with 17 significant digits so doubles round-trip exactly.
Unknown fields are ignored unless ``strict`` is set.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from rotsym.errors import ConfigError
from rotsym.geometry import PolygonParams3D, RotationGroup
from rotsym.projection import CameraIntrinsics
from rotsym.scene import Polygon2D, Scene, SceneFile

FORMAT_VERSION = 1
NO_OBJECT_KEY = "none"


class SceneFormatError(ConfigError):
    pass


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    s = "%.17g" % x
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def dumps(obj, indent: int | None = 2) -> str:
    """Deterministic JSON: insertion key order, %.17g floats."""
    parts: list[str] = []
    _emit(obj, parts, indent, 0)
    return "".join(parts)


def _emit(obj, out, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(int(obj)))
    elif isinstance(obj, float):
        out.append(_fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append((sep if i else "") + pad + json.dumps(str(k), ensure_ascii=False) + ": ")
            _emit(v, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        # numeric leaf arrays stay on one line
        flat = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj)
        out.append("[")
        for i, v in enumerate(obj):
            if flat:
                out.append(", " if i else "")
            else:
                out.append((sep if i else "") + pad)
            _emit(v, out, indent, level + 1)
        out.append("]" if flat else end + "]")
    elif hasattr(obj, "item"):
        _emit(obj.item(), out, indent, level)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def polygon_to_dict(p: Polygon2D) -> dict:
    d = {"group": p.group.value, "center": [float(t) for t in p.center]}
    if p.vertices:
        d["vertices"] = [[float(u), float(v)] for u, v in p.vertices]
    if p.scores is not None:
        d["scores"] = {NO_OBJECT_KEY if g is None else g.value: float(s) for g, s in p.scores.items()}
    if p.params is not None:
        q = p.params
        d["params"] = {"c": list(q.c), "s": list(q.s), "a": list(q.a), "beta": q.beta}
    return d


def scene_to_dict(s: Scene) -> dict:
    d = {"id": s.id, "width": int(s.width), "height": int(s.height)}
    if s.intrinsics is not None:
        d["intrinsics"] = {"f": s.intrinsics.f, "cx": s.intrinsics.cx, "cy": s.intrinsics.cy}
    d["polygons"] = [polygon_to_dict(p) for p in s.polygons]
    return d


def scenes_to_dict(scenes) -> dict:
    return {"format_version": FORMAT_VERSION, "scenes": [scene_to_dict(s) for s in scenes]}


def write_scenes(scenes, path) -> None:
    Path(path).write_text(dumps(scenes_to_dict(scenes)) + "\n", encoding="utf-8")


_POLY_KEYS = {"group", "center", "vertices", "scores", "params"}
_SCENE_KEYS = {"id", "width", "height", "intrinsics", "polygons"}
_TOP_KEYS = {"format_version", "scenes"}


def _check_keys(d, allowed, where, strict):
    if not isinstance(d, dict):
        raise SceneFormatError(f"{where}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown and strict:
        raise SceneFormatError(f"{where}: unknown field(s) {unknown}")


def _polygon_from_dict(d, where, strict) -> Polygon2D:
    _check_keys(d, _POLY_KEYS, where, strict)
    try:
        group = RotationGroup.parse(d["group"])
        verts = d.get("vertices") or ()
        if group is RotationGroup.SO2 and verts:
            raise ValueError("SO2 polygons carry no vertices")
        if group is not RotationGroup.SO2 and verts and len(verts) != group.n_vertices:
            raise ValueError(f"{group.value} needs {group.n_vertices} vertices, got {len(verts)}")
        scores = None
        if "scores" in d and d["scores"] is not None:
            scores = {None if k == NO_OBJECT_KEY else RotationGroup.parse(k): float(v) for k, v in d["scores"].items()}
        params = None
        if d.get("params") is not None:
            q = d["params"]
            _check_keys(q, {"c", "s", "a", "beta"}, where + ".params", strict)
            params = PolygonParams3D(c=q["c"], s=q["s"], a=q["a"], beta=float(q.get("beta", math.pi / 4)), group=group)
        return Polygon2D(center=tuple(d["center"]), vertices=tuple(tuple(v) for v in verts), group=group,
                         scores=scores, params=params)
    except SceneFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"{where}: {exc}") from None


def scenes_from_dict(doc, strict: bool = False) -> list[Scene]:
    _check_keys(doc, _TOP_KEYS, "file", strict)
    if doc.get("format_version") != FORMAT_VERSION:
        raise SceneFormatError(f"file: unsupported format_version {doc.get('format_version')!r}")
    scenes = []
    for i, sd in enumerate(doc.get("scenes", [])):
        where = f"scenes[{i}]"
        _check_keys(sd, _SCENE_KEYS, where, strict)
        try:
            K = None
            if sd.get("intrinsics") is not None:
                kd = sd["intrinsics"]
                _check_keys(kd, {"f", "cx", "cy"}, where + ".intrinsics", strict)
                K = CameraIntrinsics(f=kd["f"], cx=kd["cx"], cy=kd["cy"])
            polys = tuple(
                _polygon_from_dict(pd, f"{where}.polygons[{j}]", strict) for j, pd in enumerate(sd.get("polygons", []))
            )
            scenes.append(Scene(id=str(sd["id"]), width=int(sd["width"]), height=int(sd["height"]),
                                polygons=polys, intrinsics=K))
        except SceneFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneFormatError(f"{where}: {exc}") from None
    return scenes


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise SceneFormatError(f"{path}: {exc.strerror}") from None


def read_scenes(path, strict: bool = False) -> list[Scene]:
    return scenes_from_dict(load_json(path), strict=strict)


def read_scene_file(path, strict: bool = False) -> SceneFile:
    return SceneFile(scenes=read_scenes(path, strict))
