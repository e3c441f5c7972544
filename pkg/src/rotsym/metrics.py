"""Evaluation: per-group center AP, vertex AP and dilated score-map max-F1.

A predicted center is a true positive when it is bipartitely matched (by
distance) to a ground-truth center of the same group and lies strictly
closer than ``tau * max(width, height)`` pixels.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from rotsym.errors import IdMismatchError, ShapeError
from rotsym.geometry import RotationGroup
from rotsym.matching import MatchConfig, solve_assignment
from rotsym.projection import DEFAULT_FOCAL
from rotsym.scene import Scene

DEFAULT_TAU = 0.025
DEFAULT_DILATION = 5
DEFAULT_THRESHOLDS = 100


@dataclass(frozen=True)
class APResult:
    per_group: dict[RotationGroup, float]
    mean: float

    def as_dict(self) -> dict:
        return {
            "per_group": {g.value: ap for g, ap in self.per_group.items()},
            "mean": self.mean,
        }


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray  # (height, width)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def average_precision(scores, tps, n_gt: int) -> float:
    """All-points interpolated AP.

    Detections with equal scores enter the ranking together, so the result
    does not depend on the order of tied detections.
    """
    if n_gt <= 0:
        raise ValueError("AP undefined without ground truth")
    scores = np.asarray(scores, dtype=np.float64)
    tps = np.asarray(tps, dtype=bool)
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = tps[order]
    ctp = np.cumsum(t)
    cfp = np.cumsum(~t)
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = ctp[last], cfp[last]
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * envelope))


def pair_scenes(gt_scenes: Sequence[Scene], pred_scenes: Sequence[Scene]) -> list[tuple[Scene, Scene]]:
    """Pair scenes by id in ground-truth order."""
    by_id = {}
    for s in pred_scenes:
        if s.id in by_id:
            raise IdMismatchError(f"duplicate prediction scene id {s.id!r}")
        by_id[s.id] = s
    gt_ids = [s.id for s in gt_scenes]
    if len(set(gt_ids)) != len(gt_ids):
        raise IdMismatchError("duplicate ground-truth scene ids")
    missing = [i for i in gt_ids if i not in by_id]
    extra = sorted(set(by_id) - set(gt_ids))
    if missing or extra:
        raise IdMismatchError(f"scene ids differ: missing {missing[:5]}, unexpected {extra[:5]}")
    return [(g, by_id[g.id]) for g in gt_scenes]


def match_by_distance(gt_pts, pred_pts) -> list[tuple[int, int, float]]:
    """Min-total-distance bipartite matching; returns (gt, pred, distance) triples."""
    g = np.asarray(gt_pts, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(pred_pts, dtype=np.float64).reshape(-1, 2)
    if len(g) == 0 or len(p) == 0:
        return []
    dist = np.linalg.norm(g[:, None, :] - p[None, :, :], axis=2)
    if len(g) <= len(p):
        pairs = solve_assignment(dist).pairs
    else:
        pairs = [(i, k) for k, i in solve_assignment(dist.T).pairs]
    return sorted((i, k, float(dist[i, k])) for i, k in pairs)


@dataclass
class _SceneRecord:
    center: dict = field(default_factory=dict)  # group -> (scores, tps)
    vertex: dict = field(default_factory=dict)
    n_gt: dict = field(default_factory=dict)
    n_gt_vertex: dict = field(default_factory=dict)
    n_pred: dict = field(default_factory=dict)
    n_pred_vertex: dict = field(default_factory=dict)
    f1_counts: np.ndarray | None = None


def _scene_record(gt: Scene, pred: Scene, tau: float, vertex_tau: float) -> _SceneRecord:
    thr = tau * max(gt.width, gt.height)
    vthr = vertex_tau * max(gt.width, gt.height)
    rec = _SceneRecord()
    for group in RotationGroup:
        gts = [p for p in gt.polygons if p.group is group]
        preds = [p for p in pred.polygons if p.group is group]
        if not gts and not preds:
            continue
        scores = [p.confidence for p in preds]
        matches = match_by_distance([p.center for p in gts], [p.center for p in preds])
        hit = {k: i for i, k, d in matches if d < thr}
        rec.center[group] = (scores, [k in hit for k in range(len(preds))])
        rec.n_gt[group] = len(gts)
        rec.n_pred[group] = len(preds)
        if group is RotationGroup.SO2:
            continue

        v_scores, v_tps = [], []
        for k, p in enumerate(preds):
            nv = len(p.vertices)
            ok = [False] * nv
            if k in hit and gts[hit[k]].vertices and nv:
                for _, m, d in match_by_distance_l1(gts[hit[k]].vertices, p.vertices):
                    ok[m] = d < vthr
            v_scores.extend([scores[k]] * nv)
            v_tps.extend(ok)
        rec.vertex[group] = (v_scores, v_tps)
        rec.n_gt_vertex[group] = sum(len(p.vertices) for p in gts)
        rec.n_pred_vertex[group] = len(v_scores)
    return rec


def match_by_distance_l1(gt_vertices, pred_vertices) -> list[tuple[int, int, float]]:
    """Vertex pairs by minimum total l1 cost; the reported distance is Euclidean."""
    g = np.asarray(gt_vertices, dtype=np.float64).reshape(-1, 2)
    p = np.asarray(pred_vertices, dtype=np.float64).reshape(-1, 2)
    cost = np.abs(g[:, None, :] - p[None, :, :]).sum(axis=2)
    if len(g) <= len(p):
        pairs = solve_assignment(cost).pairs
    else:
        pairs = [(i, k) for k, i in solve_assignment(cost.T).pairs]
    return sorted((i, k, float(np.linalg.norm(g[i] - p[k]))) for i, k in pairs)


def _reduce_ap(records: list[_SceneRecord], key: str, count_key: str, groups) -> APResult:
    per_group = {}
    for group in groups:
        n_gt = sum(getattr(r, count_key).get(group, 0) for r in records)
        if n_gt == 0:
            continue
        scores, tps = [], []
        for r in records:
            s, t = getattr(r, key).get(group, ((), ()))
            scores.extend(s)
            tps.extend(t)
        per_group[group] = average_precision(scores, tps, n_gt)
    mean = float(np.mean(list(per_group.values()))) if per_group else 0.0
    return APResult(per_group=per_group, mean=mean)


def _records(gt_scenes, pred_scenes, tau, vertex_tau, workers=1, f1=None):
    pairs = pair_scenes(gt_scenes, pred_scenes)

    def one(pair):
        rec = _scene_record(pair[0], pair[1], tau, vertex_tau)
        if f1 is not None:
            dilation, shape, thresholds = f1
            gmap = render_score_map(pair[0], dilation, shape=shape, ground_truth=True)
            pmap = render_score_map(pair[1], dilation, shape=shape, size=(pair[0].width, pair[0].height))
            rec.f1_counts = f1_counts(gmap, pmap, thresholds)
        return rec

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


def center_ap(gt_scenes, pred_scenes, tau: float = DEFAULT_TAU) -> APResult:
    records = _records(gt_scenes, pred_scenes, tau, tau)
    return _reduce_ap(records, "center", "n_gt", list(RotationGroup))


def vertex_ap(gt_scenes, pred_scenes, tau: float = DEFAULT_TAU, vertex_tau: float | None = None) -> APResult:
    """Vertex AP over discrete groups.

    Predicted polygons are matched to ground truth by center; each predicted
    vertex of a center-correct polygon is a true positive when its assigned
    ground-truth vertex is closer than ``vertex_tau * max(w, h)``. Vertices of
    other predicted polygons are false positives, ranked by the polygon's score.
    """
    vtau = tau if vertex_tau is None else vertex_tau
    records = _records(gt_scenes, pred_scenes, tau, vtau)
    groups = [g for g in RotationGroup if g is not RotationGroup.SO2]
    return _reduce_ap(records, "vertex", "n_gt_vertex", groups)


def _footprint(radius: int, shape: str) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    if shape == "disk":
        return xx * xx + yy * yy <= r * r
    if shape == "square":
        return np.ones_like(xx, dtype=bool)
    raise ValueError(f"unknown dilation shape {shape!r}")


def render_score_map(
    scene: Scene,
    dilation_px: int = DEFAULT_DILATION,
    shape: str = "disk",
    ground_truth: bool = False,
    size: tuple[int, int] | None = None,
) -> ScoreMap:
    """Stamp each center as a disk of radius ``dilation_px`` holding its confidence.

    The center at (u, v) lies in pixel (floor(u), floor(v)). Overlapping stamps
    keep the maximum. Ground truth stamps 1.0.
    """
    if dilation_px < 0:
        raise ValueError("dilation must be non-negative")
    w, h = size if size is not None else (scene.width, scene.height)
    out = np.zeros((h, w))
    fp = _footprint(dilation_px, shape)
    r = int(dilation_px)
    for poly in scene.polygons:
        if poly.group is None:
            continue
        val = 1.0 if ground_truth else poly.confidence
        x0 = math.floor(poly.center[0]) - r
        y0 = math.floor(poly.center[1]) - r
        xa, xb = max(x0, 0), min(x0 + 2 * r + 1, w)
        ya, yb = max(y0, 0), min(y0 + 2 * r + 1, h)
        if xa >= xb or ya >= yb:
            continue
        sub = fp[ya - y0 : yb - y0, xa - x0 : xb - x0]
        region = out[ya:yb, xa:xb]
        region[sub] = np.maximum(region[sub], val)
    return ScoreMap(out)


def f1_thresholds(n: int = DEFAULT_THRESHOLDS) -> np.ndarray:
    """``n`` uniformly spaced thresholds strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


def f1_counts(gt_map: ScoreMap, pred_map: ScoreMap, thresholds) -> np.ndarray:
    """(n_thresholds, 3) array of pixel TP, FP, FN; prediction positive iff >= t."""
    g, p = np.asarray(gt_map.values), np.asarray(pred_map.values)
    if g.shape != p.shape:
        raise ShapeError(f"score map shapes differ: {g.shape} vs {p.shape}")
    pos = g > 0
    on_pos = np.sort(p[pos])
    on_neg = np.sort(p[~pos])
    t = np.asarray(thresholds, dtype=np.float64)
    tp = on_pos.size - np.searchsorted(on_pos, t, side="left")
    fp = on_neg.size - np.searchsorted(on_neg, t, side="left")
    fn = on_pos.size - tp
    return np.stack([tp, fp, fn], axis=1).astype(np.int64)


def f1_from_counts(counts: np.ndarray) -> np.ndarray:
    tp, fp, fn = (counts[:, k].astype(np.float64) for k in range(3))
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 1.0)


def max_f1(gt_maps, pred_maps, n_thresholds: int = DEFAULT_THRESHOLDS) -> float:
    """Dataset-level pixel F1 maximized over ``n_thresholds`` binarization levels."""
    if len(gt_maps) != len(pred_maps):
        raise ShapeError("need one prediction map per ground-truth map")
    t = f1_thresholds(n_thresholds)
    counts = np.zeros((len(t), 3), dtype=np.int64)
    for g, p in zip(gt_maps, pred_maps):
        counts += f1_counts(g, p, t)
    return float(f1_from_counts(counts).max())


def default_workers() -> int:
    env = os.environ.get("ROTSYM_WORKERS")
    return max(1, int(env)) if env else 1


def evaluate(
    gt_scenes,
    pred_scenes,
    tau: float = DEFAULT_TAU,
    vertex_tau: float | None = None,
    f1: bool = False,
    dilation: int = DEFAULT_DILATION,
    thresholds: int = DEFAULT_THRESHOLDS,
    shape: str = "disk",
    workers: int | None = None,
    match_cfg: MatchConfig = MatchConfig(),
) -> dict:
    """Full metrics report as a plain dict with deterministic key order."""
    vtau = tau if vertex_tau is None else vertex_tau
    workers = default_workers() if workers is None else workers
    t = f1_thresholds(thresholds)
    records = _records(gt_scenes, pred_scenes, tau, vtau, workers, (dilation, shape, t) if f1 else None)
    c = _reduce_ap(records, "center", "n_gt", list(RotationGroup))
    v = _reduce_ap(records, "vertex", "n_gt_vertex", [g for g in RotationGroup if g is not RotationGroup.SO2])

    counts = {}
    for group in RotationGroup:
        row = {
            "gt": sum(r.n_gt.get(group, 0) for r in records),
            "pred": sum(r.n_pred.get(group, 0) for r in records),
            "center_tp": sum(int(np.sum(r.center.get(group, ((), ()))[1])) for r in records),
            "vertex_gt": sum(r.n_gt_vertex.get(group, 0) for r in records),
            "vertex_pred": sum(r.n_pred_vertex.get(group, 0) for r in records),
            "vertex_tp": sum(int(np.sum(r.vertex.get(group, ((), ()))[1])) for r in records),
        }
        if row["gt"] or row["pred"]:
            counts[group.value] = row

    report = {
        "config": {
            "tau": tau,
            "vertex_tau": vtau,
            "dilation": dilation,
            "dilation_shape": shape,
            "thresholds": thresholds,
            "reg_weight": match_cfg.reg_weight,
            "default_focal": DEFAULT_FOCAL,
            "n_scenes": len(records),
        },
        "center_ap": c.as_dict(),
        "vertex_ap": v.as_dict(),
        "counts": counts,
    }
    if f1:
        total = np.zeros((len(t), 3), dtype=np.int64)
        for r in records:
            total += r.f1_counts
        curve = f1_from_counts(total)
        best = int(np.argmax(curve))
        report["max_f1"] = float(curve[best])
        report["best_threshold"] = float(t[best])
    return report
