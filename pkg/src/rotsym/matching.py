"""Linear assignment and the two-stage polygon matching used for set losses.

Predictions are first assigned to (no-object padded) ground truth by class
score and center distance; each matched pair then has its vertex sets
assigned by total l1 distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rotsym.errors import MissingScoreError, ShapeError
from rotsym.scene import NO_OBJECT, Polygon2D, Scene

LOG_CLAMP = 1e-12
SMALL_LSAP = 16  # column count up to which the scalar solver is used


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


@dataclass(frozen=True)
class MatchConfig:
    """Weights for center matching and the set losses.

    Attributes:
        reg_weight: weight of the l1 center distance in the matching cost.
        normalize_coords: divide image coordinates by (width, height) in
            costs and losses.
        noobj_weight: weight of the no-object classification term for
            predictions matched to padding.
    """

    reg_weight: float = 10.0
    normalize_coords: bool = True
    noobj_weight: float = 1.0

    def __post_init__(self):
        if not self.reg_weight > 0:
            raise ValueError("reg_weight must be positive")
        if self.noobj_weight < 0:
            raise ValueError("noobj_weight must be non-negative")


def _hungarian(cost: np.ndarray):
    """Shortest augmenting path LSAP for n <= m.

    Returns ``(row_to_col, u, v)`` with duals satisfying
    ``u[i] + v[j] <= cost[i, j]``, equality on matched pairs and ``v <= 0``
    with ``v[j] == 0`` on unmatched columns.
    """
    n, m = cost.shape
    if m <= SMALL_LSAP:
        return _hungarian_scalar(cost)
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # 1-based row owning column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (cur < minv[1:])
            idx = np.flatnonzero(better) + 1
            minv[idx] = cur[idx - 1]
            way[idx] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            rows = owner[used]
            u[rows] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            row_to_col[owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _hungarian_scalar(cost: np.ndarray):
    """Same algorithm on Python floats; faster than numpy for tiny matrices."""
    n, m = cost.shape
    rows = cost.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    owner = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = owner[j0]
            row = rows[i0 - 1]
            ui = u[i0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            row_to_col[owner[j] - 1] = j - 1
    return row_to_col, np.array(u[1:]), np.array(v[1:])


def _lexicographic(cost, row_to_col, u, v):
    """Move an optimal assignment to the lexicographically smallest optimal one.

    By complementary slackness an assignment is optimal iff it uses only
    tight edges (zero reduced cost) and covers every column with a negative
    dual. Row by row we try each smaller tight column; the displaced row is
    re-seated along an augmenting path, and if the vacated column must stay
    covered an alternating path hands it to another row.
    """
    n, m = cost.shape
    scale = max(1.0, float(np.abs(cost).max()))
    tol = 1e-10 * scale
    tight = (cost - u[:, None] - v[None, :]) <= tol
    row_adj = [np.flatnonzero(tight[i]).tolist() for i in range(n)]
    col_adj = [np.flatnonzero(tight[:, j]).tolist() for j in range(m)]
    mandatory = (v < -tol).tolist()
    r2c = [int(c) for c in row_to_col]
    c2r = [-1] * m
    for i, c in enumerate(r2c):
        c2r[c] = i

    for i in range(n):
        cur = r2c[i]
        for j in row_adj[i]:
            if j >= cur:
                break
            if 0 <= c2r[j] < i:
                continue
            saved = (r2c[:], c2r[:])
            holder = c2r[j]
            c2r[cur] = -1
            r2c[i], c2r[j] = j, i
            ok = True
            if holder >= 0:
                r2c[holder] = -1
                ok = _augment_row(holder, i, row_adj, r2c, c2r, set())
            if ok and mandatory[cur] and c2r[cur] < 0:
                ok = _cover_column(cur, i, col_adj, mandatory, r2c, c2r, set())
            if ok:
                break
            r2c, c2r = saved
    return np.array(r2c, dtype=np.int64)


def _augment_row(row, pivot, row_adj, r2c, c2r, seen) -> bool:
    """Seat an unmatched row via an augmenting path over rows after ``pivot``."""
    for col in row_adj[row]:
        if col in seen:
            continue
        seen.add(col)
        owner = c2r[col]
        if owner < 0 or (owner > pivot and _augment_row(owner, pivot, row_adj, r2c, c2r, seen)):
            r2c[row], c2r[col] = col, row
            return True
    return False


def _cover_column(col, pivot, col_adj, mandatory, r2c, c2r, seen) -> bool:
    """Give an uncovered column to some row, ending the shift on an optional column."""
    for row in col_adj[col]:
        if row <= pivot or row in seen:
            continue
        seen.add(row)
        prev = r2c[row]
        if not mandatory[prev] or _cover_column(prev, pivot, col_adj, mandatory, r2c, c2r, seen):
            if c2r[prev] == row:
                c2r[prev] = -1
            r2c[row], c2r[col] = col, row
            return True
    return False


def solve_assignment(cost) -> Assignment:
    """Minimum-cost injection of rows into columns.

    Among optimal assignments the lexicographically smallest pair list is
    returned, so results are reproducible under ties.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if n > m:
        raise ShapeError(f"more rows than columns ({n} > {m})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    if n == 0:
        return Assignment(pairs=(), total_cost=0.0)
    r2c, u, v = _hungarian(cost)
    r2c = _lexicographic(cost, r2c, u, v)
    pairs = tuple((i, int(r2c[i])) for i in range(n))
    return Assignment(pairs=pairs, total_cost=math.fsum(cost[i, j] for i, j in pairs))


def _scale(cfg: MatchConfig, image_w, image_h) -> np.ndarray:
    if cfg.normalize_coords:
        return np.array([float(image_w), float(image_h)])
    return np.ones(2)


def pad_ground_truth(gt: Sequence[Polygon2D], n: int) -> list[Polygon2D]:
    if len(gt) > n:
        raise ShapeError(f"{len(gt)} ground-truth polygons but only {n} predictions")
    return list(gt) + [NO_OBJECT] * (n - len(gt))


def _score(pred: Polygon2D, group, index) -> float:
    if pred.scores is None or group not in pred.scores:
        name = "no-object" if group is None else group.value
        raise MissingScoreError(f"prediction {index} has no score for {name}")
    return pred.scores[group]


def noobj_probability(pred: Polygon2D) -> float:
    """p(no object): explicit ``None`` score if present, else 1 - max group score."""
    if pred.scores is None:
        raise MissingScoreError("prediction has no scores")
    if None in pred.scores:
        return pred.scores[None]
    groups = [val for key, val in pred.scores.items() if key is not None]
    return 1.0 - max(groups, default=0.0)


def center_cost_matrix(gt, pred, cfg: MatchConfig, image_w, image_h) -> np.ndarray:
    """Rows are ground truth (no-object rows are zero), columns predictions."""
    scale = _scale(cfg, image_w, image_h)
    cost = np.zeros((len(gt), len(pred)))
    for i, g in enumerate(gt):
        if g.group is None:
            continue
        gc = np.asarray(g.center) / scale
        for k, p in enumerate(pred):
            dist = float(np.abs(gc - np.asarray(p.center) / scale).sum())
            cost[i, k] = -_score(p, g.group, k) + cfg.reg_weight * dist
    return cost


def match_centers(gt, pred, cfg: MatchConfig, image_w, image_h) -> Assignment:
    """Assignment of padded ground truth rows to prediction columns."""
    padded = pad_ground_truth(gt, len(pred))
    return solve_assignment(center_cost_matrix(padded, pred, cfg, image_w, image_h))


def vertex_cost_matrix(gt_vertices, pred_vertices, scale=(1.0, 1.0)) -> np.ndarray:
    g = np.asarray(gt_vertices, dtype=np.float64).reshape(-1, 2) / np.asarray(scale)
    p = np.asarray(pred_vertices, dtype=np.float64).reshape(-1, 2) / np.asarray(scale)
    return np.abs(g[:, None, :] - p[None, :, :]).sum(axis=2)


def match_vertices(gt_vertices, pred_vertices, scale=(1.0, 1.0)) -> Assignment:
    """Order-agnostic vertex assignment minimizing total l1 distance."""
    if len(gt_vertices) != len(pred_vertices):
        raise ShapeError(f"vertex counts differ: {len(gt_vertices)} vs {len(pred_vertices)}")
    return solve_assignment(vertex_cost_matrix(gt_vertices, pred_vertices, scale))


def _neg_log(p: float) -> float:
    return -math.log(max(p, LOG_CLAMP))


def center_loss(gt: Polygon2D, pred: Polygon2D, cfg: MatchConfig, image_w=1.0, image_h=1.0) -> float:
    scale = _scale(cfg, image_w, image_h)
    dist = float(np.abs(np.asarray(gt.center) / scale - np.asarray(pred.center) / scale).sum())
    return _neg_log(_score(pred, gt.group, "matched")) + dist


def vertex_loss(gt_vertices, pred_vertices, rho: Assignment, scale=(1.0, 1.0)) -> float:
    g = np.asarray(gt_vertices, dtype=np.float64).reshape(-1, 2) / np.asarray(scale)
    p = np.asarray(pred_vertices, dtype=np.float64).reshape(-1, 2) / np.asarray(scale)
    return math.fsum(float(np.abs(g[j] - p[k]).sum()) for j, k in rho.pairs)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    center: float
    vertex: float
    noobj: float
    sigma: Assignment


def loss_breakdown(gt: Scene, pred: Scene, cfg: MatchConfig = MatchConfig()) -> LossBreakdown:
    w, h = gt.width, gt.height
    scale = tuple(_scale(cfg, w, h))
    sigma = match_centers(gt.polygons, pred.polygons, cfg, w, h)
    padded = pad_ground_truth(gt.polygons, len(pred.polygons))
    center_terms, vertex_terms, noobj_terms = [], [], []
    for i, k in sigma.pairs:
        g, p = padded[i], pred.polygons[k]
        if g.group is None:
            noobj_terms.append(cfg.noobj_weight * _neg_log(noobj_probability(p)))
            continue
        center_terms.append(center_loss(g, p, cfg, w, h))
        if g.vertices:
            rho = match_vertices(g.vertices, p.vertices, scale)
            vertex_terms.append(vertex_loss(g.vertices, p.vertices, rho, scale))
    c, v, e = math.fsum(center_terms), math.fsum(vertex_terms), math.fsum(noobj_terms)
    return LossBreakdown(total=math.fsum([c, v, e]), center=c, vertex=v, noobj=e, sigma=sigma)


def total_loss(gt: Scene, pred: Scene, cfg: MatchConfig = MatchConfig()) -> float:
    """Sum of center and vertex losses over matched pairs plus no-object terms."""
    return loss_breakdown(gt, pred, cfg).total
