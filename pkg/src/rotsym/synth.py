"""Deterministic synthetic scenes: sample 3D symmetry instances, project them
with known intrinsics, and perturb them into scored prediction sets.

Each (seed, scene index, stream) triple owns an independent Philox substream,
so output does not depend on generation order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from rotsym.errors import BehindCameraError, ConfigError
from rotsym.geometry import PolygonParams3D, RotationGroup, reconstruct, rodrigues_rotate
from rotsym.projection import DEFAULT_FOCAL, CameraIntrinsics, project_polygon
from rotsym.scene import Polygon2D, Scene

GT_STREAM = 0
NOISE_STREAM = 1
MAX_ATTEMPTS = 1000
BOX_XY = (-1.0, 1.0)
BOX_Z = (0.0, 4.0)

GROUP_PRESETS = {
    "uniform": {g.value: 1.0 for g in RotationGroup},
    # log-scale skew: a few groups dominate, C3/C5 are rare
    "skewed": {"SO2": 40.0, "C2": 30.0, "C3": 3.0, "C4": 12.0, "C5": 2.0, "C6": 5.0, "C8": 8.0},
    "discrete": {g.value: 1.0 for g in RotationGroup if g is not RotationGroup.SO2},
}


def scene_rng(seed: int, index: int, stream: int = GT_STREAM) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index), int(stream)])))


def clip_normalized_focal(f: float, image_w: float, lo: float = 2 / 3, hi: float = 4 / 3) -> float:
    """Clamp ``f / image_w`` into [lo, hi] and scale back to pixels."""
    if not image_w > 0:
        raise ValueError("image width must be positive")
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    return min(max(f / image_w, lo), hi) * image_w


def _pair(value, name, lo=None, hi=None, strict_lo=False):
    try:
        a, b = (float(t) for t in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected [low, high], got {value!r}") from None
    if not (math.isfinite(a) and math.isfinite(b)) or a > b:
        raise ConfigError(f"{name}: invalid range [{a}, {b}]")
    if lo is not None and (a < lo or (strict_lo and a <= lo)):
        raise ConfigError(f"{name}: {a} below {lo}")
    if hi is not None and b > hi:
        raise ConfigError(f"{name}: {b} above {hi}")
    return (a, b)


@dataclass(frozen=True)
class SynthConfig:
    """Scene sampling parameters.

    ``focal_mode`` is ``"fixed"`` (use ``focal``) or ``"sampled"`` (draw a
    normalized focal from ``focal_range`` and clip it to ``focal_clip``).
    ``max_tilt_deg`` bounds the angle between a sampled axis and +z; zero gives
    frontoparallel polygons.
    """

    rng_seed: int = 0
    n_scenes: int = 10
    polygons_per_scene: tuple[int, int] = (1, 4)
    group_weights: dict = field(default_factory=lambda: dict(GROUP_PRESETS["uniform"]))
    x_range: tuple[float, float] = (-1.0, 1.0)
    y_range: tuple[float, float] = (-1.0, 1.0)
    z_range: tuple[float, float] = (1.0, 4.0)
    radius_range: tuple[float, float] = (0.05, 0.3)
    max_tilt_deg: float = 60.0
    beta_range: tuple[float, float] = (0.0, math.pi / 2)
    width: int = 1280
    height: int = 720
    focal_mode: str = "fixed"
    focal: float = DEFAULT_FOCAL
    focal_range: tuple[float, float] = (0.4, 2.0)
    focal_clip: tuple[float, float] = (2 / 3, 4 / 3)
    min_vertex_depth: float = 0.1
    center_in_image: bool = True

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if int(self.n_scenes) < 0:
            raise ConfigError("n_scenes: must be non-negative")
        lo, hi = (int(t) for t in self.polygons_per_scene)
        if lo < 0 or hi < lo:
            raise ConfigError(f"polygons_per_scene: invalid range [{lo}, {hi}]")
        set_("polygons_per_scene", (lo, hi))
        weights = self.group_weights
        if isinstance(weights, str):
            if weights not in GROUP_PRESETS:
                raise ConfigError(f"group_weights: unknown preset {weights!r}")
            weights = GROUP_PRESETS[weights]
        try:
            weights = {RotationGroup.parse(g): float(w) for g, w in dict(weights).items()}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"group_weights: {exc}") from None
        if any(w < 0 or not math.isfinite(w) for w in weights.values()) or not sum(weights.values()) > 0:
            raise ConfigError("group_weights: need non-negative weights, not all zero")
        set_("group_weights", {g: weights[g] for g in RotationGroup if g in weights})
        set_("x_range", _pair(self.x_range, "x_range", *BOX_XY))
        set_("y_range", _pair(self.y_range, "y_range", *BOX_XY))
        set_("z_range", _pair(self.z_range, "z_range", *BOX_Z, strict_lo=True))
        set_("radius_range", _pair(self.radius_range, "radius_range", 0.0, strict_lo=True))
        set_("beta_range", _pair(self.beta_range, "beta_range", 0.0, math.pi / 2))
        if not 0 <= float(self.max_tilt_deg) < 90:
            raise ConfigError("max_tilt_deg: must be in [0, 90)")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ConfigError("width/height: must be positive")
        if self.focal_mode not in ("fixed", "sampled"):
            raise ConfigError(f"focal_mode: expected 'fixed' or 'sampled', got {self.focal_mode!r}")
        if not float(self.focal) > 0:
            raise ConfigError("focal: must be positive")
        set_("focal_range", _pair(self.focal_range, "focal_range", 0.0, strict_lo=True))
        clip = _pair(self.focal_clip, "focal_clip", 0.0, strict_lo=True)
        if not clip[0] < clip[1]:
            raise ConfigError("focal_clip: need low < high")
        set_("focal_clip", clip)
        if not float(self.min_vertex_depth) > 0:
            raise ConfigError("min_vertex_depth: must be positive")

    @classmethod
    def from_dict(cls, d: dict, strict: bool = False) -> "SynthConfig":
        return cls(**_known_fields(cls, d, "synth", strict))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "group_weights":
                val = {g.value: w for g, w in val.items()}
            elif isinstance(val, tuple):
                val = list(val)
            out[f.name] = val
        return out


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation model turning ground truth into scored predictions.

    Confidence of a kept instance is ``score_base * exp(-d / score_scale_px)``
    where ``d`` is its projected center displacement in pixels. Spurious
    instances (one Bernoulli draw per ground-truth polygon) get a confidence
    drawn uniformly from ``spurious_score``.
    """

    center_sigma: float = 0.0
    vertex_sigma: float = 0.0
    axis_jitter_sigma: float = 0.0
    score_base: float = 1.0
    score_scale_px: float = 20.0
    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    spurious_score: tuple[float, float] = (0.05, 0.5)

    def __post_init__(self):
        for name in ("center_sigma", "vertex_sigma", "axis_jitter_sigma"):
            if not float(getattr(self, name)) >= 0:
                raise ConfigError(f"{name}: must be non-negative")
        for name in ("drop_rate", "spurious_rate", "score_base"):
            if not 0 <= float(getattr(self, name)) <= 1:
                raise ConfigError(f"{name}: must be in [0, 1]")
        if not float(self.score_scale_px) > 0:
            raise ConfigError("score_scale_px: must be positive")
        object.__setattr__(self, "spurious_score", _pair(self.spurious_score, "spurious_score", 0.0, 1.0))

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls()

    @classmethod
    def from_dict(cls, d: dict, strict: bool = False) -> "NoiseSpec":
        return cls(**_known_fields(cls, d, "noise", strict))

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v for f in fields(self)}


def _known_fields(cls, d, section, strict):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown and strict:
        raise ConfigError(f"{section}: unknown field(s) {unknown}")
    return {k: v for k, v in d.items() if k in names}


def _unit_perp(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1)


def sample_axis(rng: np.random.Generator, max_tilt_deg: float) -> np.ndarray:
    """Uniform direction on the spherical cap within ``max_tilt_deg`` of +z."""
    cos_max = math.cos(math.radians(max_tilt_deg))
    cos_t = rng.uniform(cos_max, 1.0)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.uniform(0.0, 2 * math.pi)
    return np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])


def sample_camera(cfg: SynthConfig, rng: np.random.Generator) -> CameraIntrinsics:
    if cfg.focal_mode == "fixed":
        f = float(cfg.focal)
    else:
        f = clip_normalized_focal(rng.uniform(*cfg.focal_range) * cfg.width, cfg.width, *cfg.focal_clip)
    return CameraIntrinsics.default(cfg.width, cfg.height, f)


def sample_polygon(cfg: SynthConfig, K: CameraIntrinsics, rng: np.random.Generator, group=None) -> PolygonParams3D:
    """One feasible instance: every reconstructed point in front of the camera."""
    if group is None:
        groups = list(cfg.group_weights)
        w = np.array([cfg.group_weights[g] for g in groups])
        group = groups[int(rng.choice(len(groups), p=w / w.sum()))]
    for _ in range(MAX_ATTEMPTS):
        c = np.array([rng.uniform(*cfg.x_range), rng.uniform(*cfg.y_range), rng.uniform(*cfg.z_range)])
        a = sample_axis(rng, cfg.max_tilt_deg)
        radius = rng.uniform(*cfg.radius_range)
        psi = rng.uniform(0.0, 2 * math.pi)
        beta = rng.uniform(*cfg.beta_range)
        e1, e2 = _unit_perp(a)
        s = c + radius * (math.cos(psi) * e1 + math.sin(psi) * e2)
        p = PolygonParams3D(c=c, s=s, a=a, beta=beta, group=group)
        if _feasible(p, cfg, K):
            return p
    raise ConfigError(
        f"no feasible {RotationGroup.parse(group).value} instance after {MAX_ATTEMPTS} attempts; "
        "check radius_range against z_range and the image size"
    )


def _feasible(p: PolygonParams3D, cfg: SynthConfig, K: CameraIntrinsics) -> bool:
    pts = np.vstack([p.c, p.s, reconstruct(p)])
    if np.any(pts[:, 2] < cfg.min_vertex_depth):
        return False
    if cfg.center_in_image:
        u = K.f * (p.c[0] / p.c[2]) + K.cx
        v = K.f * (p.c[1] / p.c[2]) + K.cy
        if not (0 <= u < cfg.width and 0 <= v < cfg.height):
            return False
    return True


def scene_id(index: int) -> str:
    return f"scene-{index:05d}"


def sample_scene(cfg: SynthConfig, index: int) -> tuple[list[PolygonParams3D], CameraIntrinsics, Scene]:
    """Ground truth for scene ``index``; identical for identical (seed, index)."""
    rng = scene_rng(cfg.rng_seed, index, GT_STREAM)
    K = sample_camera(cfg, rng)
    n = int(rng.integers(cfg.polygons_per_scene[0], cfg.polygons_per_scene[1] + 1))
    params = [sample_polygon(cfg, K, rng) for _ in range(n)]
    polys = tuple(project_polygon(p, K) for p in params)
    return params, K, Scene(id=scene_id(index), width=cfg.width, height=cfg.height, polygons=polys, intrinsics=K)


def _small_rotation(a: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return a
    angle = rng.normal(0.0, sigma)
    e1, e2 = _unit_perp(a / np.linalg.norm(a))
    phi = rng.uniform(0.0, 2 * math.pi)
    k = math.cos(phi) * e1 + math.sin(phi) * e2
    return rodrigues_rotate(a, k, angle)


def perturb_scene(
    gt_params: list[PolygonParams3D],
    K: CameraIntrinsics,
    noise: NoiseSpec,
    rng: np.random.Generator,
    template: Scene,
    cfg: SynthConfig | None = None,
) -> Scene:
    """Scored predictions for one scene.

    Jitter is applied to the 3D parameters and the result is re-reconstructed,
    so perturbed predictions still satisfy the symmetry priors.
    """
    preds = []
    for p in gt_params:
        spurious = rng.random() < noise.spurious_rate
        dropped = rng.random() < noise.drop_rate
        if not dropped:
            q = _jitter(p, K, noise, rng)
            if q is not None:
                preds.append(q)
        if spurious and cfg is not None:
            try:
                extra = sample_polygon(cfg, K, rng)
            except ConfigError:
                continue
            conf = float(rng.uniform(*noise.spurious_score))
            poly = project_polygon(extra, K)
            preds.append(_with_scores(poly, {extra.group: conf}))
    return Scene(id=template.id, width=template.width, height=template.height,
                 polygons=tuple(preds), intrinsics=template.intrinsics)


def _with_scores(poly: Polygon2D, scores) -> Polygon2D:
    return Polygon2D(center=poly.center, vertices=poly.vertices, group=poly.group, scores=scores, params=poly.params)


def _jitter(p: PolygonParams3D, K: CameraIntrinsics, noise: NoiseSpec, rng: np.random.Generator):
    base = project_polygon(p, K)
    for _ in range(10):
        c = np.asarray(p.c) + rng.normal(0.0, noise.center_sigma, 3) if noise.center_sigma else np.asarray(p.c)
        s = np.asarray(p.s) + rng.normal(0.0, noise.vertex_sigma, 3) if noise.vertex_sigma else np.asarray(p.s)
        a = _small_rotation(np.asarray(p.a), noise.axis_jitter_sigma, rng)
        try:
            q = PolygonParams3D(c=c, s=s, a=a, beta=p.beta, group=p.group)
            poly = project_polygon(q, K)
        except (BehindCameraError, ValueError):
            continue
        d = math.dist(poly.center, base.center)
        conf = noise.score_base * math.exp(-d / noise.score_scale_px)
        return _with_scores(poly, {p.group: conf})
    return None


def generate(cfg: SynthConfig, noise: NoiseSpec | None = None, workers: int = 1) -> tuple[list[Scene], list[Scene] | None]:
    """All scenes of a config, plus perturbed predictions when ``noise`` is given."""

    def one(index):
        params, K, gt = sample_scene(cfg, index)
        pred = None
        if noise is not None:
            pred = perturb_scene(params, K, noise, scene_rng(cfg.rng_seed, index, NOISE_STREAM), gt, cfg)
        return gt, pred

    indices = range(int(cfg.n_scenes))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]
    gts = [r[0] for r in results]
    preds = [r[1] for r in results] if noise is not None else None
    return gts, preds
