"""Symmetric P2D metrics, YUV weighting, joint fusion, LogP2D and PSNR baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cloud import MissingAttributeError, PointCloud, rgb_to_yuv, COLOR_MATRICES
from .knn import KnnIndex
from .p2d import DegenerateParams, mean_pool, point_distances

__all__ = [
    "MetricConfig",
    "MetricResult",
    "PairContext",
    "METRIC_IDS",
    "p2d_color_component",
    "p2d_yuv",
    "p2d_geometry",
    "p2d_joint",
    "fuse",
    "log_p2d",
    "d1_psnr",
    "y_psnr",
    "compute_metric",
    "compute_metrics",
]

PSNR_CAP_DB = 100.0
POOLINGS = ("min", "max", "avg")


@dataclass(frozen=True)
class MetricConfig:
    k_geometry: int = 40
    k_color: int = 15
    k_joint: int = 25
    fusion_pooling: str = "avg"
    yuv_weights: tuple = (6 / 8, 1 / 8, 1 / 8)
    color_matrix: str = "bt709"
    degenerate: DegenerateParams = field(default_factory=DegenerateParams)
    logp2d_eps: float = 1e-12
    d1_peak: float | None = None

    def __post_init__(self):
        for name in ("k_geometry", "k_color", "k_joint"):
            k = getattr(self, name)
            if int(k) != k or k < 1:
                raise ValueError(f"{name} must be a positive integer, got {k!r}")
        if self.fusion_pooling not in POOLINGS:
            raise ValueError(f"fusion_pooling must be one of {POOLINGS}")
        if len(self.yuv_weights) != 3 or not math.isclose(sum(self.yuv_weights), 1.0,
                                                          abs_tol=1e-12):
            raise ValueError("yuv_weights must be three numbers summing to 1")
        if self.color_matrix not in COLOR_MATRICES:
            raise ValueError(f"unknown color matrix {self.color_matrix!r}")
        if not self.logp2d_eps > 0:
            raise ValueError("logp2d_eps must be positive")
        if self.d1_peak is not None and not self.d1_peak > 0:
            raise ValueError("d1_peak must be positive")

    def with_k(self, k):
        return replace(self, k_geometry=k, k_color=k, k_joint=k)

    def to_dict(self):
        d = asdict(self)
        d["yuv_weights"] = list(self.yuv_weights)
        return d


@dataclass
class MetricResult:
    name: str
    value: float
    directed_ab: float | None = None
    directed_ba: float | None = None
    orientation: str = "distortion"
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "value": self.value,
            "directed_ab": self.directed_ab,
            "directed_ba": self.directed_ba,
            "orientation": self.orientation,
            "metadata": self.metadata,
        }


class PairContext:
    """Caches indices, neighbour rows, YUV channels and directed scores for one
    (reference, degraded) pair so that several metrics share the work.

    Direction ``"ab"`` takes each reference point to its neighbourhood in the
    degraded cloud; ``"ba"`` the reverse.
    """

    def __init__(self, ref: PointCloud, deg: PointCloud, color_matrix="bt709", workers=1):
        self.ref = ref
        self.deg = deg
        self.color_matrix = color_matrix
        self.workers = workers
        self._index = {}
        self._nbr = {}
        self._yuv = {}
        self._directed = {}

    def _clouds(self, direction):
        if direction == "ab":
            return self.ref, self.deg
        if direction == "ba":
            return self.deg, self.ref
        raise ValueError(direction)

    def index(self, which):
        if which not in self._index:
            cloud = self.ref if which == "ref" else self.deg
            self._index[which] = KnnIndex(cloud.points, workers=self.workers)
        return self._index[which]

    def neighbors(self, direction, k):
        """Neighbour rows for ``min(k, N_target)`` neighbours.

        A smaller K is a prefix of a larger one under the (distance, index)
        ordering, so rows are computed once at the largest K requested.
        """
        src, tgt = self._clouds(direction)
        kk = min(k, len(tgt))
        have = self._nbr.get(direction)
        if have is None or have.shape[1] < kk:
            idx = self.index("deg" if direction == "ab" else "ref")
            have, _ = idx.query(src.points, kk)
            self._nbr[direction] = have
        return have[:, :kk]

    def yuv(self, cloud):
        key = id(cloud)
        if key not in self._yuv:
            self._yuv[key] = rgb_to_yuv(cloud, self.color_matrix)
        return self._yuv[key]

    def directed(self, direction, mode, k, params: DegenerateParams):
        """Average P2D distance in one direction; ``mode`` is geometry|y|u|v."""
        key = (direction, mode, min(k, len(self._clouds(direction)[1])), params)
        if key not in self._directed:
            src, tgt = self._clouds(direction)
            nbr = self.neighbors(direction, k)
            if mode == "geometry":
                d = point_distances(src.points, tgt.points, nbr, "geometry", params)
            else:
                for c in (src, tgt):
                    if not c.has_colors:
                        raise MissingAttributeError(f"cloud {c.id!r} has no colors")
                d = point_distances(self.yuv(src).channel(mode),
                                    self.yuv(tgt).channel(mode), nbr, "color", params)
            self._directed[key] = mean_pool(d)
        return self._directed[key]


def _ctx(ref, deg, cfg, ctx):
    if ctx is None:
        return PairContext(ref, deg, cfg.color_matrix)
    if ctx.ref is not ref or ctx.deg is not deg:
        raise ValueError("context was built for a different pair of clouds")
    if ctx.color_matrix != cfg.color_matrix:
        raise ValueError("context color matrix differs from the config")
    return ctx


def _k_meta(ctx, k):
    warnings = []
    used = {}
    for direction, label in (("ab", "deg"), ("ba", "ref")):
        n = len(ctx._clouds(direction)[1])
        used[direction] = min(k, n)
        if k > n:
            warnings.append(f"k={k} exceeds {label} cloud size {n}; using {n}")
    return {"k": k, "k_used": used, "warnings": warnings}


def _symmetric(name, ctx, mode, k, cfg):
    ab = ctx.directed("ab", mode, k, cfg.degenerate)
    ba = ctx.directed("ba", mode, k, cfg.degenerate)
    return MetricResult(name, max(ab, ba), ab, ba, "distortion", _k_meta(ctx, k))


def p2d_color_component(ref, deg, component, cfg: MetricConfig = MetricConfig(),
                        k=None, ctx=None) -> MetricResult:
    comp = component.lower()
    if comp not in ("y", "u", "v"):
        raise ValueError(f"component must be Y, U or V, got {component!r}")
    ctx = _ctx(ref, deg, cfg, ctx)
    return _symmetric(f"p2d-{comp}", ctx, comp, cfg.k_color if k is None else k, cfg)


def p2d_geometry(ref, deg, cfg: MetricConfig = MetricConfig(), k=None,
                 ctx=None) -> MetricResult:
    ctx = _ctx(ref, deg, cfg, ctx)
    return _symmetric("p2d-g", ctx, "geometry", cfg.k_geometry if k is None else k, cfg)


def _weighted_yuv(y, u, v, weights):
    if tuple(weights) == (6 / 8, 1 / 8, 1 / 8):
        return (6 * y + u + v) / 8
    return weights[0] * y + weights[1] * u + weights[2] * v


def p2d_yuv(ref, deg, cfg: MetricConfig = MetricConfig(), k=None, ctx=None) -> MetricResult:
    ctx = _ctx(ref, deg, cfg, ctx)
    parts = [p2d_color_component(ref, deg, c, cfg, k, ctx) for c in "yuv"]
    value = _weighted_yuv(*(p.value for p in parts), cfg.yuv_weights)
    meta = dict(parts[0].metadata)
    meta["components"] = {p.name: p.value for p in parts}
    return MetricResult("p2d-yuv", value, None, None, "distortion", meta)


def fuse(geometry, color, pooling="avg"):
    """Joint geometry/color pooling: min, max or average of the two scores."""
    if pooling == "min":
        return min(color, geometry)
    if pooling == "max":
        return max(color, geometry)
    if pooling == "avg":
        return (color + geometry) / 2
    raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


_JOINT_NAMES = {"y": "p2d-jgy", "u": "p2d-jgu", "v": "p2d-jgv", "yuv": "p2d-jgc-yuv"}


def p2d_joint(ref, deg, component="y", cfg: MetricConfig = MetricConfig(), k=None,
              ctx=None) -> MetricResult:
    """Fuse P2D-G with a color P2D, both evaluated at the joint K."""
    comp = component.lower()
    if comp not in _JOINT_NAMES:
        raise ValueError(f"component must be Y, U, V or YUV, got {component!r}")
    ctx = _ctx(ref, deg, cfg, ctx)
    kj = cfg.k_joint if k is None else k
    if comp == "yuv":
        color = p2d_yuv(ref, deg, cfg, kj, ctx)
    else:
        color = p2d_color_component(ref, deg, comp, cfg, kj, ctx)
    geom = p2d_geometry(ref, deg, cfg, kj, ctx)
    value = fuse(geom.value, color.value, cfg.fusion_pooling)
    meta = _k_meta(ctx, kj)
    meta["pooling"] = cfg.fusion_pooling
    meta["components"] = {geom.name: geom.value, color.name: color.value}
    return MetricResult(_JOINT_NAMES[comp], value, None, None, "distortion", meta)


def log_p2d(distortion, eps=1e-12) -> float:
    """Quality score ``log10(1 + 1/P2D)``; zero distortion is replaced by ``eps``."""
    d = float(distortion)
    if not d >= 0:
        raise ValueError(f"distortion must be non-negative, got {distortion!r}")
    return math.log10(1.0 + 1.0 / (d if d > 0 else eps))


def _psnr(peak, mse):
    if mse <= 0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def _nn(ctx, direction):
    return ctx.neighbors(direction, 1)[:, 0]


def d1_psnr(ref, deg, peak=None, ctx=None, cfg: MetricConfig = MetricConfig()) -> MetricResult:
    """Point-to-point geometry PSNR over the worse of the two directions.

    ``peak=None`` uses the diagonal of the reference bounding box.
    """
    ctx = _ctx(ref, deg, cfg, ctx)
    if peak is None:
        peak = cfg.d1_peak
    if peak is None:
        peak = float(np.linalg.norm(ref.points.max(axis=0) - ref.points.min(axis=0)))
        if peak <= 0:
            raise ValueError("reference bounding box is degenerate; pass an explicit peak")
    mse = {}
    for direction in ("ab", "ba"):
        src, tgt = ctx._clouds(direction)
        d = src.points - tgt.points[_nn(ctx, direction)]
        mse[direction] = mean_pool(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    worst = max(mse.values())
    return MetricResult(
        "d1-psnr", _psnr(peak, worst), _psnr(peak, mse["ab"]), _psnr(peak, mse["ba"]),
        "quality", {"peak": peak, "mse": worst, "mse_ab": mse["ab"], "mse_ba": mse["ba"]},
    )


def y_psnr(ref, deg, ctx=None, cfg: MetricConfig = MetricConfig()) -> MetricResult:
    """Luma PSNR (peak 255) over nearest-neighbour correspondences, worse direction."""
    ctx = _ctx(ref, deg, cfg, ctx)
    for c in (ref, deg):
        if not c.has_colors:
            raise MissingAttributeError(f"cloud {c.id!r} has no colors")
    mse = {}
    for direction in ("ab", "ba"):
        src, tgt = ctx._clouds(direction)
        diff = ctx.yuv(src).y - ctx.yuv(tgt).y[_nn(ctx, direction)]
        mse[direction] = mean_pool(diff * diff)
    worst = max(mse.values())
    return MetricResult(
        "y-psnr", _psnr(255.0, worst), _psnr(255.0, mse["ab"]), _psnr(255.0, mse["ba"]),
        "quality", {"peak": 255.0, "mse": worst, "mse_ab": mse["ab"], "mse_ba": mse["ba"]},
    )


def _log_variant(base: MetricResult, name, eps):
    meta = dict(base.metadata)
    meta["distortion"] = base.value
    return MetricResult(name, log_p2d(base.value, eps), None, None, "quality", meta)


_REGISTRY = {
    "p2d-g": lambda r, d, c, x: p2d_geometry(r, d, c, ctx=x),
    "p2d-y": lambda r, d, c, x: p2d_color_component(r, d, "y", c, ctx=x),
    "p2d-u": lambda r, d, c, x: p2d_color_component(r, d, "u", c, ctx=x),
    "p2d-v": lambda r, d, c, x: p2d_color_component(r, d, "v", c, ctx=x),
    "p2d-yuv": lambda r, d, c, x: p2d_yuv(r, d, c, ctx=x),
    "p2d-jgy": lambda r, d, c, x: p2d_joint(r, d, "y", c, ctx=x),
    "p2d-jgu": lambda r, d, c, x: p2d_joint(r, d, "u", c, ctx=x),
    "p2d-jgv": lambda r, d, c, x: p2d_joint(r, d, "v", c, ctx=x),
    "p2d-jgc-yuv": lambda r, d, c, x: p2d_joint(r, d, "yuv", c, ctx=x),
    "logp2d-g": lambda r, d, c, x: _log_variant(p2d_geometry(r, d, c, ctx=x),
                                                "logp2d-g", c.logp2d_eps),
    "logp2d-y": lambda r, d, c, x: _log_variant(p2d_color_component(r, d, "y", c, ctx=x),
                                                "logp2d-y", c.logp2d_eps),
    "logp2d-jgy": lambda r, d, c, x: _log_variant(p2d_joint(r, d, "y", c, ctx=x),
                                                  "logp2d-jgy", c.logp2d_eps),
    "d1-psnr": lambda r, d, c, x: d1_psnr(r, d, ctx=x, cfg=c),
    "y-psnr": lambda r, d, c, x: y_psnr(r, d, ctx=x, cfg=c),
}

METRIC_IDS = tuple(_REGISTRY)


def compute_metric(metric_id, ref, deg, cfg: MetricConfig = MetricConfig(),
                   ctx=None) -> MetricResult:
    try:
        fn = _REGISTRY[metric_id]
    except KeyError:
        raise ValueError(f"unknown metric id {metric_id!r}; known: {', '.join(METRIC_IDS)}") from None
    return fn(ref, deg, cfg, _ctx(ref, deg, cfg, ctx))


def compute_metrics(ref, deg, metric_ids, cfg: MetricConfig = MetricConfig(),
                    workers=1) -> dict:
    """Evaluate several metrics on one pair, sharing neighbour searches."""
    ctx = PairContext(ref, deg, cfg.color_matrix, workers=workers)
    return {m: compute_metric(m, ref, deg, cfg, ctx) for m in metric_ids}
