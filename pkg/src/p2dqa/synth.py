"""Seeded synthetic clouds and controlled degradations.

All randomness comes from ``numpy.random.Generator(PCG64(seed))``; the bit
generator is fixed so outputs stay stable across platforms and releases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud

__all__ = ["DegradationSpec", "make_cloud", "degrade", "pseudo_mos", "RNG_ALGORITHM",
           "SHAPES", "COLOR_PATTERNS", "DEGRADATIONS"]

RNG_ALGORITHM = "PCG64"
SHAPES = ("sphere", "plane", "cube-grid")
COLOR_PATTERNS = ("constant", "gradient", "noise")
DEGRADATIONS = ("geometry-gaussian", "color-gaussian", "subsample", "color-quantize")


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def make_cloud(shape="sphere", n=1000, color="gradient", seed=0, value=128,
               cloud_id=None) -> PointCloud:
    """Build a synthetic cloud.

    sphere: uniform on the unit sphere; plane: uniform on the unit square at
    z = 0; cube-grid: the first ``n`` nodes (x fastest) of the smallest regular
    grid on the unit cube holding ``n`` nodes.  Colors are a constant gray
    ``value``, a position gradient (x, y, z to R, G, B over the bounding box)
    or uniform random bytes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    if shape == "sphere":
        p = rng.standard_normal((n, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
    elif shape == "plane":
        p = np.column_stack([rng.random((n, 2)), np.zeros(n)])
    elif shape == "cube-grid":
        m = 2
        while m ** 3 < n:
            m += 1
        axis = np.linspace(0.0, 1.0, m)
        z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
        p = np.column_stack([x.ravel(), y.ravel(), z.ravel()])[:n]
    else:
        raise ValueError(f"shape must be one of {SHAPES}, got {shape!r}")

    if color == "constant":
        if not 0 <= value <= 255:
            raise ValueError("constant color value must lie in [0, 255]")
        c = np.full((n, 3), int(value), dtype=np.uint8)
    elif color == "gradient":
        lo, hi = p.min(axis=0), p.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        c = np.rint((p - lo) / span * 255.0).astype(np.uint8)
    elif color == "noise":
        c = rng.integers(0, 256, size=(n, 3), dtype=np.uint8)
    else:
        raise ValueError(f"color must be one of {COLOR_PATTERNS}, got {color!r}")
    return PointCloud(p, c, cloud_id or f"{shape}-{n}-{color}-{seed}")


@dataclass(frozen=True)
class DegradationSpec:
    """``magnitude`` is sigma (spatial units or color levels) for the gaussian
    kinds, the keep-fraction for ``subsample`` and the number of levels per
    component for ``color-quantize``.  A magnitude of 0 means no degradation
    for every kind."""

    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATIONS:
            raise ValueError(f"kind must be one of {DEGRADATIONS}, got {self.kind!r}")
        if not (self.magnitude >= 0 and math.isfinite(self.magnitude)):
            raise ValueError("magnitude must be finite and >= 0")
        if self.kind == "subsample" and self.magnitude > 1:
            raise ValueError("subsample keep-fraction must lie in (0, 1]")
        if self.kind == "color-quantize" and 0 < self.magnitude < 2:
            raise ValueError("color-quantize needs at least 2 levels")

    @classmethod
    def parse(cls, text, seed=0):
        """``"kind:magnitude"``, e.g. ``"color-gaussian:5"``."""
        kind, sep, mag = text.partition(":")
        if not sep:
            raise ValueError(f"degradation must look like KIND:MAG, got {text!r}")
        return cls(kind.strip(), float(mag), seed)


def degrade(cloud: PointCloud, spec: DegradationSpec) -> PointCloud:
    if spec.magnitude == 0:
        return cloud
    rng = _rng(spec.seed)
    cid = f"{cloud.id}~{spec.kind}:{spec.magnitude:g}"
    if spec.kind == "geometry-gaussian":
        noisy = cloud.points + rng.normal(0.0, spec.magnitude, cloud.points.shape)
        return PointCloud(noisy, cloud.colors, cid)
    if spec.kind == "subsample":
        n = len(cloud)
        keep = max(1, int(round(spec.magnitude * n)))
        if keep >= n:
            return cloud
        idx = np.sort(rng.choice(n, size=keep, replace=False))
        cols = None if cloud.colors is None else cloud.colors[idx]
        return PointCloud(cloud.points[idx], cols, cid)
    if cloud.colors is None:
        raise ValueError(f"{spec.kind} needs a colored cloud")
    c = cloud.colors.astype(np.float64)
    if spec.kind == "color-gaussian":
        c = c + rng.normal(0.0, spec.magnitude, c.shape)
        c = np.clip(np.rint(c), 0, 255)
    else:
        step = 255.0 / (int(spec.magnitude) - 1)
        c = np.clip(np.rint(np.rint(c / step) * step), 0, 255)
    return PointCloud(cloud.points, c.astype(np.uint8), cid)


def pseudo_mos(spec: DegradationSpec) -> float:
    """Monotone stand-in for subjective scores, in (0, 5].

    Gaussian kinds: ``5 / (1 + magnitude)``; subsample: ``5 * fraction``;
    quantize: ``5 * (1 - 1 / levels)``.  Magnitude 0 always gives 5.
    """
    m = spec.magnitude
    if m == 0:
        return 5.0
    if spec.kind == "subsample":
        return 5.0 * m
    if spec.kind == "color-quantize":
        return 5.0 * (1.0 - 1.0 / m)
    return 5.0 / (1.0 + m)
