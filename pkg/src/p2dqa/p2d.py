"""Neighbourhood statistics and point-to-distribution distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud import MissingAttributeError, PointCloud, rgb_to_yuv
from .knn import KnnIndex

__all__ = [
    "DegenerateParams",
    "NeighborhoodColorStats",
    "NeighborhoodGeomStats",
    "color_stats",
    "geom_stats",
    "color_point_distance",
    "geom_point_distance",
    "point_distances",
    "mean_pool",
    "directed_p2d",
]


@dataclass(frozen=True)
class DegenerateParams:
    """Rules for zero-spread neighbourhoods.

    eigenvalue_floor_rel
        Covariance eigenvalues are clamped to ``eigenvalue_floor_rel *
        max(lambda_max, eps_abs)`` before inversion.
    color_max_distance
        Color distance reported when a neighbourhood has zero variance and
        the query value differs from its mean (255 for 8-bit color).
    geom_fallback
        ``"cap"``: geometry distances are limited to ``geom_max_distance``.
    """

    eigenvalue_floor_rel: float = 1e-9
    eps_abs: float = 1e-30
    color_max_distance: float = 255.0
    geom_max_distance: float = 1e6
    geom_fallback: str = "cap"

    def __post_init__(self):
        if not self.eigenvalue_floor_rel > 0:
            raise ValueError("eigenvalue_floor_rel must be positive")
        if not self.eps_abs > 0:
            raise ValueError("eps_abs must be positive")
        if not self.color_max_distance > 0 or not self.geom_max_distance > 0:
            raise ValueError("maximum distances must be positive")
        if self.geom_fallback != "cap":
            raise ValueError(f"unknown geom_fallback policy {self.geom_fallback!r}")


@dataclass(frozen=True)
class NeighborhoodColorStats:
    mean: float
    variance: float
    k_actual: int


@dataclass(frozen=True)
class NeighborhoodGeomStats:
    mean: np.ndarray
    covariance: np.ndarray
    k_actual: int


def color_stats(values) -> NeighborhoodColorStats:
    """Population mean and variance of one color component."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("color_stats needs at least one value")
    x0 = v[0]
    c = v - x0
    m = c.mean()
    var = float(((c - m) ** 2).mean())
    return NeighborhoodColorStats(float(x0 + m), var, int(v.size))


def geom_stats(positions) -> NeighborhoodGeomStats:
    """Mean vector and population (divide-by-K) covariance of 3D positions."""
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if p.shape[0] == 0:
        raise ValueError("geom_stats needs at least one position")
    x0 = p[0]
    c = p - x0
    m = c.mean(axis=0)
    dev = c - m
    cov = dev.T @ dev / p.shape[0]
    cov = 0.5 * (cov + cov.T)
    return NeighborhoodGeomStats(x0 + m, cov, p.shape[0])


def color_point_distance(value, stats: NeighborhoodColorStats,
                         params: DegenerateParams = DegenerateParams()) -> float:
    delta = float(value) - stats.mean
    if stats.variance > 0:
        return math.sqrt(delta * delta / stats.variance)
    return 0.0 if delta == 0 else float(params.color_max_distance)


def geom_point_distance(point, stats: NeighborhoodGeomStats,
                        params: DegenerateParams = DegenerateParams()) -> float:
    delta = np.asarray(point, dtype=np.float64) - stats.mean
    w, v = np.linalg.eigh(stats.covariance)
    floor = params.eigenvalue_floor_rel * max(max(w[-1], 0.0), params.eps_abs)
    y = v.T @ delta
    d = math.sqrt(float(np.sum(y * y / np.maximum(w, floor))))
    return min(d, params.geom_max_distance)


def point_distances(source_values, target_values, neighbors, mode,
                    params: DegenerateParams = DegenerateParams()):
    """Per-point P2D distances given precomputed neighbour rows.

    ``mode`` is ``"geometry"`` (values are (N, 3) positions) or ``"color"``
    (values are one real channel per point).
    """
    if mode == "geometry":
        return kernels.geometry_distances(
            source_values, target_values, neighbors,
            params.eigenvalue_floor_rel, params.eps_abs, params.geom_max_distance,
        )
    if mode == "color":
        return kernels.color_distances(
            source_values, target_values, neighbors, params.color_max_distance
        )
    raise ValueError(f"mode must be 'geometry' or 'color', got {mode!r}")


def mean_pool(per_point) -> float:
    """Average with exactly rounded summation, independent of evaluation order."""
    per_point = np.asarray(per_point, dtype=np.float64)
    if per_point.size == 0:
        raise ValueError("cannot pool an empty set of distances")
    return math.fsum(per_point.tolist()) / per_point.size


def directed_p2d(source: PointCloud, target: PointCloud, mode: str, k: int,
                 params: DegenerateParams = DegenerateParams(),
                 index: KnnIndex | None = None, color_matrix: str = "bt709") -> float:
    """Average P2D distance from every point of ``source`` to ``target``.

    ``mode`` is ``"geometry"`` or one of ``"y"``, ``"u"``, ``"v"``.  Each
    source point is compared with the distribution of its ``k`` nearest
    neighbours in ``target`` (all of ``target`` if it is smaller than ``k``).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index is None:
        index = KnnIndex(target.points)
    nbr, _ = index.query(source.points, k)
    if mode == "geometry":
        d = point_distances(source.points, target.points, nbr, "geometry", params)
    elif mode in ("y", "u", "v"):
        for c in (source, target):
            if not c.has_colors:
                raise MissingAttributeError(f"cloud {c.id!r} has no colors")
        src = rgb_to_yuv(source, color_matrix).channel(mode)
        tgt = rgb_to_yuv(target, color_matrix).channel(mode)
        d = point_distances(src, tgt, nbr, "color", params)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return mean_pool(d)
