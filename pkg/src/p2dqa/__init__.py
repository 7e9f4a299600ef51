"""Point-to-distribution (P2D) quality metrics for colored point clouds."""

from ._accel import get_backend, set_backend
from .cloud import (
    MissingAttributeError,
    PlyError,
    PointCloud,
    YuvChannels,
    load_ply,
    rgb_to_yuv,
    save_ply,
)
from .knn import KnnIndex, build_index, knn_query
from .metrics import (
    METRIC_IDS,
    MetricConfig,
    MetricResult,
    compute_metric,
    compute_metrics,
    d1_psnr,
    log_p2d,
    p2d_color_component,
    p2d_geometry,
    p2d_joint,
    p2d_yuv,
    y_psnr,
)
from .p2d import DegenerateParams, directed_p2d

__version__ = "0.1.0"
