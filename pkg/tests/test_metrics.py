import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from p2dqa.cloud import MissingAttributeError, PointCloud
from p2dqa.metrics import (
    METRIC_IDS,
    MetricConfig,
    PairContext,
    compute_metric,
    compute_metrics,
    d1_psnr,
    fuse,
    log_p2d,
    p2d_color_component,
    p2d_geometry,
    p2d_joint,
    p2d_yuv,
    y_psnr,
)
from p2dqa.synth import DegradationSpec, degrade, make_cloud

import oracle
from conftest import random_pair


def test_stable_metric_ids():
    for m in ("p2d-g", "p2d-y", "p2d-u", "p2d-v", "p2d-yuv", "p2d-jgy", "p2d-jgc-yuv",
              "logp2d-g", "logp2d-y", "logp2d-jgy", "d1-psnr", "y-psnr"):
        assert m in METRIC_IDS


def test_config_defaults_and_validation():
    cfg = MetricConfig()
    assert (cfg.k_geometry, cfg.k_color, cfg.k_joint) == (40, 15, 25)
    assert cfg.fusion_pooling == "avg"
    assert sum(cfg.yuv_weights) == 1.0
    for bad in (dict(k_color=0), dict(fusion_pooling="median"), dict(yuv_weights=(1, 1, 1)),
                dict(color_matrix="srgb"), dict(logp2d_eps=0)):
        with pytest.raises(ValueError):
            MetricConfig(**bad)


def test_constant_color_self_is_zero(backend):
    c = make_cloud("sphere", 300, "constant", 1)
    for comp in "yuv":
        assert p2d_color_component(c, c, comp).value == 0.0


def test_directed_max_pooling():
    c = make_cloud("sphere", 200, "noise", 3)
    d = degrade(c, DegradationSpec("subsample", 0.5, 4))
    r = p2d_color_component(c, d, "y")
    assert r.value == max(r.directed_ab, r.directed_ba)
    assert r.directed_ab != r.directed_ba


@pytest.mark.parametrize("seed", range(2))
def test_color_component_oracle(seed):
    a, b = random_pair(seed + 100, n_max=50, n_min=50)
    cfg = MetricConfig(k_color=5)
    for comp in "yuv":
        got = p2d_color_component(a, b, comp, cfg).value
        assert got == pytest.approx(oracle.p2d_color(a.points, a.colors, b.points, b.colors,
                                                     comp, 5), rel=1e-9)


def test_yuv_weighting():
    ctx_vals = {"y": 8.0, "u": 4.0, "v": 4.0}
    assert (6 * ctx_vals["y"] + ctx_vals["u"] + ctx_vals["v"]) / 8 == 7.0
    a, b = random_pair(5)
    cfg = MetricConfig()
    r = p2d_yuv(a, b, cfg)
    parts = [p2d_color_component(a, b, c, cfg).value for c in "yuv"]
    assert r.value == (6 * parts[0] + parts[1] + parts[2]) / 8
    c = make_cloud("plane", 100, "constant", 0)
    assert p2d_yuv(c, c).value == 0.0


def test_fuse():
    assert fuse(2, 4, "avg") == 3
    assert fuse(2, 4, "max") == 4
    assert fuse(2, 4, "min") == 2
    for p in ("min", "max", "avg"):
        assert fuse(0.0, 0.0, p) == 0.0
    with pytest.raises(ValueError):
        fuse(1, 2, "median")


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_fusion_bounds(g, c):
    assert fuse(g, c, "min") <= fuse(g, c, "avg") <= fuse(g, c, "max")


def test_joint_uses_joint_k_for_both_terms():
    a, b = random_pair(6)
    cfg = MetricConfig()
    j = p2d_joint(a, b, "y", cfg)
    g = p2d_geometry(a, b, cfg, k=25).value
    y = p2d_color_component(a, b, "y", cfg, k=25).value
    assert j.value == (g + y) / 2
    assert j.name == "p2d-jgy"
    assert p2d_joint(a, b, "yuv", cfg).name == "p2d-jgc-yuv"


def test_joint_missing_colors():
    a = make_cloud("sphere", 50, "constant", 0)
    bare = PointCloud(a.points)
    with pytest.raises(MissingAttributeError):
        p2d_joint(bare, bare)
    with pytest.raises(MissingAttributeError):
        y_psnr(bare, bare)


def test_geometry_self_small_and_symmetric(backend):
    g = np.array([[x, y, 0.0] for x in range(8) for y in range(8)], dtype=float)
    h = g + np.array([0.5, 0.5, 0.0])
    a = PointCloud(np.vstack([g, h]))
    r = p2d_geometry(a, a)
    assert r.value >= 0
    assert r.value == p2d_geometry(a, a).value
    assert r.directed_ab == r.directed_ba


def test_geometry_translation_increases():
    a = make_cloud("sphere", 300, "constant", 2)
    far = a.with_points(a.points + np.array([5.0, 0, 0]))
    self_val = p2d_geometry(a, a).value
    moved = p2d_geometry(a, far).value
    assert moved > self_val
    assert self_val == pytest.approx(oracle.p2d_geometry(a.points, a.points, 40), rel=1e-9)


def test_geometry_scale_invariance():
    a, b = random_pair(8)
    base = p2d_geometry(a, b).value
    big = p2d_geometry(a.with_points(a.points * 1000), b.with_points(b.points * 1000)).value
    assert big == pytest.approx(base, rel=1e-9)


def test_color_rigid_motion_invariance():
    a, b = random_pair(9)
    rot, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    t = np.array([3.0, -2.0, 10.0])
    move = lambda c: c.with_points(c.points @ rot.T + t)
    for comp in "yuv":
        base = p2d_color_component(a, b, comp).value
        assert p2d_color_component(move(a), move(b), comp).value == pytest.approx(base, rel=1e-9)


def test_log_p2d():
    assert log_p2d(1) == pytest.approx(0.30103, abs=1e-5)
    assert log_p2d(0.1) == pytest.approx(1.04139, abs=1e-5)
    assert log_p2d(0) == pytest.approx(12.0, abs=1e-9)
    with pytest.raises(ValueError):
        log_p2d(-1e-3)


@given(st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=30, unique=True))
def test_log_p2d_reverses_order(xs):
    xs = sorted(xs)
    ys = [log_p2d(x) for x in xs]
    assert all(u >= v for u, v in zip(ys, ys[1:]))


def test_d1_psnr():
    a = make_cloud("sphere", 200, "gradient", 0)
    assert d1_psnr(a, a).value == 100.0
    p = PointCloud([[0, 0, 0]])
    q = PointCloud([[0.3, 0, 0]])
    assert d1_psnr(p, q, peak=2.0).value == pytest.approx(10 * math.log10(4 / 0.09), rel=1e-12)


def test_d1_psnr_oracle():
    a, b = random_pair(10)
    r = d1_psnr(a, b)
    mse = max(oracle.nn_mse(a.points, b.points), oracle.nn_mse(b.points, a.points))
    assert r.metadata["mse"] == pytest.approx(mse, rel=1e-9)
    peak = np.linalg.norm(a.points.max(0) - a.points.min(0))
    assert r.value == pytest.approx(10 * math.log10(peak ** 2 / mse), rel=1e-12)


def test_y_psnr():
    a = make_cloud("sphere", 200, "noise", 0)
    assert y_psnr(a, a).value == 100.0
    p = PointCloud([[0, 0, 0]], [[100, 100, 100]])
    q = PointCloud([[0, 0, 0]], [[110, 110, 110]])
    assert y_psnr(p, q).value == pytest.approx(10 * math.log10(255 ** 2 / 100), rel=1e-9)
    assert round(y_psnr(p, q).value, 2) == 28.13


def test_y_psnr_oracle():
    a, b = random_pair(11)
    ya, yb = oracle.channels(a.colors)["y"], oracle.channels(b.colors)["y"]

    def mse(sp, sy, tp, ty):
        return math.fsum((sy[i] - ty[oracle.knn(tp, p, 1)[0][0]]) ** 2
                         for i, p in enumerate(sp)) / len(sp)

    m = max(mse(a.points, ya, b.points, yb), mse(b.points, yb, a.points, ya))
    assert y_psnr(a, b).metadata["mse"] == pytest.approx(m, rel=1e-9)


def test_k_truncation_warning():
    a = make_cloud("sphere", 10, "gradient", 0)
    b = make_cloud("sphere", 12, "gradient", 1)
    r = p2d_geometry(a, b)
    assert r.metadata["k_used"] == {"ab": 12, "ba": 10}
    assert len(r.metadata["warnings"]) == 2
    assert r.value == p2d_geometry(a, b, k=12).value


def test_monotone_luma_noise():
    a = make_cloud("sphere", 3000, "gradient", 7)
    vals = [p2d_color_component(a, degrade(a, DegradationSpec("color-gaussian", s, 8)), "y").value
            for s in (2, 5, 10, 20)]
    assert all(u < v for u, v in zip(vals, vals[1:]))


def test_compute_metrics_shares_context():
    a, b = random_pair(12)
    res = compute_metrics(a, b, METRIC_IDS)
    for m in METRIC_IDS:
        assert res[m].value == compute_metric(m, a, b).value
    with pytest.raises(ValueError):
        compute_metric("p2d-x", a, b)


def test_context_mismatch_rejected():
    a, b = random_pair(13)
    ctx = PairContext(a, b)
    with pytest.raises(ValueError):
        p2d_geometry(b, a, ctx=ctx)
