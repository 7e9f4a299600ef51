import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2dqa.cloud import (
    MissingAttributeError,
    PlyError,
    PointCloud,
    load_ply,
    rgb_to_yuv,
    save_ply,
)


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data if isinstance(data, bytes) else data.encode())
    return p


ASCII_ONE = """ply
format ascii 1.0
element vertex 1
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
0 0 0 255 0 0
"""


def test_ascii_single_vertex(tmp_path):
    c = load_ply(write(tmp_path, "one.ply", ASCII_ONE))
    assert len(c) == 1
    np.testing.assert_array_equal(c.points, [[0, 0, 0]])
    np.testing.assert_array_equal(c.colors, [[255, 0, 0]])


def test_binary_without_color(tmp_path):
    pts = np.array([[0, 1, 2], [3, 4, 5], [6.5, 7, 8]], dtype="<f4")
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
              b"property float x\nproperty float y\nproperty float z\nend_header\n")
    c = load_ply(write(tmp_path, "b.ply", header + pts.tobytes()))
    assert not c.has_colors
    np.testing.assert_array_equal(c.points, pts.astype(float))


def test_unknown_properties_skipped(tmp_path):
    text = """ply
format ascii 1.0
comment made by hand
element vertex 2
property double nx
property double x
property double y
property double z
property uchar alpha
end_header
9 1 2 3 7
9 4 5 6 7
"""
    c = load_ply(write(tmp_path, "u.ply", text))
    np.testing.assert_array_equal(c.points, [[1, 2, 3], [4, 5, 6]])
    assert not c.has_colors


def test_binary_skips_extra_props_and_trailing_faces(tmp_path):
    dt = np.dtype([("x", "<f8"), ("q", "<i2"), ("y", "<f8"), ("z", "<f8"),
                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.array([(1.5, 3, 2.5, 3.5, 1, 2, 3)], dtype=dt)
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
              b"property double x\nproperty short q\nproperty double y\nproperty double z\n"
              b"property uchar red\nproperty uchar green\nproperty uchar blue\n"
              b"element face 1\nproperty list uchar int vertex_indices\nend_header\n")
    c = load_ply(write(tmp_path, "f.ply", header + rec.tobytes() + b"\x03" + bytes(12)))
    np.testing.assert_array_equal(c.points, [[1.5, 2.5, 3.5]])
    np.testing.assert_array_equal(c.colors, [[1, 2, 3]])


@pytest.mark.parametrize("text,match", [
    ("plx\nformat ascii 1.0\nend_header\n", "magic"),
    ("ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\n"
     "property float y\nproperty float z\nend_header\n", "unsupported"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n",
     "lacks property 'z'"),
    ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
     "property float z\nend_header\n0 0 0\n", "count mismatch"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
     "property float z\nend_header\n0 0 0\n1 1 1\n", "count mismatch"),
    ("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
     "property float z\n", "end_header"),
])
def test_malformed(tmp_path, text, match):
    with pytest.raises(PlyError, match=match):
        load_ply(write(tmp_path, "bad.ply", text))


def test_nonfinite_ascii_names_line(tmp_path):
    text = ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
            "property float z\nend_header\n0 0 0\n1 nan 1\n")
    with pytest.raises(PlyError, match="line 9"):
        load_ply(write(tmp_path, "nan.ply", text))


def test_nonfinite_binary_names_offset(tmp_path):
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
              b"property float x\nproperty float y\nproperty float z\nend_header\n")
    pts = np.array([[0, 0, 0], [np.inf, 0, 0]], dtype="<f4")
    with pytest.raises(PlyError, match=f"byte offset {len(header) + 12}"):
        load_ply(write(tmp_path, "inf.ply", header + pts.tobytes()))


def test_truncated_binary(tmp_path):
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
              b"property float x\nproperty float y\nproperty float z\nend_header\n")
    with pytest.raises(PlyError, match="count mismatch"):
        load_ply(write(tmp_path, "t.ply", header + bytes(24)))


def test_save_ascii_layout(tmp_path):
    c = PointCloud([[0, 0, 0], [1, 2, 3]])
    p = tmp_path / "a.ply"
    save_ply(c, p, "ascii")
    text = p.read_text()
    head, body = text.split("end_header\n")
    assert "element vertex 2" in head
    assert len(body.strip().splitlines()) == 2


def test_save_binary_record_layout(tmp_path):
    c = PointCloud([[0.5, 1, 2]], [[1, 2, 3]])
    p = tmp_path / "b.ply"
    save_ply(c, p, "binary")
    data = p.read_bytes()
    head, payload = data.split(b"end_header\n")
    assert b"property float x" in head and b"property uchar blue" in head
    assert len(payload) == 3 * 4 + 3


def test_save_empty_path():
    with pytest.raises(OSError):
        save_ply(PointCloud([[0, 0, 0]]), "")


def test_double_precision_chosen_when_needed(tmp_path):
    c = PointCloud([[0.1, 0.2, 0.3]])
    p = tmp_path / "d.ply"
    save_ply(c, p, "binary")
    assert b"property double x" in p.read_bytes()
    assert load_ply(p).same_as(c)


coords = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(
    pts=st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=20),
    fmt=st.sampled_from(["ascii", "binary"]),
    colored=st.booleans(),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip(tmp_path_factory, pts, fmt, colored, seed):
    rng = np.random.default_rng(seed)
    cols = rng.integers(0, 256, (len(pts), 3)) if colored else None
    c = PointCloud(pts, cols)
    p = tmp_path_factory.mktemp("rt") / "c.ply"
    save_ply(c, p, fmt)
    back = load_ply(p)
    np.testing.assert_array_equal(back.points, c.points)
    assert back.same_as(c)


def test_pointcloud_invariants():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], [[0, 0, 256]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], [[0, 0]])
    c = PointCloud([[0, 0, 0]], [[1, 2, 3]])
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_duplicates_preserved(tmp_path):
    c = PointCloud([[1, 1, 1]] * 4)
    p = tmp_path / "dup.ply"
    save_ply(c, p)
    assert len(load_ply(p)) == 4


def test_yuv_black_white_red():
    c = PointCloud([[0, 0, 0]] * 3, [[0, 0, 0], [255, 255, 255], [255, 0, 0]])
    yuv = rgb_to_yuv(c)
    assert (yuv.y[0], yuv.u[0], yuv.v[0]) == (0.0, 128.0, 128.0)
    assert yuv.y[1] == pytest.approx(255.0, abs=1e-9)
    assert yuv.u[1] == pytest.approx(128.0, abs=1e-9)
    assert yuv.v[1] == pytest.approx(128.0, abs=1e-9)
    # 0.2126 * 255 evaluated by hand
    assert round(yuv.y[2], 3) == 54.213


def test_yuv_bt601_red():
    c = PointCloud([[0, 0, 0]], [[255, 0, 0]])
    assert round(rgb_to_yuv(c, "bt601").y[0], 3) == 76.245


def test_yuv_needs_colors():
    with pytest.raises(MissingAttributeError):
        rgb_to_yuv(PointCloud([[0, 0, 0]]))


@given(st.integers(0, 255), st.sampled_from(["bt709", "bt601"]))
def test_gray_is_neutral(v, matrix):
    yuv = rgb_to_yuv(PointCloud([[0, 0, 0]], [[v, v, v]]), matrix)
    assert yuv.y[0] == pytest.approx(v, abs=1e-9)
    assert yuv.u[0] == pytest.approx(128, abs=1e-9)
    assert yuv.v[0] == pytest.approx(128, abs=1e-9)


def test_yuv_range_exhaustive_corners_and_random():
    rng = np.random.default_rng(3)
    corners = np.array([[r, g, b] for r in (0, 255) for g in (0, 255) for b in (0, 255)])
    cols = np.vstack([corners, rng.integers(0, 256, (5000, 3))])
    for m in ("bt709", "bt601"):
        yuv = rgb_to_yuv(PointCloud(np.zeros((len(cols), 3)), cols), m)
        for ch in (yuv.y, yuv.u, yuv.v):
            assert ch.min() >= 0 and ch.max() <= 255
