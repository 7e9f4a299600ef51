import numpy as np
import pytest

from p2dqa import _accel
from p2dqa.cloud import PointCloud

BACKENDS = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


def random_pair(seed, n_max=100, n_min=30):
    rng = np.random.default_rng(seed)
    na, nb = rng.integers(n_min, n_max + 1, size=2)
    a = PointCloud(rng.random((na, 3)), rng.integers(0, 256, (na, 3)), f"a{seed}")
    b = PointCloud(rng.random((nb, 3)), rng.integers(0, 256, (nb, 3)), f"b{seed}")
    return a, b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def build_manifest(directory, codecs=None, n=600, seed=3, fmt="binary"):
    """Write a synthetic reference plus degraded clouds and a manifest.

    ``codecs`` maps codec tag -> (kind, magnitudes).
    """
    import os

    from p2dqa.benchmark import StimulusRecord, write_manifest
    from p2dqa.cloud import save_ply
    from p2dqa.synth import DegradationSpec, degrade, make_cloud, pseudo_mos

    if codecs is None:
        codecs = {"color": ("color-gaussian", (2, 5, 10)),
                  "geom": ("geometry-gaussian", (0.005, 0.01, 0.02))}
    directory = str(directory)
    ref = make_cloud("sphere", n, "gradient", seed)
    save_ply(ref, os.path.join(directory, "ref.ply"), fmt)
    records = []
    for tag, (kind, mags) in codecs.items():
        for m in mags:
            spec = DegradationSpec(kind, m, seed + 1)
            name = f"{tag}_{m:g}.ply"
            save_ply(degrade(ref, spec), os.path.join(directory, name), fmt)
            records.append(StimulusRecord("ref.ply", name, pseudo_mos(spec), tag, "sphere"))
    path = os.path.join(directory, "manifest.csv")
    write_manifest(path, records)
    return path
