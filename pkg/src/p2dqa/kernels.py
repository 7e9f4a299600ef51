"""Per-point neighbourhood kernels, numba and numpy flavours.

Both flavours compute the same quantities for every source point ``i`` with
neighbour rows ``nbr[i]`` (indices into the target arrays):

* color:    standardized distance of ``src[i]`` to the population mean and
            variance of ``tgt[nbr[i]]``;
* geometry: Mahalanobis distance of ``src[i]`` to the population mean and
            covariance of ``tgt[nbr[i]]``, with eigenvalues floored at
            ``floor_rel * max(lambda_max, eps_abs)`` and the result capped.

Neighbourhood values are shifted by their first member before the moments
are taken.  Identical members therefore give exactly zero spread, and a query
equal to them gives exactly zero deviation.
"""

import math

import numpy as np

from . import _accel
from ._accel import njit, prange

__all__ = ["color_distances", "geometry_distances"]

_CHUNK = 16384


# ---------------------------------------------------------------- numba ----

@njit(parallel=True, cache=True, nogil=True)
def _color_nb(src, tgt, nbr, cmax):
    n, k = nbr.shape
    out = np.empty(n)
    for i in prange(n):
        x0 = tgt[nbr[i, 0]]
        s = 0.0
        for j in range(k):
            s += tgt[nbr[i, j]] - x0
        m = s / k
        ss = 0.0
        for j in range(k):
            c = tgt[nbr[i, j]] - x0 - m
            ss += c * c
        var = ss / k
        delta = (src[i] - x0) - m
        if var > 0.0:
            out[i] = math.sqrt(delta * delta / var)
        elif delta == 0.0:
            out[i] = 0.0
        else:
            out[i] = cmax
    return out


@njit(parallel=True, cache=True, nogil=True)
def _geometry_nb(src, tgt, nbr, floor_rel, eps_abs, gmax):
    n, k = nbr.shape
    out = np.empty(n)
    for i in prange(n):
        j0 = nbr[i, 0]
        m0 = 0.0
        m1 = 0.0
        m2 = 0.0
        for j in range(k):
            p = nbr[i, j]
            m0 += tgt[p, 0] - tgt[j0, 0]
            m1 += tgt[p, 1] - tgt[j0, 1]
            m2 += tgt[p, 2] - tgt[j0, 2]
        m0 /= k
        m1 /= k
        m2 /= k
        cov = np.zeros((3, 3))
        for j in range(k):
            p = nbr[i, j]
            c0 = tgt[p, 0] - tgt[j0, 0] - m0
            c1 = tgt[p, 1] - tgt[j0, 1] - m1
            c2 = tgt[p, 2] - tgt[j0, 2] - m2
            cov[0, 0] += c0 * c0
            cov[0, 1] += c0 * c1
            cov[0, 2] += c0 * c2
            cov[1, 1] += c1 * c1
            cov[1, 2] += c1 * c2
            cov[2, 2] += c2 * c2
        cov[1, 0] = cov[0, 1]
        cov[2, 0] = cov[0, 2]
        cov[2, 1] = cov[1, 2]
        cov /= k
        w, v = np.linalg.eigh(cov)
        lmax = max(w[2], 0.0)
        floor = floor_rel * max(lmax, eps_abs)
        d0 = (src[i, 0] - tgt[j0, 0]) - m0
        d1 = (src[i, 1] - tgt[j0, 1]) - m1
        d2 = (src[i, 2] - tgt[j0, 2]) - m2
        acc = 0.0
        for l in range(3):
            y = v[0, l] * d0 + v[1, l] * d1 + v[2, l] * d2
            acc += y * y / max(w[l], floor)
        out[i] = min(math.sqrt(acc), gmax)
    return out


# ---------------------------------------------------------------- numpy ----

def _color_np(src, tgt, nbr, cmax):
    out = np.empty(nbr.shape[0])
    for lo in range(0, nbr.shape[0], _CHUNK):
        rows = nbr[lo:lo + _CHUNK]
        vals = tgt[rows]
        x0 = vals[:, :1]
        c = vals - x0
        m = c.mean(axis=1)
        var = ((c - m[:, None]) ** 2).mean(axis=1)
        delta = (src[lo:lo + _CHUNK] - x0[:, 0]) - m
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.sqrt(delta * delta / var)
        flat = var <= 0.0
        d[flat] = np.where(delta[flat] == 0.0, 0.0, cmax)
        out[lo:lo + _CHUNK] = d
    return out


def _geometry_np(src, tgt, nbr, floor_rel, eps_abs, gmax):
    out = np.empty(nbr.shape[0])
    k = nbr.shape[1]
    for lo in range(0, nbr.shape[0], _CHUNK):
        rows = nbr[lo:lo + _CHUNK]
        pts = tgt[rows]
        x0 = pts[:, 0, :]
        c = pts - x0[:, None, :]
        m = c.sum(axis=1) / k
        dev = c - m[:, None, :]
        cov = np.einsum("nka,nkb->nab", dev, dev) / k
        w, v = np.linalg.eigh(cov)
        lmax = np.maximum(w[:, 2], 0.0)
        floor = floor_rel * np.maximum(lmax, eps_abs)
        lam = np.maximum(w, floor[:, None])
        delta = (src[lo:lo + _CHUNK] - x0) - m
        y = np.einsum("nab,na->nb", v, delta)
        out[lo:lo + _CHUNK] = np.minimum(np.sqrt((y * y / lam).sum(axis=1)), gmax)
    return out


# ------------------------------------------------------------- dispatch ----

def _prep(src, tgt, nbr):
    return (
        np.ascontiguousarray(src, dtype=np.float64),
        np.ascontiguousarray(tgt, dtype=np.float64),
        np.ascontiguousarray(nbr, dtype=np.int64),
    )


def color_distances(src, tgt, nbr, cmax=255.0):
    """Per-source-point standardized color distances, shape (len(src),)."""
    src, tgt, nbr = _prep(src, tgt, nbr)
    if _accel.get_backend() == "numba":
        with _accel.launch_lock:
            return _color_nb(src, tgt, nbr, float(cmax))
    return _color_np(src, tgt, nbr, float(cmax))


def geometry_distances(src, tgt, nbr, floor_rel=1e-9, eps_abs=1e-30, gmax=1e6):
    """Per-source-point Mahalanobis distances, shape (len(src),)."""
    src, tgt, nbr = _prep(src, tgt, nbr)
    args = (float(floor_rel), float(eps_abs), float(gmax))
    if _accel.get_backend() == "numba":
        with _accel.launch_lock:
            return _geometry_nb(src, tgt, nbr, *args)
    return _geometry_np(src, tgt, nbr, *args)
