# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled data-side kernels.

Mirrors :mod:`shiftmem._pykernels` one function at a time; the two must
agree to floating-point summation order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log2, exp, ceil, floor

cnp.import_array()


def entropy_batch(const double[:, ::1] gray, int bins):
    """Histogram entropy in bits of each row of ``gray`` (values in [0, 1])."""
    cdef Py_ssize_t n = gray.shape[0], m = gray.shape[1]
    cdef Py_ssize_t i, j, b
    cdef long idx
    cdef double p, h, inv = 1.0 / m
    cdef long[::1] counts = np.zeros(bins, dtype=np.int_)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            for b in range(bins):
                counts[b] = 0
            for j in range(m):
                idx = <long>floor(gray[i, j] * bins)
                if idx >= bins:
                    idx = bins - 1
                elif idx < 0:
                    idx = 0
                counts[idx] += 1
            h = 0.0
            for b in range(bins):
                if counts[b] > 0:
                    p = counts[b] * inv
                    h = h - p * log2(p)
            res[i] = h
    return out


def shift_batch(const double[:, :, :, ::1] patches, const long[::1] dy, const long[::1] dx):
    """Translate each s x s x C patch by (dy, dx) with zero fill.

    Returns the shifted patches and a uint8 mask of non-vacated pixels.
    """
    cdef Py_ssize_t n = patches.shape[0], h = patches.shape[1]
    cdef Py_ssize_t w = patches.shape[2], c = patches.shape[3]
    cdef Py_ssize_t i, r, col, ch, sr, sc
    out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    valid_arr = np.zeros((n, h, w), dtype=np.uint8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, ::1] valid = valid_arr
    with nogil:
        for i in range(n):
            for r in range(h):
                sr = r - dy[i]
                if sr < 0 or sr >= h:
                    continue
                for col in range(w):
                    sc = col - dx[i]
                    if sc < 0 or sc >= w:
                        continue
                    valid[i, r, col] = 1
                    for ch in range(c):
                        out[i, r, col, ch] = patches[i, sr, sc, ch]
    return out_arr, valid_arr


cdef inline Py_ssize_t _reflect(Py_ssize_t k, Py_ssize_t n) nogil:
    # d c b | a b c d | c b a ; requires |overhang| < n
    if k < 0:
        return -k
    if k >= n:
        return 2 * n - 2 - k
    return k


def blur_batch(const double[:, :, :, ::1] patches, const double[::1] sigma):
    """Separable Gaussian blur per patch; ``sigma <= 0`` leaves a patch untouched."""
    cdef Py_ssize_t n = patches.shape[0], h = patches.shape[1]
    cdef Py_ssize_t w = patches.shape[2], c = patches.shape[3]
    cdef Py_ssize_t i, r, col, ch, k, radius, maxr = min(h, w) - 1
    cdef double s, acc, norm
    out_arr = np.array(patches, dtype=np.float64, copy=True)
    tmp_arr = np.empty((h, w, c), dtype=np.float64)
    wts_arr = np.empty(2 * maxr + 1, dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[::1] wts = wts_arr
    with nogil:
        for i in range(n):
            s = sigma[i]
            if s <= 0:
                continue
            radius = <Py_ssize_t>ceil(3.0 * s)
            if radius > maxr:
                radius = maxr
            norm = 0.0
            for k in range(-radius, radius + 1):
                wts[k + radius] = exp(-0.5 * k * k / (s * s))
                norm = norm + wts[k + radius]
            for k in range(2 * radius + 1):
                wts[k] = wts[k] / norm
            # rows pass into tmp, columns pass back into out
            for r in range(h):
                for col in range(w):
                    for ch in range(c):
                        acc = 0.0
                        for k in range(-radius, radius + 1):
                            acc = acc + wts[k + radius] * patches[i, r, _reflect(col + k, w), ch]
                        tmp[r, col, ch] = acc
            for r in range(h):
                for col in range(w):
                    for ch in range(c):
                        acc = 0.0
                        for k in range(-radius, radius + 1):
                            acc = acc + wts[k + radius] * tmp[_reflect(r + k, h), col, ch]
                        out[i, r, col, ch] = acc
    return out_arr
