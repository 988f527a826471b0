"""Pure-numpy versions of the data-side kernels.

Same signatures and semantics as the compiled ``_ckernels`` module. Used
when the extension is not built or ``SHIFTMEM_PURE_PYTHON=1`` is set.
"""
import numpy as np


def entropy_batch(gray, bins):
    """Histogram entropy in bits of each row of ``gray`` (values in [0, 1])."""
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    n, m = gray.shape
    idx = np.clip(np.floor(gray * bins), 0, bins - 1).astype(np.int64)
    flat = (idx + (np.arange(n, dtype=np.int64) * bins)[:, None]).ravel()
    counts = np.bincount(flat, minlength=n * bins).reshape(n, bins)
    p = counts / m
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=1)


def shift_batch(patches, dy, dx):
    """Translate each s x s x C patch by (dy, dx) with zero fill."""
    patches = np.ascontiguousarray(patches, dtype=np.float64)
    n, h, w, _ = patches.shape
    dy = np.asarray(dy, dtype=np.int64)
    dx = np.asarray(dx, dtype=np.int64)
    src_r = np.arange(h)[None, :] - dy[:, None]
    src_c = np.arange(w)[None, :] - dx[:, None]
    ok_r = (src_r >= 0) & (src_r < h)
    ok_c = (src_c >= 0) & (src_c < w)
    valid = ok_r[:, :, None] & ok_c[:, None, :]
    gathered = patches[
        np.arange(n)[:, None, None],
        np.clip(src_r, 0, h - 1)[:, :, None],
        np.clip(src_c, 0, w - 1)[:, None, :],
    ]
    out = np.where(valid[..., None], gathered, 0.0)
    return out, valid.astype(np.uint8)


def _reflect(k, n):
    k = np.where(k < 0, -k, k)
    return np.where(k >= n, 2 * n - 2 - k, k)


def blur_batch(patches, sigma):
    """Separable Gaussian blur per patch; ``sigma <= 0`` leaves a patch untouched."""
    patches = np.ascontiguousarray(patches, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    n, h, w, _ = patches.shape
    out = patches.copy()
    active = np.flatnonzero(sigma > 0)
    if active.size == 0:
        return out
    maxr = min(h, w) - 1
    s = sigma[active]
    radius = np.minimum(np.ceil(3.0 * s).astype(np.int64), maxr)
    big = int(radius.max())
    offsets = np.arange(-big, big + 1)
    wts = np.exp(-0.5 * offsets[None, :] ** 2 / (s[:, None] ** 2))
    wts = np.where(np.abs(offsets)[None, :] <= radius[:, None], wts, 0.0)
    wts = wts / wts.sum(axis=1, keepdims=True)

    x = patches[active]
    tmp = np.zeros_like(x)
    cols = np.arange(w)
    for j, k in enumerate(offsets):
        tmp += wts[:, j, None, None, None] * x[:, :, _reflect(cols + k, w), :]
    res = np.zeros_like(x)
    rows = np.arange(h)
    for j, k in enumerate(offsets):
        res += wts[:, j, None, None, None] * tmp[:, _reflect(rows + k, h), :, :]
    out[active] = res
    return out
