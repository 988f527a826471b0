"""Image and patch-grid containers plus histogram entropy.

Entropy here is always the Shannon entropy (bits) of the grayscale
intensity histogram; it is the regression target of masked entropy
modeling and an independent complexity signal for the synthetic corpus.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import DecodeError, InvalidInputError, ShapeError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
DEFAULT_BINS = 256


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H x W x C float64 intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidInputError(f"expected a non-empty H x W x C array, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise InvalidInputError("image values must be finite and within [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @classmethod
    def from_uint8(cls, arr):
        return cls(np.asarray(arr, dtype=np.uint8) / 255.0)


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Non-overlapping s x s patches of an image in row-major order.

    ``patches`` has shape (G, s, s, C) and ``origin_index[j]`` is the
    (row, col) grid cell of patch ``j``.
    """

    patches: np.ndarray
    patch_size: int
    grid_shape: tuple

    @property
    def num_patches(self):
        return self.patches.shape[0]

    @property
    def grid_side(self):
        rows, cols = self.grid_shape
        if rows != cols:
            raise ShapeError(f"grid {rows}x{cols} is not square")
        return rows

    @property
    def origin_index(self):
        rows, cols = self.grid_shape
        return [(r, c) for r in range(rows) for c in range(cols)]

    def reassemble(self):
        rows, cols = self.grid_shape
        s = self.patch_size
        c = self.patches.shape[-1]
        x = self.patches.reshape(rows, cols, s, s, c).transpose(0, 2, 1, 3, 4)
        return ImageTensor(x.reshape(rows * s, cols * s, c))


@dataclass(frozen=True)
class EntropyValue:
    bits: float
    normalized: float


def load_image(path, target_size=None):
    """Decode a raster file to an RGB :class:`ImageTensor` of side ``target_size``.

    Images already at the target size are not resampled, so a PNG written
    from 8-bit data round-trips exactly. ``None`` keeps the native size.
    """
    path = Path(path)
    if target_size is not None and target_size < 1:
        raise InvalidInputError(f"target_size must be positive, got {target_size}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise InvalidInputError(f"{path}: zero-area image")
            im = im.convert("RGB")
            if target_size is not None and im.size != (target_size, target_size):
                im = im.resize((target_size, target_size), Image.Resampling.BILINEAR)
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise DecodeError(f"could not decode {path}: {e}") from e
    return ImageTensor.from_uint8(arr)


def to_patch_grid(img, patch_size):
    if isinstance(img, ImageTensor):
        data = img.data
    else:
        data = ImageTensor(img).data
    h, w, c = data.shape
    s = int(patch_size)
    if s < 1 or h % s or w % s:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {s}")
    rows, cols = h // s, w // s
    patches = data.reshape(rows, s, cols, s, c).transpose(0, 2, 1, 3, 4).reshape(rows * cols, s, s, c)
    return PatchGrid(np.ascontiguousarray(patches), s, (rows, cols))


def to_gray(x):
    """Luma conversion over the trailing channel axis (single channel passes through)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 1:
        return x[..., 0]
    if x.shape[-1] != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {x.shape[-1]}")
    return np.clip(x @ LUMA_WEIGHTS, 0.0, 1.0)


def entropy_bits(patches, bins=DEFAULT_BINS, backend=None):
    """Vectorized histogram entropy (bits) for a stack of (..., s, s, C) patches."""
    if bins < 2:
        raise InvalidInputError(f"bins must be >= 2, got {bins}")
    patches = np.asarray(patches, dtype=np.float64)
    gray = to_gray(patches)
    lead = gray.shape[:-2]
    flat = gray.reshape(int(np.prod(lead, dtype=np.int64)), -1)
    return kernels.entropy_batch(flat, bins, backend=backend).reshape(lead)


def _value(bits, bins):
    bits = max(float(bits), 0.0)
    return EntropyValue(bits=bits, normalized=bits / np.log2(bins))


def patch_entropy(patch, bins=DEFAULT_BINS):
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim == 2:
        patch = patch[:, :, None]
    if patch.min() < 0.0 or patch.max() > 1.0:
        raise InvalidInputError("patch values must lie in [0, 1]")
    return _value(entropy_bits(patch[None], bins)[0], bins)


def image_entropy(img, bins=DEFAULT_BINS):
    data = img.data if isinstance(img, ImageTensor) else ImageTensor(img).data
    return _value(entropy_bits(data[None], bins)[0], bins)
