"""Shifted patchify: two independently augmented, independently shifted views.

Patch ``j`` of one view and patch ``j`` of the other view come from the same
source patch and form a positive pair. Shifting translates content inside
the s x s window; vacated pixels are zero and flagged invalid.
"""
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import kernels
from .errors import ConfigError, ShiftError
from .image import PatchGrid, to_gray


class Direction(IntEnum):
    E = 0
    W = 1
    N = 2
    S = 3
    NE = 4
    NW = 5
    SE = 6
    SW = 7


# (dy, dx) unit steps; +dy moves content down, +dx moves content right
_STEPS = np.array([(0, 1), (0, -1), (-1, 0), (1, 0), (-1, 1), (-1, -1), (1, 1), (1, -1)], dtype=np.int64)


@dataclass(frozen=True)
class ShiftVector:
    direction: Direction
    magnitude: int

    @property
    def offset(self):
        """(dy, dx) in pixels."""
        dy, dx = _STEPS[int(self.direction)]
        return int(dy * self.magnitude), int(dx * self.magnitude)


IDENTITY_SHIFT = ShiftVector(Direction.E, 0)


@dataclass
class AugmentConfig:
    """Per-patch augmentation and shift settings.

    ``max_shift=None`` resolves to half the patch size.
    """

    flip_probability: float = 0.5
    color_jitter_strength: float = 0.0
    blur_probability: float = 0.5
    blur_sigma_range: tuple = (0.1, 1.5)
    max_shift: int | None = None

    def __post_init__(self):
        self.blur_sigma_range = tuple(float(v) for v in self.blur_sigma_range)
        for name in ("flip_probability", "blur_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.color_jitter_strength < 0 or self.color_jitter_strength >= 1:
            raise ConfigError(f"color_jitter_strength must be in [0, 1), got {self.color_jitter_strength}")
        lo, hi = self.blur_sigma_range
        if len(self.blur_sigma_range) != 2 or lo <= 0 or hi < lo:
            raise ConfigError(f"blur_sigma_range must be 0 < lo <= hi, got {self.blur_sigma_range}")
        if self.max_shift is not None and self.max_shift < 1:
            raise ConfigError(f"max_shift must be >= 1, got {self.max_shift}")

    def resolved_max_shift(self, patch_size):
        m = patch_size // 2 if self.max_shift is None else self.max_shift
        if not 1 <= m <= patch_size - 1:
            raise ConfigError(f"max_shift {m} outside [1, {patch_size - 1}] for patch size {patch_size}")
        return m


@dataclass(eq=False)
class ShiftedView:
    patches: np.ndarray  # (G, s, s, C)
    directions: np.ndarray  # (G,) Direction codes
    magnitudes: np.ndarray  # (G,) pixels, 0 for identity
    valid_mask: np.ndarray  # (G, s, s) bool

    @property
    def num_patches(self):
        return self.patches.shape[0]

    @property
    def shifts(self):
        return [ShiftVector(Direction(int(d)), int(m)) for d, m in zip(self.directions, self.magnitudes)]

    def offsets(self):
        steps = _STEPS[self.directions]
        return steps * self.magnitudes[:, None]


@dataclass(frozen=True)
class MaskPlan:
    masked_indices: np.ndarray
    ratio: float
    num_patches: int

    @property
    def num_masked(self):
        return len(self.masked_indices)

    def visible_indices(self):
        keep = np.ones(self.num_patches, dtype=bool)
        keep[self.masked_indices] = False
        return np.flatnonzero(keep)


def sample_shift(rng, max_shift):
    if max_shift < 1:
        raise ConfigError(f"max_shift must be >= 1, got {max_shift}")
    direction = int(rng.integers(8))
    magnitude = int(rng.integers(1, max_shift + 1))
    return ShiftVector(Direction(direction), magnitude)


def sample_shifts(rng, n, max_shift):
    """Vectorized :func:`sample_shift`: (directions, magnitudes) arrays of length ``n``."""
    if max_shift < 1:
        raise ConfigError(f"max_shift must be >= 1, got {max_shift}")
    directions = rng.integers(8, size=n)
    magnitudes = rng.integers(1, max_shift + 1, size=n)
    return directions.astype(np.int64), magnitudes.astype(np.int64)


def apply_shift(patch, shift):
    """Translate ``patch`` (s x s x C) by ``shift``; returns (shifted, valid_mask)."""
    patch = np.asarray(patch, dtype=np.float64)
    squeeze = patch.ndim == 2
    if squeeze:
        patch = patch[:, :, None]
    s = min(patch.shape[:2])
    if shift.magnitude >= s:
        raise ShiftError(f"shift magnitude {shift.magnitude} must be < patch size {s}")
    dy, dx = shift.offset
    out, valid = kernels.shift_batch(patch[None], [dy], [dx])
    out = out[0, :, :, 0] if squeeze else out[0]
    return out, valid[0].astype(bool)


def _draw_augment_params(rng, n, cfg):
    # fixed draw order keeps streams stable regardless of which ops are enabled
    flip_u = rng.random(n)
    jitter = rng.uniform(-1.0, 1.0, size=(n, 3))
    blur_u = rng.random(n)
    lo, hi = cfg.blur_sigma_range
    sigma = rng.uniform(lo, hi, size=n)
    return flip_u, jitter, blur_u, sigma


def _augment(patches, flip, jitter, sigma, strength, backend=None):
    out = patches.copy()
    out[flip] = out[flip][:, :, ::-1, :]
    if strength > 0:
        bright = 1.0 + strength * jitter[:, 0]
        contrast = 1.0 + strength * jitter[:, 1]
        out = out * bright[:, None, None, None]
        mean = to_gray(out).mean(axis=(1, 2))[:, None, None, None]
        out = (out - mean) * contrast[:, None, None, None] + mean
        if out.shape[-1] == 3:
            sat = 1.0 + strength * jitter[:, 2]
            gray = to_gray(np.clip(out, 0.0, 1.0))[..., None]
            out = gray + (out - gray) * sat[:, None, None, None]
        out = np.clip(out, 0.0, 1.0)
    if np.any(sigma > 0):
        out = kernels.blur_batch(out, sigma, backend=backend)
    return np.clip(out, 0.0, 1.0)


def augment_patches(patches, rng, cfg, shared=False, backend=None):
    """Flip, color jitter and blur a stack of patches (G, s, s, C).

    With ``shared=True`` one set of augmentation decisions is drawn and
    applied to every patch (image-level augmentation).
    """
    patches = np.asarray(patches, dtype=np.float64)
    n = patches.shape[0]
    flip_u, jitter, blur_u, sigma = _draw_augment_params(rng, 1 if shared else n, cfg)
    if shared:
        flip_u, jitter, blur_u, sigma = (np.repeat(a, n, axis=0) for a in (flip_u, jitter, blur_u, sigma))
    flip = flip_u < cfg.flip_probability
    sigma = np.where(blur_u < cfg.blur_probability, sigma, 0.0)
    return _augment(patches, flip, jitter, sigma, cfg.color_jitter_strength, backend)


def augment_patch(patch, rng, cfg):
    return augment_patches(np.asarray(patch)[None], rng, cfg)[0]


def make_view_batch(sources, rngs, cfg, shifted=True, backend=None):
    """Build one view for each of N images.

    ``sources`` is (N, G, s, s, C); ``rngs`` holds one generator per image.
    Random decisions are drawn per image from its own generator; the kernels
    run once over all N*G patches.
    """
    sources = np.asarray(sources, dtype=np.float64)
    n, g, s = sources.shape[:3]
    max_shift = cfg.resolved_max_shift(s) if shifted else 0
    flip = np.empty((n, g), dtype=bool)
    jitter = np.empty((n, g, 3))
    sigma = np.empty((n, g))
    directions = np.zeros((n, g), dtype=np.int64)
    magnitudes = np.zeros((n, g), dtype=np.int64)
    for i, rng in enumerate(rngs):
        f, j, b, sg = _draw_augment_params(rng, g if shifted else 1, cfg)
        flip[i] = f < cfg.flip_probability
        jitter[i] = j
        sigma[i] = np.where(b < cfg.blur_probability, sg, 0.0)
        if shifted:
            directions[i], magnitudes[i] = sample_shifts(rng, g, max_shift)
    flat = sources.reshape(n * g, *sources.shape[2:])
    aug = _augment(flat, flip.ravel(), jitter.reshape(-1, 3), sigma.ravel(), cfg.color_jitter_strength, backend)
    steps = _STEPS[directions.ravel()] * magnitudes.ravel()[:, None]
    out, valid = kernels.shift_batch(aug, steps[:, 0], steps[:, 1], backend=backend)
    out = out.reshape(sources.shape)
    valid = valid.reshape(n, g, s, s).astype(bool)
    return [ShiftedView(out[i], directions[i], magnitudes[i], valid[i]) for i in range(n)]


def make_views(grid, rng, cfg, shifted=True):
    """Return (view_q, view_k) built from the same source patches of ``grid``."""
    patches = grid.patches if isinstance(grid, PatchGrid) else np.asarray(grid)
    (view_q,) = make_view_batch(patches[None], [rng], cfg, shifted)
    (view_k,) = make_view_batch(patches[None], [rng], cfg, shifted)
    return view_q, view_k


def mask_count(num_patches, ratio):
    """round(ratio * G) with halves rounded up."""
    return int(np.floor(ratio * num_patches + 0.5))


def sample_mask(rng, num_patches, ratio):
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio must be in [0, 1), got {ratio}")
    m = mask_count(num_patches, ratio)
    if m >= num_patches:
        raise ConfigError(f"mask ratio {ratio} hides all {num_patches} patches")
    idx = np.sort(rng.choice(num_patches, size=m, replace=False)) if m else np.empty(0, dtype=np.int64)
    return MaskPlan(idx.astype(np.int64), float(ratio), int(num_patches))


def unshift(view):
    """Undo the shifts on valid pixels (vacated pixels stay zero)."""
    off = view.offsets()
    out, _ = kernels.shift_batch(view.patches, -off[:, 0], -off[:, 1])
    return out
