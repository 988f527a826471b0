"""Synthetic complexity-labelled corpus and folder ingestion.

Each synthetic image comes from one generator family and a control value
``u`` in [0, 1] that sets how busy the image is (noise bandwidth, number
of shapes, number of mixed textures). The stored complexity score is
``u`` itself; measured entropy is only used as a calibration check.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.stats import spearmanr

from .errors import ConfigError, CorpusError
from .image import entropy_bits, load_image

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
FAMILIES = ("noise-field", "shape-scatter", "texture-mix")


@dataclass
class GeneratorParams:
    families: tuple = FAMILIES
    n: int = 2048
    image_size: int = 64
    patch_size: int = 16
    frequency_range: tuple = (0.0, 16.0)
    shape_count_range: tuple = (0, 48)
    contrast_range: tuple = (0.85, 1.0)

    def __post_init__(self):
        self.families = tuple(self.families)
        self.frequency_range = tuple(float(v) for v in self.frequency_range)
        self.shape_count_range = tuple(int(v) for v in self.shape_count_range)
        self.contrast_range = tuple(float(v) for v in self.contrast_range)
        if not self.families:
            raise ConfigError("at least one generator family is required")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ConfigError(f"unknown generator families {sorted(unknown)}; choose from {FAMILIES}")
        if len(set(self.families)) != len(self.families):
            raise ConfigError("duplicate generator families")
        if self.image_size < 1 or self.patch_size < 1 or self.image_size % self.patch_size:
            raise ConfigError(f"image size {self.image_size} must be a positive multiple of patch size {self.patch_size}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        lo, hi = self.frequency_range
        if lo < 0 or hi <= lo:
            raise ConfigError(f"bad frequency_range {self.frequency_range}")
        lo, hi = self.shape_count_range
        if lo < 0 or hi <= lo:
            raise ConfigError(f"bad shape_count_range {self.shape_count_range}")
        lo, hi = self.contrast_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"bad contrast_range {self.contrast_range}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    score: float
    label: str
    params: dict = field(default_factory=dict)


@dataclass(eq=False)
class Corpus:
    """In-memory corpus: uint8 images (n, H, W, C) aligned with manifest entries."""

    images: np.ndarray
    entries: list
    seed: int | None = None

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self):
        return [e.id for e in self.entries]

    @property
    def scores(self):
        return np.array([e.score for e in self.entries], dtype=np.float64)

    @property
    def labels(self):
        return [e.label for e in self.entries]

    def float_images(self, idx=None):
        x = self.images if idx is None else self.images[idx]
        return x.astype(np.float64) / 255.0

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Corpus(self.images[idx], [self.entries[i] for i in idx], self.seed)

    def manifest(self):
        return {
            "format_version": MANIFEST_VERSION,
            "seed": self.seed,
            "entries": [asdict(e) for e in self.entries],
        }

    def save(self, out_dir):
        """Write PNGs into ``out_dir/images`` and the manifest next to them."""
        out_dir = Path(out_dir)
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        for img, e in zip(self.images, self.entries):
            Image.fromarray(img).save(out_dir / e.path, format="PNG")
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return path


# -- generators --------------------------------------------------------------


def _tint(rng):
    # random colour direction with unit luma so the luma field is preserved
    c = rng.uniform(0.4, 1.0, size=3)
    return c / (c @ np.array([0.299, 0.587, 0.114]))


def _noise_field(rng, u, size, p):
    """Band-limited Fourier noise; bandwidth (and so roughness and spread) grows with u."""
    lo, hi = p.frequency_range
    cutoff = lo + u * (hi - lo)
    f = np.fft.fftfreq(size) * size
    fy, fx = np.meshgrid(f, f, indexing="ij")
    radius = np.hypot(fy, fx)
    coef = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    coef = np.where((radius <= cutoff) & (radius > 0), coef, 0.0)
    field_ = np.real(np.fft.ifft2(coef)) * size
    # std grows ~ sqrt(pi) * cutoff / size; the busiest setting lands near 0.2
    field_ = field_ * 0.2 * size / (np.sqrt(np.pi) * hi)
    contrast = rng.uniform(*p.contrast_range)
    base = rng.uniform(0.35, 0.65)
    lum = base + contrast * field_
    return np.clip(lum[..., None] * _tint(rng) * 0.9, 0, 1)


def _shape_scatter(rng, u, size, p):
    """Flat background plus ``count`` random discs and rectangles."""
    lo, hi = p.shape_count_range
    count = int(round(lo + u * (hi - lo)))
    img = np.empty((size, size, 3))
    img[:] = rng.uniform(0.1, 0.9, size=3)
    yy, xx = np.mgrid[0:size, 0:size]
    contrast = rng.uniform(*p.contrast_range)
    for _ in range(count):
        color = rng.uniform(0.0, 1.0, size=3)
        color = img[0, 0] + contrast * (color - img[0, 0])
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(0.03, 0.15) * size
        if rng.random() < 0.5:
            sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        else:
            sel = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r * rng.uniform(0.4, 1.6))
        img[sel] = color
    return np.clip(img, 0, 1)


def _texture_mix(rng, u, size, p):
    """Sum of oriented gratings; more components with higher frequencies as u grows."""
    k = 1 + int(round(u * 11))
    yy, xx = np.mgrid[0:size, 0:size] / size
    acc = np.zeros((size, size))
    for i in range(k):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 2.0 + 14.0 * u)
        phase = rng.uniform(0, 2 * np.pi)
        acc += np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    # overall spread grows with u; u=0 is a faint single grating
    amp = (0.02 + 0.3 * u) / np.sqrt(k)
    contrast = rng.uniform(*p.contrast_range)
    lum = 0.5 + contrast * amp * acc
    return np.clip(lum[..., None] * _tint(rng) * 0.9, 0, 1)


_GENERATORS = {"noise-field": _noise_field, "shape-scatter": _shape_scatter, "texture-mix": _texture_mix}


def _to_uint8(x):
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate_one(index, params, seed):
    """Image ``index`` of a corpus: a pure function of (params, seed, index)."""
    rng = np.random.default_rng([int(seed), int(index)])
    family = params.families[index % len(params.families)]
    u = float(rng.uniform(0.0, 1.0))
    img = _GENERATORS[family](rng, u, params.image_size, params)
    return _to_uint8(img), family, u


def generate_synthetic(n, params=None, seed=0, check=False):
    """Generate ``n`` images cycling through ``params.families``.

    With ``check=True`` the per-family Spearman correlation between ``u``
    and measured image entropy is computed and a :class:`CorpusError`
    raised if any family falls below 0.9.
    """
    params = params or GeneratorParams()
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    size = params.image_size
    images = np.empty((n, size, size, 3), dtype=np.uint8)
    entries = []
    width = max(6, len(str(n - 1)))
    for i in range(n):
        img, family, u = generate_one(i, params, seed)
        images[i] = img
        ident = f"img{i:0{width}d}"
        entries.append(ManifestEntry(ident, f"images/{ident}.png", u, family, {"family": family, "u": u}))
    corpus = Corpus(images, entries, int(seed))
    if check:
        stats = family_entropy_correlation(corpus)
        bad = {k: v for k, v in stats.items() if not v >= 0.9}
        if bad:
            raise CorpusError(f"generator self-check failed (Spearman < 0.9): {bad}")
    return corpus


def family_entropy_correlation(corpus, bins=256):
    """Spearman correlation of score vs measured image entropy, per class label."""
    ent = entropy_bits(corpus.float_images(), bins)
    labels = np.array(corpus.labels)
    scores = corpus.scores
    out = {}
    for fam in sorted(set(labels)):
        sel = labels == fam
        if sel.sum() < 3:
            continue
        out[fam] = float(spearmanr(scores[sel], ent[sel]).statistic)
    return out


# -- ingestion ---------------------------------------------------------------


def read_manifest(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorpusError(f"cannot read manifest {path}: {e}") from e
    version = doc.get("format_version")
    if version != MANIFEST_VERSION:
        raise CorpusError(f"manifest version {version!r} not supported (expected {MANIFEST_VERSION})")
    entries = []
    for raw in doc.get("entries", []):
        try:
            entries.append(ManifestEntry(str(raw["id"]), str(raw["path"]), float(raw["score"]),
                                         str(raw["label"]), dict(raw.get("params", {}))))
        except KeyError as e:
            raise CorpusError(f"manifest entry missing field {e}: {raw}") from None
    return doc.get("seed"), entries


def ingest_folder(path, manifest_path=None, image_size=None):
    """Load a corpus directory described by a manifest (default ``path/manifest.json``)."""
    root = Path(path)
    manifest_path = Path(manifest_path) if manifest_path else root / MANIFEST_NAME
    seed, entries = read_manifest(manifest_path)
    if not entries:
        raise CorpusError(f"{manifest_path}: manifest has no entries (empty corpus)")
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate ids in manifest")
    bad_scores = [e.id for e in entries if not 0.0 <= e.score <= 1.0]
    if bad_scores:
        raise CorpusError(f"scores outside [0, 1] for ids {bad_scores}")
    missing = [e.id for e in entries if not (root / e.path).is_file()]
    if missing:
        raise CorpusError(f"missing image files for ids {missing}")
    images = []
    for e in entries:
        if image_size is None:
            with Image.open(root / e.path) as im:
                image_size = im.width
        images.append(_to_uint8(load_image(root / e.path, image_size).data))
    return Corpus(np.stack(images), entries, seed)


# -- splits ------------------------------------------------------------------


def _allocate(count, fractions):
    """Largest-remainder allocation of ``count`` items to the given fractions."""
    raw = np.asarray(fractions) * count
    base = np.floor(raw).astype(int)
    rem = count - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base


def split(corpus, fractions=(0.75, 0.0, 0.25), seed=0):
    """Stratified (by label) deterministic train/val/test split.

    Returns three index arrays into ``corpus``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    labels = corpus.labels if isinstance(corpus, Corpus) else list(corpus)
    parts = [[], [], []]
    for k, label in enumerate(sorted(set(labels))):
        idx = np.array([i for i, lab in enumerate(labels) if lab == label], dtype=np.int64)
        idx = np.random.default_rng([int(seed), k]).permutation(idx)
        counts = _allocate(len(idx), fractions)
        start = 0
        for part, c in zip(parts, counts):
            part.extend(idx[start:start + c].tolist())
            start += c
    return tuple(np.sort(np.array(p, dtype=np.int64)) for p in parts)
