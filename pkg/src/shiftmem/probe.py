"""Frozen-encoder linear probing and correlation metrics."""
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .errors import ContractError, ShapeError, UndefinedCorrelationError
from .train import patchify_batch


@dataclass(eq=False)
class EmbeddingSet:
    vectors: np.ndarray  # (n, d)
    ids: list
    classes: list | None = None
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        n = self.vectors.shape[0]
        if len(self.ids) != n:
            raise ShapeError(f"{len(self.ids)} ids for {n} vectors")
        if self.classes is not None and len(self.classes) != n:
            raise ShapeError(f"{len(self.classes)} class labels for {n} vectors")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != (n,):
                raise ShapeError(f"scores shape {self.scores.shape} does not match {n} vectors")
        if not np.all(np.isfinite(self.vectors)):
            raise ContractError("embeddings contain non-finite values")

    def __len__(self):
        return self.vectors.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return EmbeddingSet(
            self.vectors[idx],
            [self.ids[i] for i in idx],
            None if self.classes is None else [self.classes[i] for i in idx],
            None if self.scores is None else self.scores[idx],
        )


@dataclass
class ProbeReport:
    pcc: float
    srcc: float
    per_class_pcc: dict
    pcc_variance: float
    predictions: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "pcc": self.pcc,
            "srcc": self.srcc,
            "per_class_pcc": dict(self.per_class_pcc),
            "pcc_variance": self.pcc_variance,
            "n": int(len(self.predictions)),
            "predictions": [float(v) for v in self.predictions],
            "targets": [float(v) for v in self.targets],
        }


# -- metrics -----------------------------------------------------------------


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("correlation needs at least two samples")
    return x, y


def pcc(x, y):
    """Pearson product-moment correlation."""
    x, y = _check_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined: an input has zero variance")
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def srcc(x, y):
    """Spearman rank correlation: Pearson correlation of average (tie-aware) ranks."""
    x, y = _check_pair(x, y)
    return pcc(rankdata(x, method="average"), rankdata(y, method="average"))


def per_class_report(pred, target, classes):
    """Global PCC/SRCC plus per-class PCC and its population variance.

    Classes with fewer than two samples, or with constant predictions or
    targets, are left out with a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    classes = list(classes)
    if not (len(pred) == len(target) == len(classes)):
        raise ContractError("pred, target and classes must be aligned")
    per_class = {}
    labels = np.array(classes, dtype=object)
    for c in sorted(set(classes), key=str):
        sel = labels == c
        if sel.sum() < 2:
            warnings.warn(f"class {c!r} has fewer than 2 samples; excluded from per-class PCC", stacklevel=2)
            continue
        try:
            per_class[c] = pcc(pred[sel], target[sel])
        except UndefinedCorrelationError:
            warnings.warn(f"class {c!r} has zero variance; excluded from per-class PCC", stacklevel=2)
    values = np.array(list(per_class.values()))
    variance = float(np.mean((values - values.mean()) ** 2)) if values.size else 0.0
    return ProbeReport(pcc(pred, target), srcc(pred, target), per_class, variance, pred, target)


# -- embeddings --------------------------------------------------------------


@torch.no_grad()
def embed_images(encoder, images, patch_size, batch_size=256):
    """Mean of final-layer patch tokens for float images (n, H, W, C); no augmentation, shift or mask."""
    was_training = encoder.training
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    out = []
    for start in range(0, len(images), batch_size):
        chunk = patchify_batch(np.asarray(images[start:start + batch_size], dtype=np.float64), patch_size)
        tokens = encoder(torch.as_tensor(chunk, dtype=dtype))
        out.append(tokens.mean(dim=1).double().numpy())
    encoder.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, encoder.cfg.embed_dim))


def extract_embeddings(corpus, model, batch_size=256):
    """Embed every corpus image with the frozen query encoder."""
    enc = model.query_encoder
    size = enc.cfg.image_size
    if corpus.images.shape[1:3] != (size, size):
        raise ShapeError(f"corpus images {corpus.images.shape[1:3]} do not match encoder input {size}x{size}")
    vecs = []
    for start in range(0, len(corpus), batch_size):
        idx = np.arange(start, min(start + batch_size, len(corpus)))
        vecs.append(embed_images(enc, corpus.float_images(idx), enc.cfg.patch_size, batch_size))
    return EmbeddingSet(np.concatenate(vecs), corpus.ids, corpus.labels, corpus.scores)


def export_embeddings(emb, path):
    """One JSON record per line: {id, class, score, vector}."""
    path = Path(path)
    with open(path, "w") as f:
        for i in range(len(emb)):
            rec = {
                "id": emb.ids[i],
                "class": None if emb.classes is None else emb.classes[i],
                "score": None if emb.scores is None else float(emb.scores[i]),
                "vector": [float(v) for v in emb.vectors[i]],
            }
            f.write(json.dumps(rec) + "\n")
    return path


def import_embeddings(path):
    ids, classes, scores, vecs = [], [], [], []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            ids.append(rec["id"])
            classes.append(rec["class"])
            scores.append(np.nan if rec["score"] is None else rec["score"])
            vecs.append(rec["vector"])
    has_scores = not np.any(np.isnan(scores)) if scores else False
    return EmbeddingSet(
        np.array(vecs, dtype=np.float64).reshape(len(ids), -1),
        ids,
        classes if any(c is not None for c in classes) else None,
        np.array(scores) if has_scores else None,
    )


# -- probe -------------------------------------------------------------------


@dataclass
class LinearProbe:
    weight: np.ndarray  # (k,) over transformed features
    bias: float
    mean: np.ndarray  # (d,)
    transform: np.ndarray  # (d, k)

    def predict(self, vectors):
        x = (np.asarray(vectors, dtype=np.float64) - self.mean) @ self.transform
        return x @ self.weight + self.bias

    @property
    def effective_weight(self):
        """Weight on the raw (centred) embedding coordinates."""
        return self.transform @ self.weight


def feature_transform(x, mode="whiten", rcond=1e-8):
    """Centre and linear map fitted on ``x`` (n, d).

    ``whiten`` rotates onto the principal axes and scales each to unit
    variance, dropping directions with variance below ``rcond`` times the
    largest. ``standardize`` scales each coordinate to unit variance;
    ``raw`` only centres.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    mean = x.mean(axis=0)
    if mode == "raw":
        return mean, np.eye(d)
    if mode == "standardize":
        scale = x.std(axis=0)
        return mean, np.diag(1.0 / np.where(scale > 0, scale, 1.0))
    if mode != "whiten":
        raise ContractError(f"unknown probe feature mode {mode!r}")
    xc = x - mean
    cov = xc.T @ xc / len(x)
    evals, evecs = np.linalg.eigh(cov)
    top = evals.max() if evals.size else 0.0
    keep = evals > rcond * top if top > 0 else np.zeros(d, dtype=bool)
    if not keep.any():
        return mean, np.zeros((d, 1))
    return mean, evecs[:, keep] / np.sqrt(evals[keep])


def fit_linear_probe(train, epochs=30, lr=1e-3, momentum=0.9, weight_decay=1e-4,
                     batch_size=128, features="whiten", seed=0):
    """Fit a d -> 1 linear regressor on frozen embeddings with momentum SGD and squared error.

    Features are centred and mapped by :func:`feature_transform` fitted on
    the training set; the map is linear, so the probe stays linear in the
    embedding.
    """
    if len(train) == 0:
        raise ContractError("probe training set is empty")
    if train.scores is None:
        raise ContractError("probe training set has no complexity scores")
    mean, transform = feature_transform(train.vectors, features)
    xs = torch.as_tensor((np.asarray(train.vectors, dtype=np.float64) - mean) @ transform)
    yt = torch.as_tensor(train.scores)
    gen = torch.Generator().manual_seed(int(seed))
    layer = torch.nn.Linear(xs.shape[1], 1, dtype=torch.float64)
    torch.nn.init.zeros_(layer.weight)
    torch.nn.init.zeros_(layer.bias)
    opt = torch.optim.SGD(layer.parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
    n = len(train)
    for _ in range(epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            loss = ((layer(xs[idx])[:, 0] - yt[idx]) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    return LinearProbe(layer.weight.detach().numpy()[0].copy(), float(layer.bias.detach()), mean, transform)


def weights_digest(module):
    """SHA-256 over all parameters and buffers, for frozen-encoder checks."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def run_probe(model, corpus, probe_cfg, export_path=None):
    """Embed, split, fit on the train split and report on the test split."""
    from .corpus import split

    emb = extract_embeddings(corpus, model)
    if export_path is not None:
        export_embeddings(emb, export_path)
    train_idx, _, test_idx = split(corpus, probe_cfg.split, probe_cfg.seed)
    if len(test_idx) < 2:
        raise ContractError("probe test split needs at least two samples")
    probe = fit_linear_probe(
        emb.subset(train_idx), probe_cfg.epochs, probe_cfg.lr, probe_cfg.momentum,
        probe_cfg.weight_decay, probe_cfg.batch_size, probe_cfg.features, probe_cfg.seed,
    )
    test = emb.subset(test_idx)
    pred = probe.predict(test.vectors)
    return per_class_report(pred, test.scores, test.classes), probe, emb
