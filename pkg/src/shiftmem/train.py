"""Self-supervised pretraining loop.

One step: patchify -> two shifted views -> mask -> query-encode the visible
patches of view q, key-encode all of view k (no grad) -> project ->
patch-wise InfoNCE, decode masked-patch entropy -> MSE vs entropy of the
source patches -> AdamW on the query side and decoder -> momentum update.

Every random decision for sample ``i`` in epoch ``e`` comes from a
generator seeded with ``(seed, e, i)``, so data order and worker layout do
not change the result.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import FORMAT_VERSION, Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import CheckpointError, ConfigError, CorpusError, ShapeError, TrainingError
from .image import entropy_bits
from .losses import entropy_recon_loss, image_wise_loss, patch_wise_loss, total_loss
from .model import DualEncoder
from .views import make_view_batch, sample_mask

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_NAME = "metrics.log"
_SHUFFLE_STREAM = 2**31 - 1
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def lr_at(step, total_steps, warmup_steps, base_lr):
    """Linear warmup from 0 to ``base_lr`` then half-cosine decay to 0."""
    if warmup_steps >= total_steps:
        raise ConfigError(f"warmup_steps ({warmup_steps}) must be < total_steps ({total_steps})")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class Batch:
    indices: np.ndarray
    view_q: torch.Tensor  # (N, G, s, s, C)
    view_k: torch.Tensor
    visible: torch.Tensor  # (N, G-M) long
    masked: torch.Tensor  # (N, M) long
    targets: torch.Tensor  # (N, M, out)


def sample_rng(seed, epoch, index):
    return np.random.default_rng([int(seed), int(epoch), int(index)])


def patchify_batch(images, patch_size):
    """(N, H, W, C) -> (N, G, s, s, C) row-major patches."""
    n, h, w, c = images.shape
    s = patch_size
    if h % s or w % s:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {s}")
    x = images.reshape(n, h // s, s, w // s, s, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(n, (h // s) * (w // s), s, s, c))


def prepare_batch(images, indices, epoch, cfg):
    """Build views, masks and reconstruction targets for a batch of float images."""
    tc, enc = cfg.train, cfg.encoder
    dtype = _DTYPES[tc.dtype]
    sources = patchify_batch(np.asarray(images, dtype=np.float64), enc.patch_size)
    n, g = sources.shape[:2]
    if g != enc.num_patches:
        raise ShapeError(f"images give {g} patches, encoder expects {enc.num_patches}")
    rngs = [sample_rng(tc.seed, epoch, i) for i in indices]
    shifted = cfg.ablation.shifted_patchify_on
    view_q = make_view_batch(sources, rngs, cfg.augment, shifted)
    view_k = make_view_batch(sources, rngs, cfg.augment, shifted)
    masks = [sample_mask(rng, g, tc.mask_ratio) for rng in rngs]
    masked = np.stack([m.masked_indices for m in masks]) if masks[0].num_masked else np.zeros((n, 0), np.int64)
    visible = np.stack([m.visible_indices() for m in masks])
    rows = np.arange(n)[:, None]
    if cfg.ablation.mem_target == "entropy":
        # targets come from the un-augmented source patches
        ent = entropy_bits(sources, tc.entropy_bins) / np.log2(tc.entropy_bins)
        targets = ent[rows, masked][..., None]
    else:
        targets = sources.reshape(n, g, -1)[rows, masked]
    return Batch(
        indices=np.asarray(indices),
        view_q=torch.as_tensor(np.stack([v.patches for v in view_q]), dtype=dtype),
        view_k=torch.as_tensor(np.stack([v.patches for v in view_k]), dtype=dtype),
        visible=torch.as_tensor(visible, dtype=torch.long),
        masked=torch.as_tensor(masked, dtype=torch.long),
        targets=torch.as_tensor(targets, dtype=dtype),
    )


def build_model(cfg):
    out = 1 if cfg.ablation.mem_target == "entropy" else cfg.encoder.patch_dim
    model = DualEncoder(cfg.encoder, cfg.train.momentum, decoder_out=out, seed=cfg.train.seed)
    return model.to(_DTYPES[cfg.train.dtype])


def build_optimizer(model, cfg):
    """AdamW over query-side and decoder weights; biases, norms and the mask token are not decayed."""
    tc = cfg.train
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    groups = [{"params": decay, "weight_decay": tc.weight_decay}, {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.AdamW(groups, lr=0.0, betas=tc.betas, weight_decay=tc.weight_decay)


def compute_losses(model, batch, cfg):
    """Forward pass; returns (differentiable total, LossBreakdown)."""
    tc = cfg.train
    n = batch.view_q.shape[0]
    rows = torch.arange(n)[:, None]
    q_in = batch.view_q[rows, batch.visible]
    q_tokens = model.query_encoder(q_in, batch.visible)
    with torch.no_grad():
        k_tokens = model.key_encoder(batch.view_k)
    if cfg.ablation.patch_wise_loss_on:
        qf = model.query_proj(q_tokens)
        with torch.no_grad():
            kf = model.key_proj(k_tokens)
        l_con = patch_wise_loss(qf, kf, batch.visible, tc.temperature, tc.same_image_negatives)
    else:
        qf = model.query_proj(q_tokens.mean(dim=1))
        with torch.no_grad():
            kf = model.key_proj(k_tokens.mean(dim=1))
        l_con = image_wise_loss(qf, kf, tc.temperature)
    pred = model.decoder(q_tokens, batch.visible, batch.masked)
    l_rec = entropy_recon_loss(pred, batch.targets)
    lam = tc.lam if cfg.ablation.mem_on else 0.0
    return total_loss(l_con, l_rec, lam)


class Trainer:
    """Holds the model, optimizer and progress counters for one run."""

    def __init__(self, cfg, corpus_size):
        if corpus_size < 1:
            raise ConfigError("corpus is empty")
        self.cfg = cfg
        self.corpus_size = int(corpus_size)
        self.model = build_model(cfg)
        self.optimizer = build_optimizer(self.model, cfg)
        self.steps_per_epoch = math.ceil(corpus_size / cfg.train.batch_size)
        self.total_steps = self.steps_per_epoch * cfg.train.epochs
        self.warmup_steps = self.steps_per_epoch * cfg.train.warmup_epochs
        self.step = 0
        self.epoch = 0

    def current_lr(self):
        return lr_at(self.step, self.total_steps, self.warmup_steps, self.cfg.train.peak_lr)

    def train_step(self, batch, lr=None):
        """One optimizer step plus momentum update; returns the LossBreakdown."""
        lr = self.current_lr() if lr is None else lr
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        total, breakdown = compute_losses(self.model, batch, self.cfg)
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss at step {self.step} (epoch {self.epoch}); "
                f"batch sample indices {batch.indices.tolist()}; losses {breakdown.as_dict()}"
            )
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        clip = self.cfg.train.grad_clip
        if clip is not None:
            norm = torch.nn.utils.clip_grad_norm_(list(self.model.trainable_parameters()), clip)
            if norm > clip:
                log.info("step %d: gradient norm %.4g clipped to %.4g", self.step, float(norm), clip)
        self.optimizer.step()
        self.model.momentum_update()
        self.step += 1
        return breakdown

    def epoch_order(self, epoch):
        return np.random.default_rng([self.cfg.train.seed, epoch, _SHUFFLE_STREAM]).permutation(self.corpus_size)

    # -- checkpointing -------------------------------------------------------

    def to_checkpoint(self):
        tensors = {}
        for name, t in self.model.state_dict().items():
            tensors[f"model/{name}"] = t.detach().cpu().numpy()
        opt = self.optimizer.state_dict()
        for idx in sorted(opt["state"]):
            for key, t in sorted(opt["state"][idx].items()):
                tensors[f"optim/{idx}/{key}"] = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
        groups = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()} for g in opt["param_groups"]]
        meta = {
            "format_version": FORMAT_VERSION,
            "config": self.cfg.to_dict(portable=True),
            "corpus_size": self.corpus_size,
            "step": self.step,
            "epoch": self.epoch,
            "rng": {"seed": self.cfg.train.seed, "epoch": self.epoch, "step": self.step},
            "optimizer_groups": groups,
        }
        return Checkpoint(tensors, meta)

    @classmethod
    def from_checkpoint(cls, ckpt, cfg=None):
        """Rebuild a trainer; ``cfg`` may override paths but must match shapes."""
        stored = RunConfig.from_dict(ckpt.meta["config"])
        if cfg is None:
            cfg = stored
        trainer = cls(cfg, ckpt.meta["corpus_size"])
        load_model_state(trainer.model, ckpt)
        state = {}
        for name, arr in ckpt.tensors.items():
            if not name.startswith("optim/"):
                continue
            _, idx, key = name.split("/")
            t = torch.from_numpy(np.array(arr))
            state.setdefault(int(idx), {})[key] = t
        groups = ckpt.meta["optimizer_groups"]
        try:
            trainer.optimizer.load_state_dict({"state": state, "param_groups": groups})
        except (ValueError, KeyError) as e:
            raise CheckpointError(f"optimizer state does not match the model: {e}") from e
        trainer.step = int(ckpt.meta["step"])
        trainer.epoch = int(ckpt.meta["epoch"])
        return trainer


def load_model_state(model, ckpt):
    """Copy ``model/*`` tensors into ``model``, naming the first tensor whose shape differs."""
    own = model.state_dict()
    stored = {k[len("model/"):]: v for k, v in ckpt.tensors.items() if k.startswith("model/")}
    missing = sorted(set(own) - set(stored))
    extra = sorted(set(stored) - set(own))
    if missing or extra:
        raise CheckpointError(f"checkpoint tensors do not match model: missing {missing}, unexpected {extra}")
    for name, t in own.items():
        arr = stored[name]
        if tuple(arr.shape) != tuple(t.shape):
            raise ShapeError(
                f"checkpoint tensor {name!r} has shape {tuple(arr.shape)} but the configured model expects {tuple(t.shape)}"
            )
    model.load_state_dict({k: torch.from_numpy(np.array(v)).to(own[k].dtype) for k, v in stored.items()})
    return model


def model_from_checkpoint(ckpt, cfg=None):
    cfg = cfg or RunConfig.from_dict(ckpt.meta["config"])
    return load_model_state(build_model(cfg), ckpt)


def _metrics_rows(path, keep):
    if not path.exists():
        return []
    rows = [ln for ln in path.read_text().splitlines() if ln.strip()]
    return rows[:keep]


def pretrain(corpus, cfg, out_dir=None, resume=None):
    """Run the full pretraining loop.

    Writes ``metrics.log`` (one JSON record per step) and ``checkpoint.bin``
    under ``out_dir``; with ``train.checkpoint_every = k`` also
    ``checkpoint_epochNNN.bin`` every k epochs. ``resume`` is a checkpoint
    path or object to continue from. Returns the final :class:`Checkpoint`.
    """
    n = len(corpus)
    if n == 0:
        raise ConfigError("corpus is empty")
    images = corpus.images
    if images.shape[1:3] != (cfg.encoder.image_size, cfg.encoder.image_size):
        raise ShapeError(f"corpus images {images.shape[1:3]} do not match encoder input {cfg.encoder.image_size}")
    tc = cfg.train
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ckpt.meta["config"] != cfg.to_dict(portable=True):
            raise ConfigError("resume checkpoint was written with a different configuration")
        if ckpt.meta["corpus_size"] != n:
            raise CorpusError(f"resume checkpoint trained on {ckpt.meta['corpus_size']} images, corpus has {n}")
        trainer = Trainer.from_checkpoint(ckpt, cfg)
    else:
        trainer = Trainer(cfg, n)

    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        prior = _metrics_rows(out / METRICS_NAME, trainer.step) if resume is not None else []
        metrics = open(out / METRICS_NAME, "w")
        for row in prior:
            metrics.write(row + "\n")
    try:
        for epoch in range(trainer.epoch, tc.epochs):
            order = trainer.epoch_order(epoch)
            for b in range(trainer.steps_per_epoch):
                idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
                batch = prepare_batch(corpus.float_images(idx), idx, epoch, cfg)
                step, lr = trainer.step, trainer.current_lr()
                try:
                    br = trainer.train_step(batch, lr)
                except TrainingError:
                    if out is not None:
                        dump = {"step": trainer.step, "epoch": epoch, "batch_index": b, "sample_indices": idx.tolist()}
                        (out / "nonfinite_batch.json").write_text(json.dumps(dump) + "\n")
                    raise
                if metrics is not None:
                    row = {"step": step, "epoch": epoch, "lr": lr, **br.as_dict()}
                    metrics.write(json.dumps(row) + "\n")
            trainer.epoch = epoch + 1
            if out is not None and tc.checkpoint_every and trainer.epoch % tc.checkpoint_every == 0:
                save_checkpoint(trainer.to_checkpoint(), out / f"checkpoint_epoch{trainer.epoch:03d}.bin")
            log.info("epoch %d/%d done (step %d)", trainer.epoch, tc.epochs, trainer.step)
    finally:
        if metrics is not None:
            metrics.close()
    final = trainer.to_checkpoint()
    if out is not None:
        save_checkpoint(final, out / CHECKPOINT_NAME)
    return final


def init_checkpoint(cfg, corpus_size=1):
    """Checkpoint of a freshly initialized (untrained) model."""
    return Trainer(cfg, corpus_size).to_checkpoint()
