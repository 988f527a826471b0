"""Query/key ViT encoders over patch tokens, projection head and entropy decoder.

There is no class token. Masked patches are dropped before the query
encoder so it never sees them; the key encoder always sees every patch and
is only ever updated by :func:`momentum_update`.
"""
import copy
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError, StateError


@dataclass
class EncoderConfig:
    patch_size: int = 16
    grid_side: int = 4
    channels: int = 3
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    proj_dim: int = 64
    proj_hidden: int = 256
    use_projection: bool = True
    decoder_dim: int = 64
    decoder_depth: int = 2
    decoder_heads: int = 4

    def __post_init__(self):
        for name in ("patch_size", "grid_side", "channels", "embed_dim", "depth", "heads",
                     "proj_dim", "proj_hidden", "decoder_dim", "decoder_depth", "decoder_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.decoder_dim % self.decoder_heads:
            raise ConfigError(f"decoder_dim {self.decoder_dim} not divisible by decoder_heads {self.decoder_heads}")
        if self.decoder_dim > self.embed_dim or self.decoder_depth > self.depth or (
            self.decoder_dim == self.embed_dim and self.decoder_depth == self.depth
        ):
            raise ConfigError("decoder must be strictly smaller than the encoder")

    @property
    def num_patches(self):
        return self.grid_side ** 2

    @property
    def image_size(self):
        return self.patch_size * self.grid_side

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self):
        return asdict(self)


def init_weights(module, generator=None):
    """Truncated normal (std 0.02) linear weights, zero biases, unit LayerNorm."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for name, p in module.named_parameters():
        if name.endswith("pos_embed") or name.endswith("mask_token"):
            nn.init.trunc_normal_(p, std=0.02, a=-0.04, b=0.04, generator=generator)


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        x = F.scaled_dot_product_attention(q, k, v)
        return self.proj(x.transpose(1, 2).reshape(b, n, c))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class PatchEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = nn.Linear(cfg.patch_dim, d)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.num_patches, d))
        self.blocks = nn.ModuleList([Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)])
        self.norm = nn.LayerNorm(d)

    def forward(self, patches, index=None):
        """Encode patch tokens.

        Parameters
        ----------
        patches : (N, G', s, s, C) tensor
            Patch pixels, already restricted to the patches to encode.
        index : (N, G') long tensor, optional
            Grid index of every patch; selects its positional embedding.
            Defaults to 0..G-1 for every sample.
        """
        n, g = patches.shape[:2]
        want = (self.cfg.patch_size, self.cfg.patch_size, self.cfg.channels)
        if tuple(patches.shape[2:]) != want:
            raise ShapeError(f"patch shape {tuple(patches.shape[2:])} does not match config {want}")
        x = self.patch_embed(patches.reshape(n, g, -1))
        if index is None:
            if g != self.cfg.num_patches:
                raise ShapeError(f"expected {self.cfg.num_patches} patches, got {g}")
            x = x + self.pos_embed
        else:
            x = x + self.pos_embed[index]
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


class ProjectionHead(nn.Module):
    """Two-layer MLP followed by L2 normalization. ``nonlinear=False`` drops the GELU."""

    def __init__(self, dim, hidden, out, nonlinear=True):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, out)
        self.nonlinear = nonlinear

    def forward(self, x):
        h = self.fc1(x)
        if self.nonlinear:
            h = F.gelu(h)
        return F.normalize(self.fc2(h), dim=-1, eps=1e-12)


class Normalize(nn.Module):
    def forward(self, x):
        return F.normalize(x, dim=-1, eps=1e-12)


class EntropyDecoder(nn.Module):
    """Small ViT reading out one prediction per masked patch.

    ``out_dim`` is 1 for entropy targets and s*s*C for pixel targets.
    """

    def __init__(self, cfg, out_dim=1):
        super().__init__()
        self.cfg = cfg
        dd = cfg.decoder_dim
        self.embed = nn.Linear(cfg.embed_dim, dd)
        self.mask_token = nn.Parameter(torch.zeros(dd))
        self.pos_embed = nn.Parameter(torch.zeros(cfg.num_patches, dd))
        self.blocks = nn.ModuleList([Block(dd, cfg.decoder_heads, cfg.mlp_ratio) for _ in range(cfg.decoder_depth)])
        self.norm = nn.LayerNorm(dd)
        self.head = nn.Linear(dd, out_dim)

    def forward(self, tokens, visible_index, masked_index):
        """(N, G-M, d) visible tokens -> (N, M, out_dim) predictions in ``masked_index`` order."""
        n, m = masked_index.shape
        if m == 0:
            return tokens.new_zeros((n, 0, self.head.out_features))
        g = self.cfg.num_patches
        x = self.embed(tokens)
        full = self.mask_token.expand(n, g, -1).clone()
        full = full.scatter(1, visible_index[..., None].expand(-1, -1, x.shape[-1]), x)
        full = full + self.pos_embed
        for blk in self.blocks:
            full = blk(full)
        full = self.norm(full)
        picked = torch.gather(full, 1, masked_index[..., None].expand(-1, -1, full.shape[-1]))
        return self.head(picked)


class DualEncoder(nn.Module):
    """Query-side encoder/projection/decoder plus their momentum (key) copies."""

    def __init__(self, cfg, momentum=0.999, decoder_out=1, seed=0):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"momentum must be in [0, 1], got {momentum}")
        self.cfg = cfg
        self.momentum = float(momentum)
        self.query_encoder = PatchEncoder(cfg)
        if cfg.use_projection:
            self.query_proj = ProjectionHead(cfg.embed_dim, cfg.proj_hidden, cfg.proj_dim)
        else:
            self.query_proj = Normalize()
        self.decoder = EntropyDecoder(cfg, decoder_out)
        gen = torch.Generator().manual_seed(int(seed))
        init_weights(self, generator=gen)
        self.key_encoder = copy.deepcopy(self.query_encoder)
        self.key_proj = copy.deepcopy(self.query_proj)
        for p in self.key_parameters():
            p.requires_grad_(False)

    def query_parameters(self):
        yield from self.query_encoder.parameters()
        yield from self.query_proj.parameters()

    def key_parameters(self):
        yield from self.key_encoder.parameters()
        yield from self.key_proj.parameters()

    def trainable_parameters(self):
        yield from self.query_parameters()
        yield from self.decoder.parameters()

    @torch.no_grad()
    def momentum_update(self):
        momentum_update(self)


@torch.no_grad()
def momentum_update(model, momentum=None):
    """key <- m * key + (1 - m) * query for encoder and projection weights."""
    m = model.momentum if momentum is None else float(momentum)
    qs = list(model.query_parameters())
    ks = list(model.key_parameters())
    if len(qs) != len(ks):
        raise StateError("query and key parameter collections differ in length")
    for q, k in zip(qs, ks):
        if q.shape != k.shape:
            raise StateError(f"query/key shape mismatch {tuple(q.shape)} vs {tuple(k.shape)}")
        k.mul_(m).add_(q.detach(), alpha=1.0 - m)
    return model


def to_tensor(x, dtype=torch.float32):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def encode(encoder, view_patches, mask=None, dtype=torch.float32):
    """Encode one view (G, s, s, C) with an optional :class:`MaskPlan`.

    Returns (tokens (G', d), index_map (G',)). With a mask only the visible
    patches are returned.
    """
    patches = to_tensor(view_patches, dtype)
    g = patches.shape[0]
    if mask is None:
        index = torch.arange(g)
    else:
        index = torch.as_tensor(mask.visible_indices(), dtype=torch.long)
    tokens = encoder(patches[index][None], index[None])
    return tokens[0], index
