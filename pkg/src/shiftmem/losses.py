"""Patch-wise InfoNCE, masked entropy reconstruction and the combined objective."""
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractError


@dataclass(frozen=True)
class LossBreakdown:
    l_pwin: float
    l_rec: float
    lam: float
    total: float

    @classmethod
    def of(cls, l_pwin, l_rec, lam):
        l_pwin, l_rec, lam = float(l_pwin), float(l_rec), float(lam)
        return cls(l_pwin, l_rec, lam, l_pwin + lam * l_rec)

    def as_dict(self):
        return {"l_pwin": self.l_pwin, "l_rec": self.l_rec, "lambda": self.lam, "total": self.total}


def per_patch_infonce(q, k_pos, negatives, tau):
    """-log softmax of the positive logit against a sum of exponentiated negatives.

    ``q`` and ``k_pos`` are (d,) unit vectors, ``negatives`` is (K, d).
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    negatives = torch.as_tensor(negatives)
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise ContractError("at least one negative is required")
    pos = (q * k_pos).sum() / tau
    neg = negatives @ q / tau
    logits = torch.cat([pos[None], neg])
    return torch.logsumexp(logits, 0) - pos


def patch_wise_loss(queries, keys, visible_index, tau, same_image_negatives=False):
    """Mean per-patch InfoNCE over every visible query patch in the batch.

    Parameters
    ----------
    queries : (N, G', d) tensor
        Normalized query features of the unmasked patches.
    keys : (N, G, d) tensor
        Normalized key features of all patches.
    visible_index : (N, G') long tensor
        Grid index of each query token; its positive is the key at the
        same (image, index).
    tau : float
    same_image_negatives : bool
        Restrict negatives to other patches of the same image instead of
        every other key in the batch.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    n, gq, d = queries.shape
    nk, g, _ = keys.shape
    if nk != n:
        raise ContractError(f"queries cover {n} images but keys cover {nk}")
    if gq == 0:
        raise ContractError("no unmasked query patches")
    candidates = g if same_image_negatives else n * g
    if candidates < 2:
        raise ContractError("no negatives available: need more than one key patch")
    q = queries.reshape(n * gq, d)
    k = keys.reshape(n * g, d)
    logits = q @ k.T / tau
    image = torch.arange(n, device=queries.device).repeat_interleave(gq)
    pos_col = image * g + visible_index.reshape(-1)
    if same_image_negatives:
        key_image = torch.arange(n, device=queries.device).repeat_interleave(g)
        logits = logits.masked_fill(key_image[None, :] != image[:, None], float("-inf"))
    pos = logits.gather(1, pos_col[:, None])[:, 0]
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def image_wise_loss(query_pooled, key_pooled, tau):
    """Image-level InfoNCE: positive is the same image's key, negatives the other images."""
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    n = query_pooled.shape[0]
    if n < 2:
        raise ContractError("image-wise loss needs at least two images per batch")
    logits = query_pooled @ key_pooled.T / tau
    return F.cross_entropy(logits, torch.arange(n, device=logits.device))


def entropy_recon_loss(pred, target):
    """Mean squared error over masked patches; zero when nothing is masked."""
    if pred.shape != target.shape:
        raise ContractError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    if pred.numel() == 0:
        return pred.sum() * 0.0
    return ((pred - target) ** 2).mean()


def total_loss(l_pwin, l_rec, lam):
    """Return (differentiable total, LossBreakdown)."""
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    total = l_pwin + lam * l_rec
    return total, LossBreakdown.of(l_pwin.detach() if torch.is_tensor(l_pwin) else l_pwin,
                                   l_rec.detach() if torch.is_tensor(l_rec) else l_rec, lam)
