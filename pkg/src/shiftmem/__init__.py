"""Content-invariant image-complexity pretraining.

Shifted patchify views, patch-wise InfoNCE with in-batch patch negatives,
masked entropy modeling, and linear-probe evaluation at desk scale.
"""
from .config import RunConfig, load_config
from .corpus import Corpus, GeneratorParams, generate_synthetic, ingest_folder, split
from .image import ImageTensor, PatchGrid, image_entropy, load_image, patch_entropy, to_patch_grid
from .kernels import BACKEND as KERNEL_BACKEND
from .losses import entropy_recon_loss, patch_wise_loss, per_patch_infonce, total_loss
from .model import DualEncoder, EncoderConfig, momentum_update
from .probe import extract_embeddings, fit_linear_probe, pcc, per_class_report, srcc
from .train import lr_at, pretrain
from .views import AugmentConfig, apply_shift, make_views, sample_mask, sample_shift

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Corpus",
    "DualEncoder",
    "EncoderConfig",
    "GeneratorParams",
    "ImageTensor",
    "KERNEL_BACKEND",
    "PatchGrid",
    "RunConfig",
    "apply_shift",
    "entropy_recon_loss",
    "extract_embeddings",
    "fit_linear_probe",
    "generate_synthetic",
    "image_entropy",
    "ingest_folder",
    "load_config",
    "load_image",
    "lr_at",
    "make_views",
    "momentum_update",
    "patch_entropy",
    "patch_wise_loss",
    "pcc",
    "per_class_report",
    "per_patch_infonce",
    "pretrain",
    "sample_mask",
    "sample_shift",
    "split",
    "srcc",
    "to_patch_grid",
    "total_loss",
]
