import numpy as np
import pytest
import torch

from shiftmem.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


def tiny_config(**train):
    """8x8 images, 4x4 patches, G=4, d=8, depth=1."""
    base = {"batch_size": 4, "epochs": 1, "warmup_epochs": 0, "base_lr": 1e-3, "lr_reference_batch": None}
    base.update(train)
    return RunConfig.from_dict({
        "train": base,
        "encoder": {"patch_size": 4, "grid_side": 2, "channels": 3, "embed_dim": 8, "depth": 1, "heads": 2,
                    "mlp_ratio": 2.0, "proj_dim": 4, "proj_hidden": 8, "decoder_dim": 4,
                    "decoder_depth": 1, "decoder_heads": 2},
        "generator": {"image_size": 8, "patch_size": 4, "n": 8},
        "augment": {"max_shift": 2},
    })


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
