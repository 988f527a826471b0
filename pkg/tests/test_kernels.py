"""Compiled and pure-numpy kernels must agree."""
import numpy as np
import pytest

from shiftmem import kernels

pytestmark = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                reason="compiled extension not built")


def test_entropy_backends_agree(rng):
    gray = rng.random((50, 256))
    gray[0] = 1.0
    gray[1] = 0.0
    for bins in (2, 7, 256):
        a = kernels.entropy_batch(gray, bins, backend="compiled")
        b = kernels.entropy_batch(gray, bins, backend="python")
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_shift_backends_agree(rng):
    p = rng.random((40, 8, 8, 3))
    dy = rng.integers(-7, 8, size=40)
    dx = rng.integers(-7, 8, size=40)
    a, va = kernels.shift_batch(p, dy, dx, backend="compiled")
    b, vb = kernels.shift_batch(p, dy, dx, backend="python")
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(va, vb)


def test_blur_backends_agree(rng):
    p = rng.random((30, 16, 16, 3))
    sigma = np.where(rng.random(30) < 0.5, rng.uniform(0.1, 3.0, size=30), 0.0)
    a = kernels.blur_batch(p, sigma, backend="compiled")
    b = kernels.blur_batch(p, sigma, backend="python")
    np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)
    np.testing.assert_array_equal(a[sigma == 0], p[sigma == 0])


def test_blur_radius_clipped_on_small_patch(rng):
    p = rng.random((4, 3, 3, 1))
    sigma = np.full(4, 2.0)
    a = kernels.blur_batch(p, sigma, backend="compiled")
    b = kernels.blur_batch(p, sigma, backend="python")
    np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
