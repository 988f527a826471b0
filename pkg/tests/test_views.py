import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftmem.errors import ConfigError, ShiftError
from shiftmem.image import patch_entropy, to_patch_grid
from shiftmem.views import (
    AugmentConfig,
    Direction,
    ShiftVector,
    apply_shift,
    augment_patch,
    augment_patches,
    make_view_batch,
    make_views,
    mask_count,
    sample_mask,
    sample_shift,
    sample_shifts,
    unshift,
)

OFF = AugmentConfig(flip_probability=0.0, color_jitter_strength=0.0, blur_probability=0.0)


def oracle_shift(patch, dy, dx):
    """Double loop: out[r, c] = patch[r - dy, c - dx] when inside, else 0."""
    h, w = patch.shape[:2]
    out = np.zeros_like(patch)
    valid = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            sr, sc = r - dy, c - dx
            if 0 <= sr < h and 0 <= sc < w:
                out[r, c] = patch[sr, sc]
                valid[r, c] = True
    return out, valid


class TestSampleShift:
    def test_deterministic(self):
        a = sample_shift(np.random.default_rng(7), 5)
        b = sample_shift(np.random.default_rng(7), 5)
        assert a == b

    def test_max_shift_one(self):
        rng = np.random.default_rng(0)
        assert {sample_shift(rng, 1).magnitude for _ in range(200)} == {1}

    def test_magnitude_range_uniform(self):
        _, mags = sample_shifts(np.random.default_rng(0), 40_000, 4)
        counts = np.bincount(mags, minlength=5)
        assert counts[0] == 0
        sigma = np.sqrt(40_000 * 0.25 * 0.75)
        assert np.all(np.abs(counts[1:] - 10_000) < 3 * sigma)

    def test_direction_frequencies(self):
        rng = np.random.default_rng(2024)
        dirs = np.array([int(sample_shift(rng, 3).direction) for _ in range(80_000)])
        counts = np.bincount(dirs, minlength=8)
        p = 1 / 8
        sigma = np.sqrt(80_000 * p * (1 - p))
        assert np.all(np.abs(counts - 80_000 * p) < 3 * sigma)

    def test_rejects_zero(self):
        with pytest.raises(ConfigError):
            sample_shift(np.random.default_rng(0), 0)


class TestApplyShift:
    def test_zero_magnitude_identity(self, rng):
        p = rng.random((8, 8, 3))
        out, valid = apply_shift(p, ShiftVector(Direction.SW, 0))
        np.testing.assert_array_equal(out, p)
        assert valid.all()

    def test_east_by_one(self):
        out, valid = apply_shift(np.ones((4, 4, 1)), ShiftVector(Direction.E, 1))
        assert np.all(out[:, 0] == 0) and np.all(out[:, 1:] == 1)
        assert not valid[:, 0].any() and valid[:, 1:].all()

    def test_ne_by_two_matches_oracle(self, rng):
        p = rng.random((8, 8, 3))
        out, valid = apply_shift(p, ShiftVector(Direction.NE, 2))
        ref, ref_valid = oracle_shift(p, -2, 2)
        np.testing.assert_array_equal(out, ref)
        np.testing.assert_array_equal(valid, ref_valid)

    @pytest.mark.parametrize("direction", list(Direction))
    @pytest.mark.parametrize("mag", [1, 3, 7])
    def test_all_directions_match_oracle(self, rng, direction, mag):
        p = rng.random((8, 8, 2))
        shift = ShiftVector(direction, mag)
        out, valid = apply_shift(p, shift)
        ref, ref_valid = oracle_shift(p, *shift.offset)
        np.testing.assert_array_equal(out, ref)
        np.testing.assert_array_equal(valid, ref_valid)
        assert np.all(out[~valid] == 0)

    def test_magnitude_too_large(self, rng):
        with pytest.raises(ShiftError):
            apply_shift(rng.random((4, 4, 1)), ShiftVector(Direction.N, 4))

    def test_valid_pixel_entropy_preserved(self, rng):
        p = np.round(rng.random((16, 16, 3)) * 255) / 255
        shift = ShiftVector(Direction.SE, 3)
        out, valid = apply_shift(p, shift)
        dy, dx = shift.offset
        source_region = p[: 16 - dy, : 16 - dx]
        moved = out[valid].reshape(16 - dy, 16 - dx, 3)
        assert patch_entropy(moved).bits == pytest.approx(patch_entropy(source_region).bits, abs=1e-12)


class TestAugment:
    def test_all_off_is_identity(self, rng):
        p = rng.random((8, 8, 3))
        np.testing.assert_array_equal(augment_patch(p, np.random.default_rng(0), OFF), p)

    def test_flip_involution(self, rng):
        p = rng.random((8, 8, 3))
        cfg = AugmentConfig(flip_probability=1.0, color_jitter_strength=0.0, blur_probability=0.0)
        once = augment_patch(p, np.random.default_rng(0), cfg)
        np.testing.assert_array_equal(once, p[:, ::-1])
        np.testing.assert_array_equal(augment_patch(once, np.random.default_rng(0), cfg), p)

    def test_seeded_bit_identical(self, rng):
        p = rng.random((6, 16, 16, 3))
        a = augment_patches(p, np.random.default_rng(3), AugmentConfig())
        b = augment_patches(p, np.random.default_rng(3), AugmentConfig())
        assert a.tobytes() == b.tobytes()

    def test_output_clamped(self, rng):
        p = rng.random((32, 8, 8, 3))
        out = augment_patches(p, np.random.default_rng(1), AugmentConfig(color_jitter_strength=0.9))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shared_decisions(self):
        p = np.tile(np.linspace(0, 1, 64).reshape(1, 8, 8, 1), (5, 1, 1, 3))
        out = augment_patches(p, np.random.default_rng(4), AugmentConfig(), shared=True)
        for j in range(1, 5):
            np.testing.assert_array_equal(out[j], out[0])

    def test_blur_keeps_constant_patch(self):
        p = np.full((3, 8, 8, 3), 0.4)
        cfg = AugmentConfig(flip_probability=0.0, color_jitter_strength=0.0, blur_probability=1.0)
        np.testing.assert_allclose(augment_patches(p, np.random.default_rng(0), cfg), p, atol=1e-15)

    @pytest.mark.parametrize("kw", [{"flip_probability": 1.5}, {"blur_probability": -0.1},
                                    {"color_jitter_strength": 1.0}, {"blur_sigma_range": (0.0, 1.0)},
                                    {"max_shift": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            AugmentConfig(**kw)

    def test_max_shift_default_and_bounds(self):
        assert AugmentConfig().resolved_max_shift(16) == 8
        with pytest.raises(ConfigError):
            AugmentConfig(max_shift=16).resolved_max_shift(16)


class TestMakeViews:
    def test_identity_views(self, rng):
        grid = to_patch_grid(rng.random((16, 16, 3)), 4)
        q, k = make_views(grid, np.random.default_rng(0), OFF, shifted=False)
        np.testing.assert_array_equal(q.patches, grid.patches)
        np.testing.assert_array_equal(k.patches, grid.patches)
        assert q.valid_mask.all() and k.valid_mask.all()

    def test_deterministic(self, rng):
        grid = to_patch_grid(rng.random((32, 32, 3)), 8)
        a = make_views(grid, np.random.default_rng(5), AugmentConfig())
        b = make_views(grid, np.random.default_rng(5), AugmentConfig())
        for va, vb in zip(a, b):
            assert va.patches.tobytes() == vb.patches.tobytes()
            np.testing.assert_array_equal(va.magnitudes, vb.magnitudes)

    def test_views_are_independent(self, rng):
        grid = to_patch_grid(rng.random((32, 32, 3)), 8)
        q, k = make_views(grid, np.random.default_rng(5), AugmentConfig())
        assert not np.array_equal(q.directions * 10 + q.magnitudes, k.directions * 10 + k.magnitudes)
        assert np.all(q.magnitudes >= 1) and np.all(q.magnitudes <= 4)

    def test_tracer_pixel_provenance(self):
        # patch j carries intensity j in its centre block; both views must keep it at index j
        s, side = 16, 4
        img = np.zeros((s * side, s * side, 3))
        for j in range(side * side):
            r, c = divmod(j, side)
            img[r * s + 4:r * s + 12, c * s + 4:c * s + 12] = (j + 1) / 20
        grid = to_patch_grid(img, s)
        cfg = AugmentConfig(flip_probability=0.5, color_jitter_strength=0.0, blur_probability=0.0, max_shift=3)
        for seed in range(10):
            q, k = make_views(grid, np.random.default_rng(seed), cfg)
            for view in (q, k):
                for j in range(side * side):
                    vals = np.unique(np.round(view.patches[j][view.valid_mask[j]] * 20).astype(int))
                    assert set(vals) == {0, j + 1}

    def test_unshift_recovers_augmented_source(self, rng):
        grid = to_patch_grid(rng.random((32, 32, 3)), 8)
        cfg = AugmentConfig()
        view = make_view_batch(grid.patches[None], [np.random.default_rng(9)], cfg)[0]
        r = np.random.default_rng(9)
        aug = augment_patches(grid.patches, r, cfg)
        back = unshift(view)
        for j in range(grid.num_patches):
            dy, dx = view.shifts[j].offset
            region = np.zeros((8, 8), bool)
            region[max(0, -dy):8 - max(0, dy), max(0, -dx):8 - max(0, dx)] = True
            np.testing.assert_array_equal(back[j][region], aug[j][region])
            assert np.all(back[j][~region] == 0)

    def test_batch_matches_single(self, rng):
        x = rng.random((3, 4, 8, 8, 3))
        batch = make_view_batch(x, [np.random.default_rng(i) for i in range(3)], AugmentConfig())
        for i in range(3):
            single = make_view_batch(x[i:i + 1], [np.random.default_rng(i)], AugmentConfig())[0]
            np.testing.assert_allclose(batch[i].patches, single.patches, atol=0, rtol=0)


class TestSampleMask:
    def test_49_at_06(self):
        plan = sample_mask(np.random.default_rng(0), 49, 0.6)
        assert plan.num_masked == 29
        assert len(set(plan.masked_indices.tolist())) == 29

    def test_zero_ratio(self):
        plan = sample_mask(np.random.default_rng(0), 16, 0.0)
        assert plan.num_masked == 0 and len(plan.visible_indices()) == 16

    def test_frequency(self):
        rng = np.random.default_rng(11)
        counts = np.zeros(16)
        for _ in range(10_000):
            counts[sample_mask(rng, 16, 0.5).masked_indices] += 1
        sigma = np.sqrt(10_000 * 0.25)
        assert np.all(np.abs(counts - 5_000) < 3 * sigma)

    @pytest.mark.parametrize("ratio", [-0.1, 1.0, 1.2])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ConfigError):
            sample_mask(np.random.default_rng(0), 16, ratio)

    @given(st.integers(2, 200), st.floats(0.0, 0.95))
    @settings(max_examples=60, deadline=None)
    def test_count_is_rounded_ratio(self, g, ratio):
        m = mask_count(g, ratio)
        if m >= g:
            return
        plan = sample_mask(np.random.default_rng(g), g, ratio)
        assert plan.num_masked == m
        assert abs(m / g - ratio) <= 0.5 / g + 1e-12
        assert np.all((plan.masked_indices >= 0) & (plan.masked_indices < g))
        assert sorted(set(plan.masked_indices)) == list(plan.masked_indices)
        assert len(plan.visible_indices()) + m == g
