import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftmem.errors import ContractError
from shiftmem.losses import (
    LossBreakdown,
    entropy_recon_loss,
    image_wise_loss,
    patch_wise_loss,
    per_patch_infonce,
    total_loss,
)


def unit(rng, *shape):
    x = rng.normal(size=shape)
    return torch.as_tensor(x / np.linalg.norm(x, axis=-1, keepdims=True))


def oracle_patch_wise(q, k, visible, tau, same_image=False):
    """Double loop over (image, visible patch), one softmax per query."""
    q, k, visible = q.numpy(), k.numpy(), visible.numpy()
    n, gq, _ = q.shape
    g = k.shape[1]
    losses = []
    for i in range(n):
        for j in range(gq):
            pos = math.exp(q[i, j] @ k[i, visible[i, j]] / tau)
            denom = 0.0
            for a in range(n):
                if same_image and a != i:
                    continue
                for b in range(g):
                    denom += math.exp(q[i, j] @ k[a, b] / tau)
            losses.append(-math.log(pos / denom))
    return sum(losses) / len(losses)


class TestPerPatch:
    @pytest.mark.parametrize("n", [1, 7, 100])
    def test_uniform_logits(self, n):
        q = torch.zeros(4, dtype=torch.float64)
        loss = per_patch_infonce(q, torch.zeros(4, dtype=torch.float64), torch.zeros((n, 4), dtype=torch.float64), 0.2)
        assert loss.item() == pytest.approx(math.log(n + 1), abs=1e-15)

    def test_closed_form_single_negative(self):
        # positive logit 1/0.1, negative logit -1/0.1 -> ln(1 + e^-20)
        q = torch.tensor([1.0, 0.0], dtype=torch.float64)
        loss = per_patch_infonce(q, q, -q[None], 0.1)
        assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-12)

    def test_matches_log_softmax(self, rng):
        q, kp, neg = unit(rng, 8), unit(rng, 8), unit(rng, 5, 8)
        logits = torch.cat([(q @ kp)[None], neg @ q]) / 0.3
        assert per_patch_infonce(q, kp, neg, 0.3).item() == pytest.approx(-F.log_softmax(logits, 0)[0].item(), abs=1e-14)

    def test_monotone_in_positive_similarity(self, rng):
        q = torch.tensor([1.0, 0.0], dtype=torch.float64)
        neg = unit(rng, 6, 2)
        angles = np.linspace(0, math.pi, 9)
        losses = [per_patch_infonce(q, torch.tensor([math.cos(a), math.sin(a)], dtype=torch.float64), neg, 0.2).item()
                  for a in angles]
        assert np.all(np.diff(losses) > 0)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_temperature(self, tau):
        z = torch.zeros(2)
        with pytest.raises(ContractError):
            per_patch_infonce(z, z, torch.zeros((1, 2)), tau)

    def test_no_negatives(self):
        z = torch.zeros(2)
        with pytest.raises(ContractError):
            per_patch_infonce(z, z, torch.zeros((0, 2)), 0.2)


class TestPatchWise:
    @pytest.mark.parametrize("same_image", [False, True])
    def test_loop_oracle(self, rng, same_image):
        n, g, m, d = 2, 4, 2, 8
        keys = unit(rng, n, g, d)
        visible = torch.as_tensor(np.stack([np.sort(rng.permutation(g)[: g - m]) for _ in range(n)]))
        queries = unit(rng, n, g - m, d)
        got = patch_wise_loss(queries, keys, visible, 0.2, same_image).item()
        assert got == pytest.approx(oracle_patch_wise(queries, keys, visible, 0.2, same_image), abs=1e-10)

    def test_uniform_counts_negatives(self):
        # all-zero features: every logit equal, loss = ln(number of keys considered)
        n, g, d = 3, 4, 5
        q = torch.zeros((n, 2, d), dtype=torch.float64)
        k = torch.zeros((n, g, d), dtype=torch.float64)
        vis = torch.tensor([[0, 3]] * n)
        assert patch_wise_loss(q, k, vis, 0.2).item() == pytest.approx(math.log(n * g), abs=1e-14)
        assert patch_wise_loss(q, k, vis, 0.2, True).item() == pytest.approx(math.log(g), abs=1e-14)

    def test_masked_keys_remain_negatives(self, rng):
        keys = unit(rng, 1, 4, 6)
        vis = torch.tensor([[0, 2]])
        q = unit(rng, 1, 2, 6)
        a = patch_wise_loss(q, keys, vis, 0.2).item()
        moved = keys.clone()
        moved[0, 3] = -moved[0, 3]
        b = patch_wise_loss(q, moved, vis, 0.2).item()
        assert a != b
        assert b == pytest.approx(oracle_patch_wise(q, moved, vis, 0.2), abs=1e-10)

    def test_image_permutation_invariant(self, rng):
        keys, q = unit(rng, 3, 4, 6), unit(rng, 3, 2, 6)
        vis = torch.tensor([[0, 1], [2, 3], [1, 3]])
        perm = torch.tensor([2, 0, 1])
        a = patch_wise_loss(q, keys, vis, 0.2)
        b = patch_wise_loss(q[perm], keys[perm], vis[perm], 0.2)
        assert a.item() == pytest.approx(b.item(), abs=1e-13)

    def test_perfect_alignment_beats_random(self, rng):
        keys = unit(rng, 2, 4, 16)
        vis = torch.arange(4).repeat(2, 1)
        aligned = patch_wise_loss(keys.clone(), keys, vis, 0.1).item()
        random = patch_wise_loss(unit(rng, 2, 4, 16), keys, vis, 0.1).item()
        assert aligned < random

    def test_random_init_near_log_k(self, rng):
        n, g, d = 8, 16, 64
        q, k = unit(rng, n, g, d), unit(rng, n, g, d)
        loss = patch_wise_loss(q, k, torch.arange(g).repeat(n, 1), 0.2).item()
        assert abs(loss - math.log(n * g)) < 0.5

    def test_finite_difference_gradient(self, rng):
        keys = unit(rng, 2, 4, 5)
        vis = torch.tensor([[1, 2], [0, 3]])
        q = torch.as_tensor(rng.normal(size=(2, 2, 5)), dtype=torch.float64).requires_grad_()

        def f(x):
            return patch_wise_loss(F.normalize(x, dim=-1), keys, vis, 0.2)

        f(q).backward()
        h = 1e-5
        num = torch.zeros_like(q)
        flat = q.detach().clone().reshape(-1)
        for i in range(flat.numel()):
            up, dn = flat.clone(), flat.clone()
            up[i] += h
            dn[i] -= h
            num.view(-1)[i] = (f(up.view_as(q)) - f(dn.view_as(q))) / (2 * h)
        err = (q.grad - num).norm() / max(num.norm(), 1e-12)
        assert err < 1e-4

    def test_contracts(self, rng):
        with pytest.raises(ContractError):
            patch_wise_loss(unit(rng, 2, 1, 3), unit(rng, 3, 2, 3), torch.zeros((2, 1), dtype=torch.long), 0.2)
        with pytest.raises(ContractError):
            patch_wise_loss(unit(rng, 1, 0, 3), unit(rng, 1, 2, 3), torch.zeros((1, 0), dtype=torch.long), 0.2)
        with pytest.raises(ContractError):
            patch_wise_loss(unit(rng, 1, 1, 3), unit(rng, 1, 1, 3), torch.zeros((1, 1), dtype=torch.long), 0.2)
        with pytest.raises(ContractError):
            patch_wise_loss(unit(rng, 1, 1, 3), unit(rng, 1, 2, 3), torch.zeros((1, 1), dtype=torch.long), 0.0)


class TestImageWise:
    def test_matches_oracle(self, rng):
        q, k = unit(rng, 4, 6), unit(rng, 4, 6)
        logits = (q @ k.T).numpy() / 0.2
        expect = np.mean([np.log(np.exp(row).sum()) - row[i] for i, row in enumerate(logits)])
        assert image_wise_loss(q, k, 0.2).item() == pytest.approx(expect, abs=1e-12)

    def test_needs_two_images(self, rng):
        with pytest.raises(ContractError):
            image_wise_loss(unit(rng, 1, 4), unit(rng, 1, 4), 0.2)


class TestRecon:
    def test_hand_mse(self):
        pred = torch.tensor([[[0.1], [0.5]], [[0.9], [0.0]]], dtype=torch.float64)
        target = torch.tensor([[[0.2], [0.5]], [[0.6], [0.4]]], dtype=torch.float64)
        expect = (0.01 + 0.0 + 0.09 + 0.16) / 4
        assert entropy_recon_loss(pred, target).item() == pytest.approx(expect, abs=1e-12)

    def test_perfect_prediction(self, rng):
        t = torch.as_tensor(rng.random((3, 4, 1)))
        assert entropy_recon_loss(t.clone(), t).item() == 0.0

    def test_empty_is_zero(self):
        assert entropy_recon_loss(torch.zeros((2, 0, 1)), torch.zeros((2, 0, 1))).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            entropy_recon_loss(torch.zeros((2, 3, 1)), torch.zeros((2, 2, 1)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_nonnegative(self, values):
        t = torch.tensor(values, dtype=torch.float64)[None, :, None]
        assert entropy_recon_loss(t, 1 - t).item() >= 0


class TestTotal:
    def test_weighting(self):
        total, br = total_loss(torch.tensor(1.5), torch.tensor(0.25), 2.0)
        assert total.item() == pytest.approx(2.0)
        assert br == LossBreakdown(1.5, 0.25, 2.0, 2.0)
        assert br.as_dict() == {"l_pwin": 1.5, "l_rec": 0.25, "lambda": 2.0, "total": 2.0}

    def test_lambda_zero_drops_rec(self):
        total, br = total_loss(torch.tensor(1.5), torch.tensor(9.0), 0.0)
        assert total.item() == 1.5 and br.l_rec == 9.0

    def test_negative_lambda(self):
        with pytest.raises(ContractError):
            total_loss(torch.tensor(1.0), torch.tensor(1.0), -0.1)

    def test_differentiable(self):
        a = torch.tensor(1.0, requires_grad=True)
        b = torch.tensor(2.0, requires_grad=True)
        total, _ = total_loss(a, b, 2.0)
        total.backward()
        assert a.grad.item() == 1.0 and b.grad.item() == 2.0
