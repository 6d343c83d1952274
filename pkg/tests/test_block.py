"""Conv FFN, the factorized block, its dense degenerate cases, and stacking."""

import pytest
import torch
import torch.nn.functional as F

from helpers import check_gradients, module_params
from vptr.attention import MultiHeadAttention, causal_mask, temporal_mhsa
from vptr.block import (
    ConvFFN,
    SpatioTemporalBlock,
    fsta_attention,
    same_location_mask,
    same_window_mask,
)
from vptr.core import fold_time
from vptr.errors import ShapeMismatchError


def zeroed_conv_ffn(d_model, d_ff=None):
    ffn = ConvFFN(d_model, d_ff)
    with torch.no_grad():
        ffn.norm.weight.zero_()
        ffn.norm.bias.zero_()
    return ffn


class TestConvFFN:
    def test_zero_input_zero_affine_gives_zero(self):
        ffn = zeroed_conv_ffn(4)
        out = ffn(torch.zeros(2, 3, 3, 4)).detach()
        assert float(out.abs().max()) == 0.0

    def test_identity_configuration_reduces_to_norm_and_activation(self):
        """Center-one depthwise kernel and identity MLPs leave only the
        layer norm (and the fixed GELU after the first MLP)."""
        d = 6
        ffn = ConvFFN(d, d_ff=d)
        with torch.no_grad():
            ffn.dw_kernel.zero_()
            ffn.dw_kernel[:, 1, 1] = 1.0
            ffn.fc1.weight.copy_(torch.eye(d))
            ffn.fc2.weight.copy_(torch.eye(d))
        z = torch.randn(2, 4, 4, d)
        expected = F.gelu(ffn.norm(z))
        assert torch.allclose(ffn(z), expected, atol=1e-6)

    def test_depthwise_mixes_neighbours_only(self):
        d = 4
        ffn = ConvFFN(d, d_ff=d)
        z = torch.randn(1, 5, 5, d)
        out = ffn(z)
        z2 = z.clone()
        z2[0, 4, 4] += 1.0  # a 3x3 kernel cannot reach (0..2, 0..2) from (4, 4)
        out2 = ffn(z2)
        assert torch.allclose(out[0, :3, :3], out2[0, :3, :3], atol=1e-7)
        assert not torch.allclose(out[0, 4, 4], out2[0, 4, 4], atol=1e-7)

    def test_rejects_wrong_width(self):
        with pytest.raises(ShapeMismatchError):
            ConvFFN(4)(torch.randn(1, 3, 3, 5))

    def test_gradcheck_f64(self):
        torch.manual_seed(0)
        ffn = ConvFFN(2, d_ff=4).to(torch.float64)
        z = torch.randn(1, 4, 4, 2, dtype=torch.float64, requires_grad=True)
        params = [z] + module_params(ffn)

        def loss():
            return (ffn(z) ** 2).sum()

        assert check_gradients(loss, params) < 1e-5


def make_block(d=16, heads=2, window=2, posenc="abs2d", pre_norm=True, seed=0,
               dtype=torch.float32):
    torch.manual_seed(seed)
    return SpatioTemporalBlock(d, heads, window, posenc=posenc, pre_norm=pre_norm).to(dtype)


class TestSpatioTemporalBlock:
    def test_shape_preserving(self):
        block = make_block(d=64, heads=8, window=4)
        z = torch.randn(2, 5, 8, 8, 64)
        assert block(z).shape == z.shape

    def test_shape_preserving_random_valid_shapes(self):
        for seed in range(5):
            torch.manual_seed(seed)
            heads = int(torch.randint(1, 3, ()))
            d = 8 * int(torch.randint(1, 3, ()))  # multiple of 4 and heads
            k = int(torch.randint(1, 3, ()))
            grid = k * int(torch.randint(1, 4, ()))
            block = make_block(d=d, heads=heads, window=k, seed=seed)
            z = torch.randn(1, int(torch.randint(1, 4, ())), grid, grid, d)
            assert block(z).shape == z.shape

    def test_causal_mask_blocks_future(self):
        block = make_block(seed=1)
        z = torch.randn(1, 5, 4, 4, 16)
        mask = causal_mask(5)
        out = block(z, temporal_mask=mask)
        z2 = z.clone()
        z2[:, 4] += torch.randn_like(z2[:, 4])
        out2 = block(z2, temporal_mask=mask)
        assert float((out[:, :4] - out2[:, :4]).abs().max()) <= 1e-6

    def test_stacked_blocks_remain_causal(self):
        blocks = [make_block(seed=s) for s in (2, 3, 4)]
        mask = causal_mask(4)
        z = torch.randn(1, 4, 4, 4, 16)

        def run(x):
            for b in blocks:
                x = b(x, temporal_mask=mask)
            return x

        out = run(z)
        for t in range(1, 4):
            z2 = z.clone()
            z2[:, t:] += torch.randn_like(z2[:, t:])
            assert float((run(z2)[:, :t] - out[:, :t]).abs().max()) <= 1e-6

    def test_batch_split_equals_batched(self):
        block = make_block(seed=5)
        z = torch.randn(2, 3, 4, 4, 16)
        full = block(z)
        parts = torch.cat([block(z[:1]), block(z[1:])], dim=0)
        assert float((full - parts).abs().max()) <= 1e-6

    def test_post_norm_variant_runs(self):
        block = make_block(pre_norm=False, seed=6)
        z = torch.randn(1, 2, 4, 4, 16)
        assert block(z).shape == z.shape

    def test_gradcheck_f64(self):
        block = make_block(d=4, heads=1, window=2, posenc="none", seed=7,
                           dtype=torch.float64)
        z = torch.randn(1, 2, 2, 2, 4, dtype=torch.float64, requires_grad=True)
        params = [z] + module_params(block)

        def loss():
            return (block(z, temporal_mask=causal_mask(2)) ** 2).sum()

        assert check_gradients(loss, params) < 1e-5


class TestFstaDegenerate:
    def test_t1_with_window_mask_equals_local_spatial(self):
        from vptr.attention import local_spatial_mhsa

        attn = MultiHeadAttention(8, 2)
        z = torch.randn(2, 1, 4, 4, 8)
        mask = same_window_mask(1, 4, 4, 2)
        dense = fsta_attention(z, attn, mask=mask)
        local = local_spatial_mhsa(fold_time(z), attn, 2, None).reshape(z.shape)
        assert float((dense - local).abs().max()) < 1e-6

    def test_1x1_grid_equals_temporal(self):
        attn = MultiHeadAttention(8, 2)
        z = torch.randn(2, 5, 1, 1, 8)
        dense = fsta_attention(z, attn)
        temporal = temporal_mhsa(z, attn, None, None)
        assert float((dense - temporal).abs().max()) < 1e-6

    def test_combined_mask_structure(self):
        """Union of the two oracle masks covers exactly same-window OR
        same-location pairs."""
        t, hf, wf, k = 3, 4, 4, 2
        win = same_window_mask(t, hf, wf, k)
        loc = same_location_mask(t, hf, wf)
        assert win.shape == loc.shape == (t * hf * wf, t * hf * wf)
        assert bool((win & loc).any())
        combined = win | loc
        assert bool(combined.diagonal().all())
        # a same-location different-time pair is in loc but not win
        s_a, s_b = 0, hf * wf  # location (0, 0) at t=0 and t=1
        assert bool(loc[s_a, s_b]) and not bool(win[s_a, s_b])

    def test_cross_attention_shapes(self):
        attn = MultiHeadAttention(8, 2)
        z = torch.randn(1, 2, 2, 2, 8)
        mem = torch.randn(1, 4, 2, 2, 8)
        out = fsta_attention(z, attn, kv=mem)
        assert out.shape == z.shape
