import math

import numpy as np
import pytest
import torch

from emoanim.decoder import (BiasedSelfAttention, EmotionGuidedAttention,
                             FusionConfig, FusionDecoder, alibi_slopes,
                             periodic_positional_encoding)


@pytest.fixture
def decoder(tiny_fusion_config):
    torch.manual_seed(0)
    return FusionDecoder(tiny_fusion_config, d_encoder=16)


def _streams(T=6, d=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(T, d, generator=g), torch.randn(T, d, generator=g),
            torch.randn(T, d, generator=g))


class TestConfig:
    def test_fused_width_is_sum(self):
        cfg = FusionConfig()
        assert cfg.d_fused == 256 + 512 + 32 + 32 == 832

    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            FusionConfig(d_emotion=3, d_content=4, d_style=2, d_level=2,
                         n_heads=4)


class TestPPE:
    def test_periodicity(self):
        ppe = periodic_positional_encoding(25, 8, period=10)
        np.testing.assert_array_equal(ppe[3].numpy(), ppe[13].numpy())
        np.testing.assert_array_equal(ppe[0].numpy(), ppe[20].numpy())

    def test_row_zero_alternates(self):
        ppe = periodic_positional_encoding(5, 6, period=30)
        np.testing.assert_allclose(ppe[0].numpy(), [0, 1, 0, 1, 0, 1], atol=0)

    def test_range(self):
        ppe = periodic_positional_encoding(40, 16, period=7)
        assert ppe.abs().max() <= 1.0

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError):
            periodic_positional_encoding(4, 5, period=3)


class TestFuseFeatures:
    def test_output_shape(self, decoder):
        emo, content, _ = _streams(5)
        fused = decoder.fuse_features(emo, content, style_id=1, level_id=0)
        assert fused.shape == (5, 16)

    def test_style_level_segments_constant_across_frames(self, decoder):
        emo, content, _ = _streams(7)
        fused = decoder.fuse_features(emo, content, style_id=2, level_id=1)
        tail = fused[:, 12:]  # style + level columns
        assert torch.equal(tail, tail[0].expand_as(tail))

    def test_style_change_touches_only_style_columns(self, decoder):
        emo, content, _ = _streams(4)
        a = decoder.fuse_features(emo, content, style_id=0, level_id=0)
        b = decoder.fuse_features(emo, content, style_id=1, level_id=0)
        assert torch.equal(a[:, :12], b[:, :12])  # emotion+content unchanged
        assert torch.equal(a[:, 14:], b[:, 14:])  # level unchanged
        assert not torch.equal(a[:, 12:14], b[:, 12:14])

    def test_range_checks(self, decoder):
        emo, content, _ = _streams(3)
        with pytest.raises(ValueError):
            decoder.fuse_features(emo, content, style_id=99, level_id=0)
        with pytest.raises(ValueError):
            decoder.fuse_features(emo, content[:2], style_id=0, level_id=0)

    def test_paper_column_layout(self):
        # At full width the per-clip segments occupy columns 768-831.
        torch.manual_seed(0)
        dec = FusionDecoder(FusionConfig(), d_encoder=16)
        emo, content, _ = _streams(3)
        fused = dec.fuse_features(emo, content, style_id=5, level_id=1)
        assert fused.shape == (3, 832)
        tail = fused[:, 768:832]
        assert torch.equal(tail, tail[0].expand_as(tail))


class TestBiasedSelfAttention:
    def test_single_position_is_value_path(self):
        torch.manual_seed(1)
        attn = BiasedSelfAttention(8, n_heads=2)
        x = torch.randn(1, 8)
        _, _, v = attn.qkv(x).chunk(3, dim=-1)
        expected = attn.out(v)
        out = attn(x)
        assert torch.allclose(out, expected, atol=1e-6)

    def test_causality_bitwise(self):
        torch.manual_seed(2)
        attn = BiasedSelfAttention(8, n_heads=2)
        x = torch.randn(6, 8)
        y = attn(x)
        x2 = x.clone()
        x2[4:] += 1.0
        y2 = attn(x2)
        assert torch.equal(y[:4], y2[:4])
        assert not torch.equal(y[4:], y2[4:])

    def test_nearer_key_gets_higher_weight(self):
        # With zeroed q/k projections the logits reduce to the distance bias,
        # so the softmax over two equidistant-content keys is computable by hand.
        attn = BiasedSelfAttention(4, n_heads=1)
        with torch.no_grad():
            attn.qkv.weight.zero_()
            attn.qkv.bias.zero_()
        x = torch.randn(2, 4)
        _, w = attn(x, need_weights=True)
        m = alibi_slopes(1)[0].item()
        expected_far = math.exp(-m) / (1.0 + math.exp(-m))
        assert w[0, 1, 1] > w[0, 1, 0]
        assert abs(w[0, 1, 0].item() - expected_far) < 1e-6

    def test_rows_sum_to_one(self):
        torch.manual_seed(3)
        attn = BiasedSelfAttention(16, n_heads=4)
        _, w = attn(torch.randn(9, 16), need_weights=True)
        np.testing.assert_allclose(w.sum(dim=-1).detach().numpy(), 1.0, atol=1e-6)

    def test_slope_schedule(self):
        np.testing.assert_allclose(alibi_slopes(4).numpy(),
                                   [2 ** -2, 2 ** -4, 2 ** -6, 2 ** -8])


class TestEmotionGuidedAttention:
    def test_residual_identity_with_zero_values(self):
        torch.manual_seed(4)
        attn = EmotionGuidedAttention(8, n_heads=2)
        with torch.no_grad():
            attn.v_proj.weight.zero_()
            attn.v_proj.bias.zero_()
            attn.out.bias.zero_()
        x = torch.randn(5, 8)
        out = attn(x, torch.zeros(5, 8))
        assert torch.allclose(out, x, atol=1e-7)

    def test_shape_and_length_check(self):
        torch.manual_seed(5)
        attn = EmotionGuidedAttention(8, n_heads=2)
        out = attn(torch.randn(4, 8), torch.randn(4, 8))
        assert out.shape == (4, 8)
        with pytest.raises(ValueError):
            attn(torch.randn(4, 8), torch.randn(3, 8))

    def test_sensitive_to_emotion_stream(self):
        torch.manual_seed(6)
        attn = EmotionGuidedAttention(8, n_heads=2)
        x = torch.randn(4, 8)
        m1, m2 = torch.randn(4, 8), torch.randn(4, 8)
        delta = (attn(x, m1) - attn(x, m2)).norm()
        assert delta > 0

    def test_rows_sum_to_one(self):
        torch.manual_seed(7)
        attn = EmotionGuidedAttention(16, n_heads=4)
        _, w = attn(torch.randn(6, 16), torch.randn(6, 16), need_weights=True)
        np.testing.assert_allclose(w.sum(dim=-1).detach().numpy(), 1.0, atol=1e-6)


class TestDecodeBlendshapes:
    def test_output_shape(self, decoder):
        emo, content, raw = _streams(30)
        out = decoder(emo, content, raw, style_id=0, level_id=0)
        assert out.shape == (30, 52)

    def test_zero_head_gives_zero_output(self, decoder):
        with torch.no_grad():
            decoder.head.weight.zero_()
            decoder.head.bias.zero_()
        emo, content, raw = _streams(5)
        out = decoder(emo, content, raw, style_id=0, level_id=0)
        assert torch.equal(out, torch.zeros(5, 52))

    def test_determinism(self, decoder):
        emo, content, raw = _streams(8)
        a = decoder(emo, content, raw, style_id=1, level_id=1)
        b = decoder(emo, content, raw, style_id=1, level_id=1)
        assert torch.equal(a, b)

    def test_full_stack_causality(self, decoder):
        emo, content, raw = _streams(8)
        base = decoder(emo, content, raw, style_id=0, level_id=0)
        emo2, raw2 = emo.clone(), raw.clone()
        emo2[5:] += 1.0
        raw2[5:] -= 2.0
        out = decoder(emo2, content, raw2, style_id=0, level_id=0)
        assert torch.equal(base[:5], out[:5])
        assert not torch.equal(base[5:], out[5:])

    def test_gradcheck_through_stack(self, tiny_fusion_config):
        torch.manual_seed(8)
        dec = FusionDecoder(tiny_fusion_config, d_encoder=16).double()
        fused = torch.randn(3, 16, dtype=torch.float64, requires_grad=True)
        raw = torch.randn(3, 16, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(
            lambda f, r: dec.decode_blendshapes(f, r).sum(), (fused, raw),
            eps=1e-6, atol=1e-6)
