"""Emotion-guided feature fusion decoder.

Per frame, projected emotion (256) and content (512) features are
concatenated with 32-dim style and level embeddings into an 832-wide fused
vector. The stack is: periodic positional encoding, causal multi-head
self-attention with distance-proportional additive bias, emotion-guided
cross-attention against the raw emotion features, a feed-forward layer, and
a fully connected head down to the 52 blendshape channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .data import N_CHANNELS
from .encoders import init_affine_params


@dataclass
class FusionConfig:
    d_emotion: int = 256
    d_content: int = 512
    d_style: int = 32
    d_level: int = 32
    n_heads: int = 4
    ppe_period: int = 30
    n_styles: int = 24
    n_levels: int = 2
    n_decoder_blocks: int = 1

    def __post_init__(self):
        if min(self.d_emotion, self.d_content, self.d_style, self.d_level,
               self.n_heads, self.ppe_period, self.n_styles, self.n_levels,
               self.n_decoder_blocks) < 1:
            raise ValueError("all dimensions must be positive")
        if self.d_fused % self.n_heads != 0:
            raise ValueError("fused width must be divisible by n_heads")
        if self.d_fused % 2 != 0:
            raise ValueError("fused width must be even")

    @property
    def d_fused(self) -> int:
        return self.d_emotion + self.d_content + self.d_style + self.d_level


def periodic_positional_encoding(T: int, d: int, period: int) -> torch.Tensor:
    """Sinusoidal encoding on a modular time index, so rows repeat every period."""
    if T < 1 or d < 1 or period < 1:
        raise ValueError("T, d and period must be >= 1")
    if d % 2 != 0:
        raise ValueError("d must be even")
    t = torch.arange(T, dtype=torch.float64) % period
    i = torch.arange(d // 2, dtype=torch.float64)
    arg = t[:, None] / torch.pow(torch.tensor(10000.0, dtype=torch.float64),
                                 2.0 * i[None, :] / d)
    ppe = torch.empty(T, d, dtype=torch.float64)
    ppe[:, 0::2] = torch.sin(arg)
    ppe[:, 1::2] = torch.cos(arg)
    return ppe


def alibi_slopes(n_heads: int) -> torch.Tensor:
    return torch.tensor([2.0 ** (-8.0 * (h + 1) / n_heads) for h in range(n_heads)])


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    T, d = x.shape
    return x.view(T, n_heads, d // n_heads).permute(1, 0, 2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    h, T, dh = x.shape
    return x.permute(1, 0, 2).reshape(T, h * dh)


class BiasedSelfAttention(nn.Module):
    """Causal multi-head self-attention with additive linear distance bias.

    The logit for query position i attending to key position j <= i receives
    slope_h * (j - i), so nearer frames get strictly higher weight; j > i is
    masked out entirely.
    """

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.register_buffer("slopes", alibi_slopes(n_heads), persistent=False)

    def forward(self, x: torch.Tensor, need_weights: bool = False):
        T, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = _split_heads(q, self.n_heads)
        k = _split_heads(k, self.n_heads)
        v = _split_heads(v, self.n_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // self.n_heads)
        pos = torch.arange(T, device=x.device)
        dist = (pos[None, :] - pos[:, None]).to(x.dtype)  # j - i
        scores = scores + self.slopes.to(x.dtype)[:, None, None] * dist
        causal = pos[None, :] > pos[:, None]
        scores = scores.masked_fill(causal, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = self.out(_merge_heads(weights @ v))
        if need_weights:
            return out, weights
        return out


class EmotionGuidedAttention(nn.Module):
    """Cross-attention: queries from the fused stream, keys/values from the
    (projected) emotion stream, with a residual connection around the sublayer.

    Masked causally so the full decoder stack stays causal in all inputs.
    """

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.norm = nn.LayerNorm(d_model)
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, memory: torch.Tensor,
                need_weights: bool = False):
        if x.shape[0] != memory.shape[0]:
            raise ValueError("fused and emotion streams must have equal length")
        T, d = x.shape
        q = _split_heads(self.q_proj(self.norm(x)), self.n_heads)
        k = _split_heads(self.k_proj(memory), self.n_heads)
        v = _split_heads(self.v_proj(memory), self.n_heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // self.n_heads)
        pos = torch.arange(T, device=x.device)
        scores = scores.masked_fill(pos[None, :] > pos[:, None], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = x + self.out(_merge_heads(weights @ v))
        if need_weights:
            return out, weights
        return out


class DecoderBlock(nn.Module):
    """Pre-norm block: biased self-attention, emotion guidance, feed-forward."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = BiasedSelfAttention(d_model, n_heads)
        self.guided_attn = EmotionGuidedAttention(d_model, n_heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model), nn.GELU(),
            nn.Linear(4 * d_model, d_model))

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = self.guided_attn(x, memory)  # residual and pre-norm live inside
        return x + self.ff(self.norm3(x))


class FusionDecoder(nn.Module):
    """Fused features + raw emotion features -> 52 blendshape channels."""

    def __init__(self, config: FusionConfig, d_encoder: int):
        super().__init__()
        self.config = config
        self.proj_emotion = nn.Linear(d_encoder, config.d_emotion)
        self.proj_content = nn.Linear(d_encoder, config.d_content)
        self.style_embed = nn.Embedding(config.n_styles, config.d_style)
        self.level_embed = nn.Embedding(config.n_levels, config.d_level)
        self.guide_proj = nn.Linear(d_encoder, config.d_fused)
        self.blocks = nn.ModuleList(
            DecoderBlock(config.d_fused, config.n_heads)
            for _ in range(config.n_decoder_blocks))
        self.final_norm = nn.LayerNorm(config.d_fused)
        self.head = nn.Linear(config.d_fused, N_CHANNELS)
        init_affine_params(self)

    def fuse_features(self, emo: torch.Tensor, content: torch.Tensor,
                      style_id: int, level_id: int) -> torch.Tensor:
        """Concatenate projected streams with per-clip style/level embeddings."""
        if emo.shape[0] != content.shape[0]:
            raise ValueError("emotion and content streams must have equal length")
        if not 0 <= style_id < self.config.n_styles:
            raise ValueError(f"style_id out of range [0, {self.config.n_styles})")
        if not 0 <= level_id < self.config.n_levels:
            raise ValueError(f"level_id out of range [0, {self.config.n_levels})")
        T = emo.shape[0]
        dtype = emo.dtype
        style = self.style_embed.weight[style_id].to(dtype).expand(T, -1)
        level = self.level_embed.weight[level_id].to(dtype).expand(T, -1)
        return torch.cat(
            [self.proj_emotion(emo), self.proj_content(content), style, level],
            dim=-1)

    def decode_blendshapes(self, fused: torch.Tensor,
                           emo_raw: torch.Tensor) -> torch.Tensor:
        """Run the decoder stack over a fused (T, d_fused) sequence."""
        if fused.shape[0] != emo_raw.shape[0]:
            raise ValueError("fused and emotion streams must have equal length")
        T = fused.shape[0]
        ppe = periodic_positional_encoding(
            T, self.config.d_fused, self.config.ppe_period).to(fused.dtype)
        x = fused + ppe
        memory = self.guide_proj(emo_raw)
        for block in self.blocks:
            x = block(x, memory)
        return self.head(self.final_norm(x))

    def forward(self, emo: torch.Tensor, content: torch.Tensor,
                emo_raw: torch.Tensor, style_id: int, level_id: int) -> torch.Tensor:
        fused = self.fuse_features(emo, content, style_id, level_id)
        return self.decode_blendshapes(fused, emo_raw)
