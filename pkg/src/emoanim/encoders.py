"""Twin audio feature extractors: one tuned for content, one for emotion.

Both share the same structure: a frozen strided 1-D convolutional front-end
that downsamples raw 16 kHz audio to roughly 50 feature frames per second,
a stack of pre-norm transformer blocks, and a linear time-interpolation to
the target frame count. The emotion extractor additionally carries a
classification head (temporal mean-pool, affine map, softmax).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import AudioClip, FeatureSequence

# (kernel, stride) per layer; stride product 320 maps 16 kHz to ~50 Hz frames.
FRONTEND_LAYERS = ((10, 5), (8, 4), (8, 4), (4, 2), (4, 2))


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    d_inner: int | None = None
    conv_frontend_frozen: bool = True
    n_emotions: int = 4

    def __post_init__(self):
        if self.d_inner is None:
            self.d_inner = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.d_model, self.n_blocks, self.n_heads, self.d_inner,
               self.n_emotions) < 1:
            raise ValueError("all dimensions must be positive")

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        """Full-scale dimensions; kept for documentation parity, not desk runs."""
        return cls(d_model=1024, n_blocks=24, n_heads=16, d_inner=4096)


def init_affine_params(module: nn.Module) -> None:
    """Uniform fan-in init for weights, zeros for biases.

    Applied uniformly so gradient and overfit oracles are reproducible from
    the seed alone.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d)):
            fan_in = m.weight.shape[1] * int(np.prod(m.weight.shape[2:], initial=1))
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            bound = 1.0 / math.sqrt(m.embedding_dim)
            nn.init.uniform_(m.weight, -bound, bound)
        elif isinstance(m, nn.MultiheadAttention):
            fan_in = m.embed_dim
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.in_proj_weight, -bound, bound)
            if m.in_proj_bias is not None:
                nn.init.zeros_(m.in_proj_bias)


def interp_time(values: torch.Tensor, target_T: int) -> torch.Tensor:
    """Per-channel linear interpolation of a (T, D) tensor over [0, 1]."""
    T = values.shape[0]
    if T < 1 or target_T < 1:
        raise ValueError("both lengths must be >= 1")
    if target_T == T:
        return values
    if T == 1:
        return values.expand(target_T, values.shape[1]).clone()
    x = values.transpose(0, 1).unsqueeze(0)
    y = F.interpolate(x, size=target_T, mode="linear", align_corners=True)
    return y.squeeze(0).transpose(0, 1)


def interp_feature_sequence(seq: FeatureSequence, target_T: int,
                            fps: float | None = None) -> FeatureSequence:
    out = interp_time(torch.from_numpy(seq.values), target_T).numpy()
    return FeatureSequence(values=out, fps=seq.fps if fps is None else fps)


class ConvFrontend(nn.Module):
    """Strided convolution stack over raw audio; frozen after init by default."""

    def __init__(self, d_model: int):
        super().__init__()
        layers = []
        in_ch = 1
        for kernel, stride in FRONTEND_LAYERS:
            layers.append(nn.Conv1d(in_ch, d_model, kernel, stride=stride,
                                    padding=kernel // 2))
            layers.append(nn.GELU())
            in_ch = d_model
        self.net = nn.Sequential(*layers)

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        # samples: (N,) -> (frames, d_model)
        x = samples.view(1, 1, -1)
        return self.net(x).squeeze(0).transpose(0, 1)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, d_model: int, n_heads: int, d_inner: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_inner), nn.GELU(), nn.Linear(d_inner, d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x).unsqueeze(0)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out.squeeze(0)
        return x + self.ff(self.norm2(x))


class AudioEncoder(nn.Module):
    """Raw audio -> frame-aligned feature sequence of width d_model."""

    def __init__(self, config: EncoderConfig, with_classifier: bool = False):
        super().__init__()
        self.config = config
        self.frontend = ConvFrontend(config.d_model)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.d_model, config.n_heads, config.d_inner)
            for _ in range(config.n_blocks))
        self.final_norm = nn.LayerNorm(config.d_model)
        self.classifier = (nn.Linear(config.d_model, config.n_emotions)
                           if with_classifier else None)
        init_affine_params(self)
        if config.conv_frontend_frozen:
            for p in self.frontend.parameters():
                p.requires_grad_(False)

    def forward(self, samples: torch.Tensor, target_T: int) -> torch.Tensor:
        if samples.numel() == 0:
            raise ValueError("empty audio")
        if target_T < 1:
            raise ValueError("target_T must be >= 1")
        x = self.frontend(samples)
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        return interp_time(x, target_T)

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        """Emotion probabilities from a (T, d_model) feature tensor."""
        if self.classifier is None:
            raise RuntimeError("this encoder has no classification head")
        if features.shape[0] < 1:
            raise ValueError("features must be nonempty")
        logits = self.classifier(features.mean(dim=0))
        return torch.softmax(logits, dim=-1)

    def frontend_checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.frontend.parameters():
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


def _clip_tensor(clip: AudioClip, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(clip.samples).to(dtype)


def extract_content(encoder: AudioEncoder, clip: AudioClip,
                    target_T: int) -> FeatureSequence:
    """Content features aligned to target_T frames (inference surface)."""
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        out = encoder(_clip_tensor(clip, dtype), target_T)
    return FeatureSequence(values=out.double().numpy())


def extract_emotion(encoder: AudioEncoder, clip: AudioClip,
                    target_T: int) -> FeatureSequence:
    """Emotion features aligned to target_T frames (inference surface)."""
    return extract_content(encoder, clip, target_T)


def classify_emotion(encoder: AudioEncoder, features: FeatureSequence) -> np.ndarray:
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        probs = encoder.classify(torch.from_numpy(features.values).to(dtype))
    return probs.double().numpy()
