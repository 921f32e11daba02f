"""End-to-end training on cross-reconstruction pairs, plus inference and eval.

One training step runs three reconstruction branches on a pair:
  - cross c1+e1: content from clip A, emotion from clip B;
  - cross c2+e2: content from clip B, emotion from clip A;
  - self  c1+e2: both streams from clip A;
adds the velocity term on each branch against its own target and the
classification term on both clips' emotion features, then applies one Adam
update to every non-frozen parameter.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .data import (AudioClip, BlendshapeSequence, ClipDataset, CrossPair,
                   frames_for_audio, sample_cross_pair)
from .decoder import FusionConfig, FusionDecoder
from .encoders import AudioEncoder, EncoderConfig
from .losses import (LossReport, LossWeights, classification_loss,
                     cross_reconstruction_loss, self_reconstruction_loss,
                     total_loss, velocity_loss)
from . import rig as rig_module

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 1
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.adam_betas = tuple(self.adam_betas)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)


class SpeechAnimator(nn.Module):
    """Full model: content/emotion encoders feeding the fusion decoder."""

    def __init__(self, encoder_config: EncoderConfig, fusion_config: FusionConfig):
        super().__init__()
        self.encoder_config = encoder_config
        self.fusion_config = fusion_config
        self.content_encoder = AudioEncoder(encoder_config)
        self.emotion_encoder = AudioEncoder(encoder_config, with_classifier=True)
        self.decoder = FusionDecoder(fusion_config, encoder_config.d_model)

    def predict(self, content_clip: torch.Tensor, emotion_clip: torch.Tensor,
                target_T: int, style_id: int, level_id: int) -> torch.Tensor:
        """Blendshape frames combining one clip's content with another's emotion."""
        content = self.content_encoder(content_clip, target_T)
        emotion = self.emotion_encoder(emotion_clip, target_T)
        return self.decoder(emotion, content, emotion, style_id, level_id)

    def parameter_manifest(self) -> dict:
        return {name: {"shape": list(p.shape), "frozen": not p.requires_grad}
                for name, p in self.named_parameters()}


def build_model(encoder_config: EncoderConfig, fusion_config: FusionConfig,
                seed: int = 0, dtype: torch.dtype = torch.float32) -> SpeechAnimator:
    torch.manual_seed(seed)
    return SpeechAnimator(encoder_config, fusion_config).to(dtype)


@dataclass
class TrainState:
    model: SpeechAnimator
    optimizer: torch.optim.Adam
    config: TrainConfig
    step: int = 0
    sampler: np.random.Generator = None

    @classmethod
    def create(cls, encoder_config: EncoderConfig, fusion_config: FusionConfig,
               config: TrainConfig) -> "TrainState":
        model = build_model(encoder_config, fusion_config, seed=config.seed)
        optimizer = torch.optim.Adam(
            (p for p in model.parameters() if p.requires_grad),
            lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps)
        return cls(model=model, optimizer=optimizer, config=config,
                   sampler=np.random.default_rng(config.seed))


def _clip_tensor(clip: AudioClip, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(clip.samples).to(dtype)


def _gt_tensor(seq: BlendshapeSequence, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(seq.coeffs).to(dtype)


def pair_losses(model: SpeechAnimator, pair: CrossPair,
                weights: LossWeights) -> tuple[torch.Tensor, LossReport]:
    """Total loss over the three branches of one cross pair."""
    dtype = next(model.parameters()).dtype
    a = _clip_tensor(pair.audio_a, dtype)
    b = _clip_tensor(pair.audio_b, dtype)
    style = pair.audio_a.speaker_id

    pred_c1e1 = model.predict(a, b, pair.gt_c1e1.n_frames, style, pair.audio_b.level)
    pred_c2e2 = model.predict(b, a, pair.gt_c2e2.n_frames, style, pair.audio_a.level)
    pred_c1e2 = model.predict(a, a, pair.gt_c1e2.n_frames, style, pair.audio_a.level)

    gt_c1e1 = _gt_tensor(pair.gt_c1e1, dtype)
    gt_c2e2 = _gt_tensor(pair.gt_c2e2, dtype)
    gt_c1e2 = _gt_tensor(pair.gt_c1e2, dtype)

    cross = cross_reconstruction_loss(pred_c1e1, pred_c2e2, gt_c1e1, gt_c2e2)
    self_rec = self_reconstruction_loss(pred_c1e2, gt_c1e2)
    vel = (velocity_loss(pred_c1e1, gt_c1e1)
           + velocity_loss(pred_c2e2, gt_c2e2)
           + velocity_loss(pred_c1e2, gt_c1e2)) / 3.0

    probs = torch.stack([
        model.emotion_encoder.classify(
            model.emotion_encoder(a, pair.gt_c1e2.n_frames)),
        model.emotion_encoder.classify(
            model.emotion_encoder(b, pair.gt_c2e1.n_frames)),
    ])
    labels = [pair.audio_a.emotion_id, pair.audio_b.emotion_id]
    cls = classification_loss(probs, labels)

    return total_loss(cross, self_rec, vel, cls, weights)


def train_step(state: TrainState, pair: CrossPair,
               weights: LossWeights | None = None) -> LossReport:
    """One optimizer update from a single pair."""
    return train_batch(state, [pair], weights)


def train_batch(state: TrainState, pairs: list[CrossPair],
                weights: LossWeights | None = None) -> LossReport:
    """One optimizer update from the mean loss over a batch of pairs."""
    weights = weights if weights is not None else state.config.weights
    state.optimizer.zero_grad()
    totals, reports = [], []
    for pair in pairs:
        total, report = pair_losses(state.model, pair, weights)
        totals.append(total)
        reports.append(report)
    batch_total = torch.stack(totals).mean()
    if not torch.isfinite(batch_total):
        raise FloatingPointError(f"non-finite batch loss at step {state.step}")
    batch_total.backward()
    state.optimizer.step()
    state.step += 1
    n = len(reports)
    return LossReport(
        cross=sum(r.cross for r in reports) / n,
        self_rec=sum(r.self_rec for r in reports) / n,
        velocity=sum(r.velocity for r in reports) / n,
        classification=sum(r.classification for r in reports) / n,
        total=sum(r.total for r in reports) / n)


def train(state: TrainState, dataset: ClipDataset, n_steps: int,
          log_path: str | os.PathLike | None = None) -> list[LossReport]:
    """Run n_steps batched updates with pairs drawn from the dataset."""
    reports = []
    log = open(log_path, "a") if log_path else None
    try:
        for _ in range(n_steps):
            pairs = [sample_cross_pair(dataset, state.sampler)
                     for _ in range(state.config.batch_size)]
            report = train_batch(state, pairs)
            reports.append(report)
            if log:
                record = {"step": state.step, **json.loads(report.to_json())}
                log.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log:
            log.close()
    return reports


def infer(model: SpeechAnimator, clip: AudioClip, level_id: int, style_id: int,
          clamp: bool = False) -> BlendshapeSequence:
    """Blendshape frames for one clip; both extractors run on the same audio."""
    target_T = frames_for_audio(clip.n_samples, clip.sample_rate)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model.predict(_clip_tensor(clip, dtype), _clip_tensor(clip, dtype),
                            target_T, style_id, level_id)
    coeffs = out.double().numpy()
    if clamp:
        coeffs = np.clip(coeffs, 0.0, 1.0)
    return BlendshapeSequence(coeffs=coeffs)


def evaluate(model: SpeechAnimator, dataset: ClipDataset,
             rig: rig_module.RigTemplateSet, mode: str = "delta") -> dict:
    """Vertex-error metrics plus emotion classification accuracy."""
    if len(dataset) == 0:
        raise ValueError("evaluation split is empty")
    lves, eves, lip_avgs = [], [], []
    correct = 0
    dtype = next(model.parameters()).dtype
    for rec in dataset:
        pred = infer(model, rec.clip, rec.clip.level, rec.clip.speaker_id)
        if pred.n_frames != rec.gt.n_frames:
            raise ValueError("prediction/ground-truth frame mismatch")
        pred_verts = rig_module.blend_sequence(rig, pred, mode=mode)
        gt_verts = rig_module.blend_sequence(rig, rec.gt, mode=mode)
        lves.append(rig_module.lve(pred_verts, gt_verts, rig.lip_vertices))
        eves.append(rig_module.eve(pred_verts, gt_verts, rig.eye_forehead_vertices))
        lip_avgs.append(rig_module.lip_avg_error(pred_verts, gt_verts,
                                                 rig.lip_vertices))
        with torch.no_grad():
            feats = model.emotion_encoder(_clip_tensor(rec.clip, dtype),
                                          rec.gt.n_frames)
            probs = model.emotion_encoder.classify(feats)
        if int(probs.argmax()) == rec.clip.emotion_id:
            correct += 1
    return {
        "lve_mm": float(np.mean(lves)),
        "eve_mm": float(np.mean(eves)),
        "lip_avg_mm": float(np.mean(lip_avgs)),
        "classification_accuracy": correct / len(dataset),
        "n_clips": len(dataset),
    }


def save_checkpoint(path: str | os.PathLike, state: TrainState) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "encoder_config": asdict(state.model.encoder_config),
        "fusion_config": asdict(state.model.fusion_config),
        "train_config": asdict(state.config),
        "model_state": state.model.state_dict(),
        "optimizer_state": state.optimizer.state_dict(),
        "manifest": state.model.parameter_manifest(),
        "step": state.step,
        "torch_rng": torch.get_rng_state(),
        "sampler_state": state.sampler.bit_generator.state,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | os.PathLike) -> TrainState:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')}")
    encoder_config = EncoderConfig(**payload["encoder_config"])
    fusion_config = FusionConfig(**payload["fusion_config"])
    config = TrainConfig(**payload["train_config"])
    state = TrainState.create(encoder_config, fusion_config, config)
    state.model.load_state_dict(payload["model_state"])
    state.optimizer.load_state_dict(payload["optimizer_state"])
    state.step = payload["step"]
    torch.set_rng_state(payload["torch_rng"])
    state.sampler.bit_generator.state = payload["sampler_state"]
    return state
