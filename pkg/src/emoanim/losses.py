"""Training objective: cross/self reconstruction, velocity, classification.

All squared-error terms are normalized by element count (mean square), so the
default weights stay meaningful regardless of sequence length. The total is
lambda_cross * L_cross + lambda_self * L_self + 0.5 * L_vel + 0.1 * L_cls
under the default weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import torch

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda_cross: float = 1.0
    lambda_self: float = 1.0
    lambda_velocity: float = 0.5
    lambda_classification: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0.0 and value == value):
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass
class LossReport:
    cross: float
    self_rec: float
    velocity: float
    classification: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def _mean_square(pred, gt) -> torch.Tensor:
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return ((pred - gt) ** 2).mean()


def cross_reconstruction_loss(pred_c1e1, pred_c2e2, gt_c1e1, gt_c2e2) -> torch.Tensor:
    """Mean-square error of both swapped-combination reconstructions."""
    return _mean_square(pred_c1e1, gt_c1e1) + _mean_square(pred_c2e2, gt_c2e2)


def self_reconstruction_loss(pred, gt) -> torch.Tensor:
    return _mean_square(pred, gt)


def velocity_loss(pred, gt) -> torch.Tensor:
    """Mean-square mismatch of frame-to-frame differences."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.shape[0] < 2:
        raise ValueError("velocity loss needs at least 2 frames")
    return _mean_square(pred[1:] - pred[:-1], gt[1:] - gt[:-1])


def classification_loss(probs, labels) -> torch.Tensor:
    """Mean negative log-likelihood over the batch, probabilities floored."""
    probs = _as_tensor(probs)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probs.ndim == 1:
        probs = probs.unsqueeze(0)
    if labels.ndim == 0:
        labels = labels.unsqueeze(0)
    M = probs.shape[1]
    if labels.min() < 0 or labels.max() >= M:
        raise ValueError(f"labels must lie in [0, {M})")
    picked = probs[torch.arange(len(labels)), labels]
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def total_loss(cross, self_rec, velocity, classification,
               weights: LossWeights = LossWeights()):
    """Weighted sum of the four components.

    Returns (total tensor kept on the autograd graph, LossReport of floats).
    """
    parts = {"cross": _as_tensor(cross), "self_rec": _as_tensor(self_rec),
             "velocity": _as_tensor(velocity),
             "classification": _as_tensor(classification)}
    for name, value in parts.items():
        if not torch.isfinite(value):
            raise FloatingPointError(f"non-finite loss component: {name}")
    total = (weights.lambda_cross * parts["cross"]
             + weights.lambda_self * parts["self_rec"]
             + weights.lambda_velocity * parts["velocity"]
             + weights.lambda_classification * parts["classification"])
    report = LossReport(
        cross=float(parts["cross"].detach()),
        self_rec=float(parts["self_rec"].detach()),
        velocity=float(parts["velocity"].detach()),
        classification=float(parts["classification"].detach()),
        total=float(total.detach()))
    return total, report
