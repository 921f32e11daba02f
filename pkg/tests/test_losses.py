import math

import numpy as np
import pytest
import torch

from emoanim.losses import (LossReport, LossWeights, classification_loss,
                            cross_reconstruction_loss, self_reconstruction_loss,
                            total_loss, velocity_loss)


def _rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


class TestCrossReconstruction:
    def test_zero_at_ground_truth(self):
        gt = _rand((10, 52))
        assert float(cross_reconstruction_loss(gt, gt, gt, gt)) == 0.0

    def test_constant_offset(self):
        gt = _rand((10, 52))
        assert abs(float(cross_reconstruction_loss(gt + 1, gt + 1, gt, gt)) - 2.0) < 1e-12

    def test_matches_elementwise_oracle(self):
        p1, p2 = _rand((7, 52), 1), _rand((7, 52), 2)
        g1, g2 = _rand((7, 52), 3), _rand((7, 52), 4)
        # independent oracle: explicit elementwise accumulation
        acc = 0.0
        for pred, gt in ((p1, g1), (p2, g2)):
            s, n = 0.0, 0
            for t in range(pred.shape[0]):
                for k in range(pred.shape[1]):
                    s += (pred[t, k] - gt[t, k]) ** 2
                    n += 1
            acc += s / n
        assert abs(float(cross_reconstruction_loss(p1, p2, g1, g2)) - acc) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cross_reconstruction_loss(_rand((5, 52)), _rand((5, 52)),
                                      _rand((4, 52)), _rand((5, 52)))


class TestSelfReconstruction:
    def test_zero_at_ground_truth(self):
        gt = _rand((6, 52))
        assert float(self_reconstruction_loss(gt, gt)) == 0.0

    def test_all_zero_vs_all_one(self):
        assert float(self_reconstruction_loss(np.zeros((4, 52)),
                                              np.ones((4, 52)))) == 1.0

    def test_matches_mean_square_oracle(self):
        p, g = _rand((9, 52), 5), _rand((9, 52), 6)
        assert abs(float(self_reconstruction_loss(p, g))
                   - np.mean((p - g) ** 2)) < 1e-12


class TestVelocity:
    def test_constant_offset_cancels(self):
        # dyadic-rational values keep the per-channel shift exact in floats,
        # so the telescoping cancellation is bitwise
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 1024, size=(8, 52)) / 1024.0
        offset = rng.integers(0, 1024, size=(1, 52)) / 1024.0
        assert float(velocity_loss(gt + offset, gt)) == 0.0

    def test_zero_at_ground_truth(self):
        gt = _rand((8, 52))
        assert float(velocity_loss(gt, gt)) == 0.0

    def test_ramp_vs_constant(self):
        # pred velocity is 1 per frame per channel, gt velocity is 0.
        T = 6
        pred = np.tile(np.arange(T, dtype=float)[:, None], (1, 52))
        gt = np.zeros((T, 52))
        assert abs(float(velocity_loss(pred, gt)) - 1.0) < 1e-12

    def test_hand_computed_differences(self):
        pred = np.array([[0.0], [2.0], [3.0]])
        gt = np.array([[0.0], [1.0], [1.0]])
        # velocity gaps: (2-1)=1 and (1-0)=1 -> mean of squares = 1
        assert abs(float(velocity_loss(pred, gt)) - 1.0) < 1e-12

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            velocity_loss(np.zeros((1, 52)), np.zeros((1, 52)))


class TestClassification:
    def test_perfect_prediction(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert float(classification_loss(probs, [0, 1])) == 0.0

    def test_uniform_is_log_m(self):
        probs = np.full((3, 4), 0.25)
        assert abs(float(classification_loss(probs, [0, 1, 2])) - math.log(4)) < 1e-9

    def test_two_sample_direct_evaluation(self):
        probs = np.array([[0.5, 0.5], [0.25, 0.75]])
        expected = (math.log(2) + math.log(4)) / 2
        assert abs(float(classification_loss(probs, [0, 0])) - expected) < 1e-12

    def test_floor_prevents_infinity(self):
        probs = np.array([[0.0, 1.0]])
        loss = float(classification_loss(probs, [0]))
        assert math.isfinite(loss)
        assert abs(loss - (-math.log(1e-12))) < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            classification_loss(np.full((1, 3), 1 / 3), [3])


class TestTotal:
    def test_default_weighted_sum(self):
        total, report = total_loss(1.0, 1.0, 1.0, 1.0)
        assert abs(float(total) - 2.6) < 1e-12
        assert abs(report.total - 2.6) < 1e-12

    def test_all_zero(self):
        total, _ = total_loss(0.0, 0.0, 0.0, 0.0)
        assert float(total) == 0.0

    def test_projection_weights(self):
        weights = LossWeights(lambda_cross=0, lambda_self=0,
                              lambda_velocity=0, lambda_classification=1)
        total, _ = total_loss(5.0, 7.0, 9.0, 3.25, weights)
        assert float(total) == 3.25

    def test_report_invariant(self):
        w = LossWeights(0.3, 0.9, 0.2, 0.05)
        _, r = total_loss(1.5, 2.5, 0.25, 4.0, w)
        expected = 0.3 * r.cross + 0.9 * r.self_rec + 0.2 * r.velocity + 0.05 * r.classification
        assert abs(r.total - expected) < 1e-9

    def test_linearity_in_components(self):
        w = LossWeights()
        t1, _ = total_loss(1.0, 0.0, 0.0, 0.0, w)
        t2, _ = total_loss(3.0, 0.0, 0.0, 0.0, w)
        assert abs(float(t2) - 3 * float(t1)) < 1e-12

    def test_non_finite_component_named(self):
        with pytest.raises(FloatingPointError, match="velocity"):
            total_loss(0.0, 0.0, float("nan"), 0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_cross=-1.0)

    def test_report_serializes(self):
        _, r = total_loss(1.0, 1.0, 1.0, 1.0)
        assert isinstance(r, LossReport)
        assert '"total"' in r.to_json()


class TestDifferentiability:
    def test_gradients_flow(self):
        pred = torch.randn(5, 52, dtype=torch.float64, requires_grad=True)
        gt = torch.randn(5, 52, dtype=torch.float64)
        total, _ = total_loss(
            cross_reconstruction_loss(pred, pred, gt, gt),
            self_reconstruction_loss(pred, gt),
            velocity_loss(pred, gt),
            classification_loss(torch.softmax(pred[0, :4], 0).unsqueeze(0), [1]))
        total.backward()
        assert pred.grad is not None
        assert torch.isfinite(pred.grad).all()
