"""Consistency loss, augmentation, and the pseudo-label ensemble."""

import math

import numpy as np
import pytest

from sscl.errors import AlignmentError
from sscl.semi_supervised import (
    AugmentationPolicy,
    alpha_schedule,
    augment,
    ensemble_pseudo,
    fixmatch_loss,
)


class TestAugment:
    def test_zero_sigma_is_identity(self):
        policy = AugmentationPolicy(sigma_weak=0.0, sigma_strong=0.25)
        x = np.array([1.0, -2.0, 3.0])
        out = augment(x, policy, "weak", np.random.default_rng(0))
        np.testing.assert_array_equal(out, x)

    def test_deterministic_under_seed(self):
        policy = AugmentationPolicy()
        x = np.zeros((4, 3))
        a = augment(x, policy, "strong", np.random.default_rng(42))
        b = augment(x, policy, "strong", np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_noise_scale_matches_sigma(self):
        policy = AugmentationPolicy(sigma_weak=0.05, sigma_strong=0.25)
        rng = np.random.default_rng(7)
        x = np.zeros(10_000)
        for strength, sigma in (("weak", 0.05), ("strong", 0.25)):
            noise = augment(x, policy, strength, rng) - x
            assert abs(noise.std() - sigma) < 0.05 * sigma

    def test_policy_requires_weak_below_strong(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(sigma_weak=0.3, sigma_strong=0.2)

    def test_unknown_strength_rejected(self):
        with pytest.raises(ValueError):
            augment(np.zeros(2), AugmentationPolicy(), "medium", np.random.default_rng(0))


class TestFixmatchLoss:
    def test_fully_masked_batch_is_zero(self):
        probs = np.full((3, 2), 0.5)
        logits = np.random.default_rng(0).normal(size=(3, 2))
        assert fixmatch_loss(probs, logits, tau=0.95) == 0.0

    def test_agreeing_confident_row_is_near_zero(self):
        probs = np.array([[1.0, 0.0]])
        logits = np.array([[50.0, -50.0]])
        assert fixmatch_loss(probs, logits, tau=0.95) < 1e-12

    def test_uniform_strong_prediction_costs_ln2(self):
        probs = np.array([[1.0, 0.0]])
        logits = np.array([[0.0, 0.0]])
        assert fixmatch_loss(probs, logits, tau=0.95) == pytest.approx(math.log(2), abs=1e-12)

    def test_unconfident_rows_still_count_in_denominator(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5]])
        logits = np.zeros((2, 2))
        assert fixmatch_loss(probs, logits, tau=0.95) == pytest.approx(math.log(2) / 2, abs=1e-12)

    def test_shift_invariance_of_strong_logits(self):
        rng = np.random.default_rng(1)
        probs = np.abs(rng.normal(size=(5, 3)))
        probs /= probs.sum(axis=1, keepdims=True)
        logits = rng.normal(size=(5, 3))
        base = fixmatch_loss(probs, logits, tau=0.4)
        shifted = fixmatch_loss(probs, logits + 17.3, tau=0.4)
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_mask_monotone_in_tau(self):
        rng = np.random.default_rng(2)
        probs = np.abs(rng.normal(size=(8, 4)))
        probs /= probs.sum(axis=1, keepdims=True)
        taus = np.linspace(0.05, 1.0, 12)
        unmasked = [(probs.max(axis=1) >= t).sum() for t in taus]
        assert all(a >= b for a, b in zip(unmasked, unmasked[1:]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(AlignmentError):
            fixmatch_loss(np.full((2, 2), 0.5), np.zeros((3, 2)), tau=0.9)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            fixmatch_loss(np.full((2, 2), 0.4), np.zeros((2, 2)), tau=0.9)


class TestAlphaSchedule:
    def test_closed_form_values(self):
        assert alpha_schedule(1) == pytest.approx(0.8175744761936437, abs=1e-15)
        assert alpha_schedule(4) == pytest.approx(0.9525741268224334, abs=1e-15)

    def test_strictly_increasing_and_bounded(self):
        values = [alpha_schedule(t) for t in range(1, 60)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(0.0 < v < 1.0 for v in values)
        assert alpha_schedule(200) > 1.0 - 1e-12

    def test_rejects_task_zero(self):
        with pytest.raises(ValueError):
            alpha_schedule(0)


class TestEnsemblePseudo:
    def test_fixed_point_when_predictions_agree(self):
        p = np.array([0.2, 0.3, 0.5])
        out = ensemble_pseudo(p, p, alpha=0.7)
        np.testing.assert_allclose(out, p, atol=1e-12)

    def test_midpoint(self):
        out = ensemble_pseudo(np.array([1.0, 0.0]), np.array([0.0, 1.0]), alpha=0.5)
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_task_one_schedule_weighting_with_padding(self):
        alpha = alpha_schedule(1)
        out = ensemble_pseudo(np.array([1.0, 0.0]), np.array([0.0, 0.0, 1.0]), alpha)
        np.testing.assert_allclose(out, [alpha, 0.0, 1.0 - alpha], atol=1e-12)

    def test_output_is_a_distribution(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            c_old = int(rng.integers(1, 5))
            c_new = int(rng.integers(c_old, 7))
            p_old = rng.dirichlet(np.ones(c_old))
            p_new = rng.dirichlet(np.ones(c_new))
            out = ensemble_pseudo(p_old, p_new, alpha=float(rng.uniform(0.01, 0.99)))
            assert abs(out.sum() - 1.0) <= 1e-9
            assert (out >= 0).all()

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            ensemble_pseudo(np.array([1.1, -0.1]), np.array([0.5, 0.5]), 0.5)

    def test_wider_old_vector_rejected(self):
        with pytest.raises(AlignmentError):
            ensemble_pseudo(np.array([0.5, 0.3, 0.2]), np.array([0.5, 0.5]), 0.5)
