"""Model forward/backward contracts, including the finite-difference gradient check."""

import numpy as np
import pytest
from conftest import (
    central_difference,
    flatten_grads,
    flatten_params,
    relative_error,
    unflatten_params,
)

from sscl.errors import ConfigError, NonFiniteError
from sscl.model import (
    LossConfig,
    ModelParams,
    MomentumSGD,
    ReplayBatch,
    StepBatch,
    _assemble_loss,
    expand_head,
    forward,
    init_model,
    load_checkpoint,
    logit_distill_loss,
    predict_proba,
    save_checkpoint,
    sgd_step,
    total_loss,
)
from sscl.semi_supervised import alpha_schedule


class TestInitModel:
    def test_deterministic_under_seed(self):
        a = init_model(3, 8, 4, 2, np.random.default_rng(0))
        b = init_model(3, 8, 4, 2, np.random.default_rng(0))
        for name, arr in a.arrays().items():
            np.testing.assert_array_equal(arr, b.arrays()[name])

    def test_biases_start_at_zero(self):
        m = init_model(3, 8, 4, 2, np.random.default_rng(1))
        for name in ("b1", "b2", "b3", "head_b"):
            np.testing.assert_array_equal(m.arrays()[name], 0.0)

    def test_weight_spread_matches_uniform_moment(self):
        # U(-a, a) with a = 1/sqrt(fan_in) has standard deviation a/sqrt(3)
        m = init_model(400, 400, 4, 2, np.random.default_rng(2))
        observed = m.w1.std()
        expected = (1.0 / np.sqrt(400)) / np.sqrt(3.0)
        assert abs(observed - expected) < 0.1 * expected


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        m = init_model(2, 3, 2, 2, np.random.default_rng(0))
        zeroed = ModelParams(**{k: np.zeros_like(v) for k, v in m.arrays().items()})
        _, logits = forward(zeroed, np.random.default_rng(1).normal(size=(4, 2)))
        np.testing.assert_array_equal(logits, 0.0)

    def test_duplicated_row_duplicates_outputs(self):
        m = init_model(3, 5, 4, 2, np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(1, 3))
        emb, logits = forward(m, np.vstack([x, x]))
        np.testing.assert_array_equal(emb[0], emb[1])
        np.testing.assert_array_equal(logits[0], logits[1])

    def test_matches_direct_arithmetic(self):
        rng = np.random.default_rng(5)
        m = init_model(2, 2, 2, 2, rng)
        X = rng.normal(size=(2, 2))
        h1 = np.maximum(X @ m.w1 + m.b1, 0.0)
        h2 = np.maximum(h1 @ m.w2 + m.b2, 0.0)
        emb_direct = h2 @ m.w3 + m.b3
        logits_direct = emb_direct @ m.head_w + m.head_b
        emb, logits = forward(m, X)
        np.testing.assert_allclose(emb, emb_direct, atol=1e-15)
        np.testing.assert_allclose(logits, logits_direct, atol=1e-15)

    def test_batch_order_equivariant(self):
        rng = np.random.default_rng(6)
        m = init_model(3, 4, 3, 2, rng)
        X = rng.normal(size=(6, 3))
        sigma = rng.permutation(6)
        _, logits = forward(m, X)
        _, logits_perm = forward(m, X[sigma])
        np.testing.assert_array_equal(logits_perm, logits[sigma])

    def test_poisoned_parameters_rejected(self):
        m = init_model(2, 3, 2, 2, np.random.default_rng(7))
        m.w2[0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            forward(m, np.zeros((1, 2)))


class TestExpandHead:
    def test_old_class_logits_preserved(self):
        rng = np.random.default_rng(8)
        m = init_model(3, 4, 3, 2, rng)
        X = rng.normal(size=(5, 3))
        _, before = forward(m, X)
        grown = expand_head(m, 3, rng)
        _, after = forward(grown, X)
        assert grown.num_classes == 5
        np.testing.assert_array_equal(after[:, :2], before)

    def test_incremental_expansion_keeps_prior_rows(self):
        rng = np.random.default_rng(9)
        m = init_model(3, 4, 3, 2, rng)
        g1 = expand_head(m, 2, np.random.default_rng(1))
        g2 = expand_head(g1, 3, np.random.default_rng(2))
        np.testing.assert_array_equal(g2.head_w[:, :4], g1.head_w)
        np.testing.assert_array_equal(g2.head_w[:, :2], m.head_w)
        assert g2.num_classes == 7


class TestLogitDistillLoss:
    def test_matching_logits_is_a_stationary_point(self):
        rng = np.random.default_rng(10)
        old = rng.normal(size=(3, 4))
        grad = central_difference(lambda L: logit_distill_loss(old, L), old.copy())
        assert np.abs(grad).max() < 1e-9

    def test_closed_form_extreme_logit(self):
        # targets sigmoid(0) = 0.5; a +50 logit costs 0.5*softplus(50) + 0.5*softplus(-50)
        loss = logit_distill_loss(np.array([[0.0]]), np.array([[50.0]]))
        closed = 0.5 * (np.log1p(np.exp(-50.0)) + 50.0 + np.log1p(np.exp(-50.0)))
        assert loss == pytest.approx(closed, abs=1e-15)
        assert loss == pytest.approx(25.0, rel=1e-9)

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(11)
        old = rng.normal(size=(6, 3))
        new = rng.normal(size=(6, 5))
        sigma = rng.permutation(6)
        assert logit_distill_loss(old, new) == pytest.approx(
            logit_distill_loss(old[sigma], new[sigma]), abs=1e-12
        )

    def test_narrow_old_head_compares_prefix_columns(self):
        rng = np.random.default_rng(12)
        old = rng.normal(size=(4, 2))
        new = rng.normal(size=(4, 5))
        padded = new.copy()
        padded[:, 2:] = 99.0  # extra class columns must not matter
        assert logit_distill_loss(old, new) == logit_distill_loss(old, padded)


def make_instance(seed: int):
    """A random full-strategy training step: all loss terms exercised."""
    rng = np.random.default_rng(seed)
    d_in, h, d_emb, c_old, c_new = 3, 5, 4, 2, 4
    old = init_model(d_in, h, d_emb, c_old, rng)
    grown = expand_head(old, c_new - c_old, rng)
    jitter = {k: v + 0.25 * rng.normal(size=v.shape) for k, v in grown.arrays().items()}
    new = ModelParams(**jitter)

    m_l, m_u, m_r = 2, 2, 3
    batch = StepBatch(
        labeled_inputs=rng.normal(size=(m_l, d_in)),
        labeled_targets=rng.integers(0, c_new, size=m_l),
        unlabeled_weak=rng.normal(size=(m_u, d_in)),
        unlabeled_strong=rng.normal(size=(m_u, d_in)),
    )
    replay = ReplayBatch(
        weak=rng.normal(size=(m_r, d_in)),
        strong=rng.normal(size=(m_r, d_in)),
        labels=np.array([0, 1, 0]),
        is_pseudo=np.array([False, True, True]),
        stored_predictions=[rng.dirichlet(np.ones(c_old)) for _ in range(m_r)],
        true_labels=rng.integers(0, c_old, size=m_r),
    )
    cfg = LossConfig(
        lambda_ssl=0.7,
        lambda_distill=0.9,
        lambda_sgd=1.3,
        tau=0.6,
        gamma=1.1,
        k_order=2,
        alpha=alpha_schedule(2),
        logit_distill=True,
        distill_scope="all",
        pse_dis=False,
        dsgd=True,
    )
    return new, batch, replay, old, cfg


class TestTotalLoss:
    def test_first_task_has_no_old_model_terms(self):
        new, batch, _, _, cfg = make_instance(0)
        bundle, _ = total_loss(new, batch, None, None, cfg)
        assert bundle.logit_distill == 0.0
        assert bundle.sgd == 0.0
        assert bundle.ce > 0.0

    def test_zero_weights_reduce_total_to_cross_entropy(self):
        new, batch, replay, old, cfg = make_instance(1)
        plain = LossConfig(
            lambda_ssl=0.0, lambda_distill=0.0, lambda_sgd=0.0,
            tau=cfg.tau, gamma=cfg.gamma, k_order=cfg.k_order, alpha=cfg.alpha,
        )
        bundle, _ = total_loss(new, batch, replay, old, plain)
        assert bundle.total == bundle.ce

    def test_bundle_total_is_the_weighted_sum(self):
        new, batch, replay, old, cfg = make_instance(2)
        bundle, _ = total_loss(new, batch, replay, old, cfg)
        recomputed = (
            bundle.ce
            + cfg.lambda_ssl * bundle.ssl
            + cfg.lambda_distill * bundle.logit_distill
            + cfg.lambda_sgd * bundle.sgd
        )
        assert bundle.total == pytest.approx(recomputed, abs=1e-9)
        assert min(bundle.ce, bundle.ssl, bundle.logit_distill, bundle.sgd) >= 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        new, batch, replay, old, cfg = make_instance(seed)
        _, grads = total_loss(new, batch, replay, old, cfg)

        def f(flat):
            bundle, _ = total_loss(unflatten_params(new, flat), batch, replay, old, cfg)
            return bundle.total

        numeric = central_difference(f, flatten_params(new))
        assert relative_error(flatten_grads(grads), numeric) < 1e-4

    def test_gradient_with_psedis_and_gt_scopes(self):
        for scope, pse in (("all", True), ("gt", False), ("labeled", False)):
            new, batch, replay, old, base = make_instance(31)
            cfg = LossConfig(
                lambda_ssl=base.lambda_ssl, lambda_distill=base.lambda_distill,
                lambda_sgd=base.lambda_sgd, tau=base.tau, gamma=base.gamma,
                k_order=base.k_order, alpha=base.alpha,
                logit_distill=True, distill_scope=scope, pse_dis=pse, dsgd=True,
            )
            _, grads = total_loss(new, batch, replay, old, cfg)

            def f(flat):
                bundle, _ = total_loss(unflatten_params(new, flat), batch, replay, old, cfg)
                return bundle.total

            numeric = central_difference(f, flatten_params(new))
            assert relative_error(flatten_grads(grads), numeric) < 1e-4

    def test_no_gradient_reaches_the_old_model(self):
        new, batch, replay, old, cfg = make_instance(3)
        params_t = new.as_tensors(requires_grad=True)
        old_t = old.as_tensors(requires_grad=True)
        *_, total = _assemble_loss(params_t, old_t, batch, replay, cfg)
        total.backward()
        for name, t in old_t.items():
            assert t.grad is None or not t.grad.any(), f"gradient leaked into old {name}"
        assert any(t.grad is not None and t.grad.any() for t in params_t.values())

    def test_all_terms_disabled_is_a_config_error(self):
        new, batch, _, _, _ = make_instance(4)
        empty = StepBatch(
            labeled_inputs=np.zeros((0, 3)),
            labeled_targets=np.zeros(0, dtype=int),
            unlabeled_weak=batch.unlabeled_weak,
            unlabeled_strong=batch.unlabeled_strong,
        )
        off = LossConfig(lambda_ssl=0.0, lambda_distill=0.0, lambda_sgd=0.0)
        with pytest.raises(ConfigError, match="no loss term"):
            total_loss(new, empty, None, None, off)

    def test_gt_scope_requires_true_labels(self):
        new, batch, replay, old, _ = make_instance(5)
        replay.true_labels = None
        cfg = LossConfig(distill_scope="gt", dsgd=False)
        with pytest.raises(ConfigError, match="true labels"):
            total_loss(new, batch, replay, old, cfg)


class TestSgdStep:
    def test_zero_learning_rate_is_identity(self):
        m = init_model(2, 3, 2, 2, np.random.default_rng(0))
        grads = {k: np.ones_like(v) for k, v in m.arrays().items()}
        out = sgd_step(m, grads, lr=0.0)
        for name, arr in out.arrays().items():
            np.testing.assert_array_equal(arr, m.arrays()[name])

    def test_hand_arithmetic_on_quadratic(self):
        # f(w) = w^2 at w=1 with lr 0.1: w - 0.1 * 2w = 0.8
        m = init_model(1, 1, 1, 1, np.random.default_rng(0))
        m.w1[:] = 1.0
        grads = {k: np.zeros_like(v) for k, v in m.arrays().items()}
        grads["w1"][:] = 2.0 * m.w1
        assert sgd_step(m, grads, lr=0.1).w1[0, 0] == pytest.approx(0.8)

    def test_nonfinite_gradient_rejected(self):
        m = init_model(2, 3, 2, 2, np.random.default_rng(1))
        grads = {k: np.zeros_like(v) for k, v in m.arrays().items()}
        grads["w1"][0, 0] = np.inf
        with pytest.raises(NonFiniteError):
            sgd_step(m, grads, lr=0.1)

    def test_loss_decreases_on_separable_toy_problem(self):
        rng = np.random.default_rng(2)
        X = np.vstack([rng.normal(size=(20, 2)) + [3, 0], rng.normal(size=(20, 2)) - [3, 0]])
        y = np.array([0] * 20 + [1] * 20)
        batch = StepBatch(
            labeled_inputs=X,
            labeled_targets=y,
            unlabeled_weak=np.zeros((0, 2)),
            unlabeled_strong=np.zeros((0, 2)),
        )
        cfg = LossConfig(lambda_ssl=0.0, lambda_distill=0.0, lambda_sgd=0.0)
        params = init_model(2, 8, 4, 2, rng)
        opt = MomentumSGD(lr=0.1, momentum=0.9)
        first = None
        for _ in range(100):
            bundle, grads = total_loss(params, batch, None, None, cfg)
            first = bundle.total if first is None else first
            params = opt.step(params, grads)
        final, _ = total_loss(params, batch, None, None, cfg)
        assert final.total < 0.1 * first
        assert (predict_proba(params, X).argmax(axis=1) == y).mean() == 1.0


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        m = init_model(3, 5, 4, 3, np.random.default_rng(3))
        path = tmp_path / "model.json"
        save_checkpoint(m, str(path))
        restored = load_checkpoint(str(path))
        for name, arr in m.arrays().items():
            np.testing.assert_array_equal(arr, restored.arrays()[name])

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 99, "arrays": {}}')
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(str(path))
