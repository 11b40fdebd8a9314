import numpy as np
import pytest

from streamlda.convert import (
    BinaryLdaSpec,
    SigmaInit,
    binary_posterior,
    fc_to_lda,
    lda_to_fc,
)
from streamlda.core import (
    CovarianceMode,
    InvalidSpec,
    LinearHead,
    NonFiniteInput,
    TooFewClasses,
)
from streamlda.slda import init_empty, predict_many, translate, update_sample

from oracles import direct_gaussian_posterior


class TestFcToLda:
    def test_identity_mode(self):
        head = LinearHead(weights=np.eye(2), bias=np.zeros(2))
        model = fc_to_lda(head, SigmaInit.IDENTITY)
        np.testing.assert_array_equal(model.stats.means, np.eye(2))
        np.testing.assert_array_equal(model.covariance.sigma, np.eye(2))
        np.testing.assert_array_equal(model.stats.counts, [1, 1])
        assert model.covariance.step == 2

    def test_cov_of_weights_hand_example(self):
        head = LinearHead(weights=np.array([[1.0, 0.0], [0.0, 1.0]]), bias=np.zeros(2))
        model = fc_to_lda(head, SigmaInit.COV_OF_WEIGHTS)
        np.testing.assert_allclose(
            model.covariance.sigma, [[0.5, -0.5], [-0.5, 0.5]], rtol=1e-15
        )

    def test_cov_of_weights_is_symmetric_psd(self, rng):
        head = LinearHead(weights=rng.standard_normal((30, 8)), bias=np.zeros(30))
        model = fc_to_lda(head, SigmaInit.COV_OF_WEIGHTS)
        sigma = model.covariance.sigma
        np.testing.assert_allclose(sigma, sigma.T, rtol=1e-12)
        assert np.linalg.eigvalsh(sigma).min() > -1e-12

    def test_round_trip_is_exact_under_identity(self, rng):
        w0 = rng.standard_normal((9, 4))
        model = fc_to_lda(LinearHead(weights=w0, bias=rng.standard_normal(9)))
        head = translate(model, beta=1e-4)
        np.testing.assert_array_equal(head.head.weights, w0)

    def test_bias_is_dropped(self, rng):
        w0 = rng.standard_normal((5, 3))
        with_bias = fc_to_lda(LinearHead(weights=w0, bias=rng.standard_normal(5)))
        without = fc_to_lda(LinearHead(weights=w0, bias=np.zeros(5)))
        np.testing.assert_array_equal(with_bias.stats.means, without.stats.means)

    def test_too_few_classes_for_cov(self):
        head = LinearHead(weights=np.ones((1, 3)), bias=np.zeros(1))
        with pytest.raises(TooFewClasses):
            fc_to_lda(head, SigmaInit.COV_OF_WEIGHTS)

    def test_non_finite_head_rejected(self):
        head = LinearHead(weights=np.array([[np.inf, 0.0]]), bias=np.zeros(1))
        with pytest.raises(NonFiniteInput):
            fc_to_lda(head)

    def test_converted_model_accepts_streaming(self, rng):
        head = LinearHead(weights=rng.standard_normal((4, 3)), bias=np.zeros(4))
        model = fc_to_lda(head, SigmaInit.IDENTITY, CovarianceMode.PLASTIC)
        update_sample(model, rng.standard_normal(3), 2)
        assert model.stats.counts[2] == 2
        assert model.covariance.step == 5

    def test_argmax_preserved_on_identity_gaussian_data(self, rng):
        # Means seeded from W are the true class means, so the converted
        # model must score within Monte-Carlo noise of the Bayes rule.
        from streamlda.io import bayes_rule_accuracy
        from streamlda.core import LabeledBatch

        n, d, per_class = 100, 16, 50
        w0 = rng.standard_normal((n, d))
        labels = np.repeat(np.arange(n), per_class)
        x = w0[labels] + rng.standard_normal((labels.size, d))
        batch = LabeledBatch(embeddings=x, labels=labels)

        bayes = bayes_rule_accuracy(w0, np.eye(d), batch)
        model = fc_to_lda(LinearHead(weights=w0, bias=np.zeros(n)))
        accuracy = np.mean(predict_many(translate(model), x) == labels)
        assert abs(accuracy - bayes) < 0.02


class TestLdaToFc:
    def test_identity_sigma_hand_example(self):
        model = init_empty(2, 1)
        model.stats.means[0] = [3.0, 4.0]
        model.stats.counts[0] = 1
        model.covariance.sigma = np.eye(2)
        head = lda_to_fc(model, beta=1e-4)
        np.testing.assert_array_equal(head.weights[0], [3.0, 4.0])
        assert head.bias[0] == -12.5

    def test_means_recoverable(self, rng):
        from conftest import random_spd

        d, n, beta = 8, 20, 1e-4
        model = init_empty(d, n)
        model.stats.means[:] = rng.standard_normal((n, d))
        model.stats.counts[:] = 1
        model.covariance.sigma = random_spd(d, rng)
        head = lda_to_fc(model, beta)
        shrunk = (1 - beta) * model.covariance.sigma + beta * np.eye(d)
        recovered = head.weights @ shrunk
        error = np.linalg.norm(recovered - model.stats.means) / np.linalg.norm(model.stats.means)
        assert error < 1e-8

    def test_dead_class_carries_exclusion_marker(self):
        model = init_empty(2, 2)
        update_sample(model, np.ones(2), 0)
        head = lda_to_fc(model)
        assert head.bias[1] == -np.inf


class TestBinaryPosterior:
    def test_symmetric_midpoint(self):
        spec = BinaryLdaSpec(mu0=-1.0, mu1=1.0, sigma=1.0, phi=0.5)
        out = binary_posterior(spec, 0.0)
        assert out.bayes == 0.5
        assert out.logistic == 0.5

    def test_hand_value(self):
        spec = BinaryLdaSpec(mu0=-1.0, mu1=1.0, sigma=1.0, phi=0.5)
        out = binary_posterior(spec, 1.0)
        assert out.w == 2.0
        assert out.b == 0.0
        assert out.alpha == 1.0
        expected = 1.0 / (1.0 + np.exp(-2.0))
        np.testing.assert_allclose(out.logistic, expected, rtol=1e-15)
        np.testing.assert_allclose(
            out.bayes, direct_gaussian_posterior(-1.0, 1.0, 1.0, 0.5, 1.0), rtol=1e-14
        )

    def test_routes_agree_on_random_specs(self, rng):
        worst = 0.0
        for _ in range(2000):
            spec = BinaryLdaSpec(
                mu0=float(rng.uniform(-4, 4)),
                mu1=float(rng.uniform(-4, 4)),
                sigma=float(rng.uniform(0.4, 3.0)),
                phi=float(rng.uniform(0.02, 0.98)),
            )
            x = float(rng.uniform(-6, 6))
            out = binary_posterior(spec, x)
            worst = max(worst, abs(out.bayes - out.logistic))
            np.testing.assert_allclose(
                out.bayes,
                direct_gaussian_posterior(spec.mu0, spec.mu1, spec.sigma, spec.phi, x),
                rtol=1e-12,
                atol=1e-300,
            )
        assert worst <= 1e-12

    def test_unequal_priors_shift_the_posterior(self):
        # At the midpoint the likelihoods cancel; the posterior must equal
        # the prior of class 1.
        spec = BinaryLdaSpec(mu0=-1.0, mu1=1.0, sigma=1.0, phi=0.9)
        out = binary_posterior(spec, 0.0)
        np.testing.assert_allclose(out.bayes, 0.9, rtol=1e-12)
        np.testing.assert_allclose(out.logistic, 0.9, rtol=1e-12)

    def test_decision_boundary_is_midpoint_for_equal_priors(self, rng):
        for _ in range(50):
            mu0, mu1 = sorted(rng.uniform(-3, 3, 2))
            if mu1 - mu0 < 1e-3:
                continue
            spec = BinaryLdaSpec(mu0=float(mu0), mu1=float(mu1), sigma=1.3, phi=0.5)
            mid = 0.5 * (mu0 + mu1)
            eps = 1e-6
            assert binary_posterior(spec, mid + eps).bayes > 0.5
            assert binary_posterior(spec, mid - eps).bayes < 0.5

    @pytest.mark.parametrize(
        "bad",
        [
            BinaryLdaSpec(0.0, 1.0, sigma=0.0, phi=0.5),
            BinaryLdaSpec(0.0, 1.0, sigma=-1.0, phi=0.5),
            BinaryLdaSpec(0.0, 1.0, sigma=1.0, phi=0.0),
            BinaryLdaSpec(0.0, 1.0, sigma=1.0, phi=1.0),
            BinaryLdaSpec(np.nan, 1.0, sigma=1.0, phi=0.5),
        ],
    )
    def test_invalid_specs_rejected(self, bad):
        with pytest.raises(InvalidSpec):
            binary_posterior(bad, 0.0)
