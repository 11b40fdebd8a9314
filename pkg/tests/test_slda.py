import numpy as np
import pytest

from streamlda.core import (
    CovarianceMode,
    DimensionMismatch,
    InvalidDimension,
    LabelOutOfRange,
    NonFiniteInput,
    TrainMode,
)
from streamlda.slda import (
    init_empty,
    logits_many,
    predict_exact,
    predict_many,
    translate,
    update_sample,
)

from conftest import random_spd
from oracles import replay_recurrences, two_class_bayes_accuracy


class TestInitEmpty:
    def test_zero_init(self):
        model = init_empty(4, 3)
        np.testing.assert_array_equal(model.stats.means, np.zeros((3, 4)))
        np.testing.assert_array_equal(model.stats.counts, [0, 0, 0])
        np.testing.assert_array_equal(model.covariance.sigma, np.zeros((4, 4)))
        assert model.covariance.step == 0

    def test_scalar_model(self):
        model = init_empty(1, 1)
        np.testing.assert_array_equal(model.covariance.sigma, [[0.0]])

    @pytest.mark.parametrize("dim,num_classes", [(0, 5), (5, 0), (-1, 3)])
    def test_invalid_dimensions(self, dim, num_classes):
        with pytest.raises(InvalidDimension):
            init_empty(dim, num_classes)


class TestUpdateSample:
    def test_first_sample_sets_mean(self):
        model = init_empty(2, 3)
        update_sample(model, np.array([1.0, 2.0]), 0)
        np.testing.assert_array_equal(model.stats.means[0], [1.0, 2.0])
        assert model.stats.counts[0] == 1

    def test_two_samples_average(self):
        model = init_empty(2, 1)
        update_sample(model, np.array([0.0, 0.0]), 0)
        update_sample(model, np.array([2.0, 2.0]), 0)
        np.testing.assert_array_equal(model.stats.means[0], [1.0, 1.0])
        assert model.stats.counts[0] == 2

    def test_matches_extended_precision_replay(self, rng):
        n, d, total = 3, 5, 10
        samples = rng.standard_normal((total, d))
        labels = rng.integers(0, n, total)
        model = init_empty(d, n)
        for z, y in zip(samples, labels):
            update_sample(model, z, int(y))
        means, counts, sigma, step = replay_recurrences(samples, labels, n)
        np.testing.assert_allclose(model.stats.means, means, rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(model.stats.counts, counts)
        np.testing.assert_allclose(model.covariance.sigma, sigma, rtol=1e-12, atol=1e-15)
        assert model.covariance.step == step

    def test_mean_equals_arithmetic_mean(self, rng):
        # Long-run property of the mean recurrence.
        n, d, total = 4, 6, 500
        samples = rng.standard_normal((total, d)) * 3 + 1
        labels = rng.integers(0, n, total)
        model = init_empty(d, n, CovarianceMode.FIXED)
        for z, y in zip(samples, labels):
            update_sample(model, z, int(y))
        for k in range(n):
            mask = labels == k
            np.testing.assert_allclose(
                model.stats.means[k], samples[mask].mean(axis=0), rtol=1e-10
            )
            assert model.stats.counts[k] == mask.sum()

    def test_count_conservation_and_step_parity(self, rng):
        model = init_empty(3, 5)
        total = 137
        for _ in range(total):
            update_sample(model, rng.standard_normal(3), int(rng.integers(0, 5)))
        assert model.stats.counts.sum() == total
        assert model.covariance.step == total

    def test_fixed_covariance_never_moves(self, rng):
        model = init_empty(3, 2, CovarianceMode.FIXED)
        before = model.covariance.sigma.copy()
        for _ in range(10):
            update_sample(model, rng.standard_normal(3), 0)
        np.testing.assert_array_equal(model.covariance.sigma, before)
        assert model.covariance.step == 0

    def test_train_mu_only_keeps_sigma_bit_identical(self, rng):
        model = init_empty(3, 2, CovarianceMode.PLASTIC, TrainMode.TRAIN_MU_ONLY)
        for _ in range(5):
            update_sample(model, rng.standard_normal(3), 1)
        seeded = model.covariance.sigma.tobytes()
        update_sample(model, rng.standard_normal(3), 0)
        assert model.covariance.sigma.tobytes() == seeded
        assert model.covariance.step == 0
        assert model.stats.counts.sum() == 6

    def test_train_sigma_only_keeps_means_bit_identical(self, rng):
        model = init_empty(3, 2, CovarianceMode.PLASTIC, TrainMode.TRAIN_SIGMA_ONLY)
        update_sample(model, rng.standard_normal(3), 0)
        means_before = model.stats.means.tobytes()
        counts_before = model.stats.counts.tobytes()
        update_sample(model, rng.standard_normal(3), 0)
        assert model.stats.means.tobytes() == means_before
        assert model.stats.counts.tobytes() == counts_before
        assert model.covariance.step == 2

    def test_label_out_of_range(self):
        model = init_empty(2, 2)
        with pytest.raises(LabelOutOfRange):
            update_sample(model, np.zeros(2), 2)

    def test_non_finite_input(self):
        model = init_empty(2, 2)
        with pytest.raises(NonFiniteInput):
            update_sample(model, np.array([np.inf, 0.0]), 0)

    def test_sigma_stays_symmetric(self, rng):
        model = init_empty(6, 3)
        for _ in range(50):
            update_sample(model, rng.standard_normal(6), int(rng.integers(0, 3)))
        sigma = model.covariance.sigma
        np.testing.assert_allclose(sigma, sigma.T, rtol=1e-9)
        assert (np.diag(sigma) >= 0).all()


class TestTranslate:
    def test_identity_covariance_closed_form(self):
        model = init_empty(2, 1)
        model.stats.means[0] = [3.0, 4.0]
        model.stats.counts[0] = 1
        model.covariance.sigma = np.eye(2)
        head = translate(model, beta=1e-4)
        np.testing.assert_array_equal(head.head.weights[0], [3.0, 4.0])
        assert head.head.bias[0] == -12.5

    def test_precision_residual(self, rng):
        d = 8
        model = init_empty(d, 2)
        model.covariance.sigma = random_spd(d, rng)
        beta = 1e-4
        head = translate(model, beta)
        # Recover lambda from the solve contract.
        from streamlda.slda import shrinkage_precision

        lam = shrinkage_precision(model, beta).lam
        shrunk = (1 - beta) * model.covariance.sigma + beta * np.eye(d)
        np.testing.assert_allclose(lam @ shrunk, np.eye(d), atol=1e-8)
        assert head.beta == beta

    def test_weight_matrix_is_fixed_point_under_identity(self, rng):
        # Seeding means from a weight matrix and translating under an identity
        # covariance must give the weights back exactly.
        n, d = 7, 5
        w0 = rng.standard_normal((n, d))
        model = init_empty(d, n)
        model.stats.means[:] = w0
        model.stats.counts[:] = 1
        model.covariance.sigma = np.eye(d)
        head = translate(model, beta=1e-4)
        np.testing.assert_array_equal(head.head.weights, w0)

    def test_zero_covariance_translates_as_scaled_nearest_mean(self, rng):
        beta = 1e-2
        model = init_empty(3, 2)
        update_sample(model, np.array([1.0, 0.0, 0.0]), 0)
        head = translate(model, beta)
        np.testing.assert_allclose(head.head.weights[0], [1 / beta, 0, 0], rtol=1e-12)

    def test_dead_class_marked_excluded(self):
        model = init_empty(2, 3)
        update_sample(model, np.array([1.0, 1.0]), 1)
        head = translate(model)
        assert head.head.bias[0] == -np.inf
        assert head.head.bias[2] == -np.inf
        assert np.isfinite(head.head.bias[1])
        np.testing.assert_array_equal(head.live_mask, [False, True, False])

    def test_bad_beta_rejected(self):
        model = init_empty(2, 2)
        for beta in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                translate(model, beta)

    def test_staleness_marker(self, rng):
        model = init_empty(2, 2)
        update_sample(model, rng.standard_normal(2), 0)
        head = translate(model)
        assert not head.is_stale(model)
        update_sample(model, rng.standard_normal(2), 1)
        assert head.is_stale(model)

    def test_mean_only_drift_is_stale_too(self, rng):
        # A fixed covariance keeps the step frozen; mean movement must still
        # flip the staleness marker.
        model = init_empty(2, 2, CovarianceMode.FIXED)
        update_sample(model, rng.standard_normal(2), 0)
        head = translate(model)
        update_sample(model, rng.standard_normal(2), 0)
        assert head.is_stale(model)


class TestPredictExact:
    def test_identity_head(self):
        model = init_empty(2, 2)
        model.stats.means[:] = np.eye(2)
        model.stats.counts[:] = 1
        model.covariance.sigma = np.eye(2)
        head = translate(model)
        logits, label = predict_exact(head, np.array([1.0, 0.0]))
        assert label == 0
        np.testing.assert_allclose(logits, [0.5, -0.5])  # mu.x - 0.5*||mu||^2

    def test_ties_break_to_lowest_class(self):
        model = init_empty(2, 3)
        model.stats.means[:] = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        model.stats.counts[:] = 1
        model.covariance.sigma = np.eye(2)
        head = translate(model)
        _, label = predict_exact(head, np.array([5.0, 0.0]))
        assert label == 0

    def test_two_gaussians_near_bayes_accuracy(self, rng):
        mu0, mu1 = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
        train_n = 2000
        labels = rng.integers(0, 2, train_n)
        samples = np.where(labels[:, None] == 1, mu1, mu0) + rng.standard_normal((train_n, 2))
        model = init_empty(2, 2)
        for z, y in zip(samples, labels):
            update_sample(model, z, int(y))
        head = translate(model)

        test_n = 4000
        test_labels = rng.integers(0, 2, test_n)
        test_x = np.where(test_labels[:, None] == 1, mu1, mu0) + rng.standard_normal((test_n, 2))
        accuracy = np.mean(predict_many(head, test_x) == test_labels)
        assert abs(accuracy - two_class_bayes_accuracy(mu0, mu1)) < 0.02

    def test_argmax_matches_nearest_mean_under_identity_sigma(self, rng):
        # With sigma = I the logit is mu.x - ||mu||^2/2: translation must
        # reproduce the nearest-mean decision exactly.
        n, d = 20, 6
        model = init_empty(d, n)
        model.stats.means[:] = rng.standard_normal((n, d))
        model.stats.counts[:] = 1
        model.covariance.sigma = np.eye(d)
        head = translate(model)
        for _ in range(200):
            x = rng.standard_normal(d)
            scores = model.stats.means @ x - 0.5 * (model.stats.means**2).sum(axis=1)
            _, label = predict_exact(head, x)
            assert label == int(np.argmax(scores))

    def test_wrong_length_raises(self):
        model = init_empty(3, 2)
        head = translate(model)
        with pytest.raises(DimensionMismatch):
            predict_exact(head, np.zeros(4))

    def test_logits_many_matches_single(self, rng):
        model = init_empty(4, 5)
        for _ in range(30):
            update_sample(model, rng.standard_normal(4), int(rng.integers(0, 5)))
        head = translate(model)
        xs = rng.standard_normal((10, 4))
        batch_logits = logits_many(head, xs)
        for i, x in enumerate(xs):
            single, _ = predict_exact(head, x)
            # dgemm vs dgemv round differently in the last ulp
            np.testing.assert_allclose(batch_logits[i], single, rtol=1e-13, atol=1e-15)
