import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcrossval.errors import InputError
from fedcrossval.models import (Dataset, ModelSpec, TrainConfig, cross_entropy_loss,
                                evaluate_per_class, forward, init_model, local_train,
                                predict_proba, sgd_step)
from fedcrossval.rng import derive_rng


def random_instance(rng, kind="softmax-linear", input_dim=None, num_classes=None):
    input_dim = input_dim or int(rng.integers(2, 9))
    num_classes = num_classes or int(rng.integers(2, 5))
    hidden = int(rng.integers(2, 6)) if kind == "mlp-1hidden" else None
    spec = ModelSpec(kind, input_dim, num_classes, hidden)
    params = rng.normal(0, 0.5, spec.param_count)
    n = int(rng.integers(1, 6))
    data = Dataset(rng.normal(0, 1, (n, input_dim)),
                   rng.integers(0, num_classes, n), num_classes)
    return spec, params, data


def finite_difference_gradient(spec, params, data, h=1e-6):
    """Central differences of the mean cross-entropy loss, per coordinate."""
    grad = np.zeros_like(params)
    for i in range(len(params)):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (cross_entropy_loss(spec, up, data)
                   - cross_entropy_loss(spec, down, data)) / (2 * h)
    return grad


class TestSpec:
    def test_param_count_softmax(self):
        assert ModelSpec("softmax-linear", 4, 3).param_count == 15

    def test_param_count_mlp(self):
        # 784*512 + 512 + 512*10 + 10
        assert ModelSpec("mlp-1hidden", 784, 10, hidden_dim=512).param_count == 407_050

    def test_mlp_requires_hidden(self):
        with pytest.raises(InputError):
            ModelSpec("mlp-1hidden", 4, 3)

    def test_bad_kind(self):
        with pytest.raises(InputError):
            ModelSpec("cnn", 4, 3)


class TestInit:
    def test_deterministic(self):
        spec = ModelSpec("softmax-linear", 4, 3)
        assert np.array_equal(init_model(spec, 7), init_model(spec, 7))
        assert not np.array_equal(init_model(spec, 7), init_model(spec, 8))

    def test_scale_and_dim(self):
        spec = ModelSpec("mlp-1hidden", 6, 3, hidden_dim=4)
        w = init_model(spec, 0)
        assert w.shape == (spec.param_count,)
        assert np.all(np.abs(w) <= 0.05)


class TestForward:
    def test_zero_params_uniform(self):
        spec = ModelSpec("softmax-linear", 4, 3)
        probs = forward(spec, np.zeros(spec.param_count), np.ones(4))
        assert np.allclose(probs, 1 / 3)

    def test_equal_logits_uniform(self):
        # bias-only construction: all logits equal 1
        spec = ModelSpec("softmax-linear", 4, 5)
        params = np.zeros(spec.param_count)
        params[4 * 5:] = 1.0
        probs = forward(spec, params, np.zeros(4))
        assert np.allclose(probs, 0.2)

    def test_dimension_mismatch(self):
        spec = ModelSpec("softmax-linear", 4, 3)
        with pytest.raises(InputError):
            forward(spec, np.zeros(spec.param_count), np.zeros(5))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_distribution_property(self, seed):
        rng = np.random.default_rng(seed)
        kind = "mlp-1hidden" if seed % 2 else "softmax-linear"
        spec, params, data = random_instance(rng, kind)
        probs = predict_proba(spec, params * 100, data.features)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


class TestGradients:
    def test_zero_learning_rate_is_identity(self):
        rng = np.random.default_rng(0)
        spec, params, data = random_instance(rng)
        assert np.array_equal(sgd_step(spec, params, data, 0.0), params)

    def test_empty_batch_rejected(self):
        spec = ModelSpec("softmax-linear", 3, 2)
        empty = Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2)
        with pytest.raises(InputError):
            sgd_step(spec, np.zeros(spec.param_count), empty, 0.1)

    def test_single_sample_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        spec = ModelSpec("softmax-linear", 5, 3)
        params = rng.normal(0, 0.5, spec.param_count)
        data = Dataset(rng.normal(0, 1, (1, 5)), np.array([1]), 3)
        analytic = (params - sgd_step(spec, params, data, 1.0))
        numeric = finite_difference_gradient(spec, params, data)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize("kind", ["softmax-linear", "mlp-1hidden"])
    def test_random_instances_match_finite_differences(self, kind):
        rng = np.random.default_rng(11)
        for _ in range(10):
            spec, params, data = random_instance(rng, kind)
            analytic = params - sgd_step(spec, params, data, 1.0)
            numeric = finite_difference_gradient(spec, params, data)
            scale = np.maximum(np.abs(numeric), 1e-4)
            assert np.all(np.abs(analytic - numeric) / scale < 1e-5)

    def test_loss_decreases_on_separable_data(self):
        rng = np.random.default_rng(5)
        spec = ModelSpec("softmax-linear", 2, 2)
        n = 100
        feats = np.vstack([rng.normal([-3, 0], 0.5, (n, 2)),
                           rng.normal([3, 0], 0.5, (n, 2))])
        labels = np.repeat([0, 1], n)
        data = Dataset(feats, labels, 2)
        w = init_model(spec, 0)
        first = cross_entropy_loss(spec, w, data)
        for _ in range(200):
            idx = rng.choice(2 * n, 20, replace=False)
            w = sgd_step(spec, w, data.subset(idx), 0.5)
        assert cross_entropy_loss(spec, w, data) < first


class TestLocalTrain:
    def _setup(self):
        rng = np.random.default_rng(1)
        spec = ModelSpec("softmax-linear", 4, 3)
        data = Dataset(rng.normal(0, 1, (30, 4)), rng.integers(0, 3, 30), 3)
        return spec, init_model(spec, 2), data

    def test_zero_iterations_zero_delta(self):
        spec, w0, data = self._setup()
        cfg = TrainConfig(0, 5, 0.1)
        delta = local_train(spec, w0, data, cfg, derive_rng(0, "t"))
        assert np.array_equal(delta, np.zeros_like(w0))

    def test_deterministic_per_seed(self):
        spec, w0, data = self._setup()
        cfg = TrainConfig(10, 5, 0.1)
        d1 = local_train(spec, w0, data, cfg, derive_rng(5, "t"))
        d2 = local_train(spec, w0, data, cfg, derive_rng(5, "t"))
        assert np.array_equal(d1, d2)

    def test_replay_oracle(self):
        # w0 + delta must reproduce a step-by-step replay with the same stream
        spec, w0, data = self._setup()
        cfg = TrainConfig(12, 5, 0.1)
        delta = local_train(spec, w0, data, cfg, derive_rng(9, "t"))
        rng = derive_rng(9, "t")
        w = w0
        for _ in range(cfg.iterations):
            idx = rng.choice(len(data), size=cfg.batch_size, replace=False)
            w = sgd_step(spec, w, data.subset(idx), cfg.learning_rate)
        assert np.allclose(w0 + delta, w, rtol=0, atol=1e-12)

    def test_composes_across_split_budgets(self):
        spec, w0, data = self._setup()
        rng = derive_rng(3, "t")
        d1 = local_train(spec, w0, data, TrainConfig(7, 5, 0.1), rng)
        w1 = w0 + d1
        d2 = local_train(spec, w1, data, TrainConfig(5, 5, 0.1), rng)
        combined = w0 + local_train(spec, w0, data, TrainConfig(12, 5, 0.1),
                                    derive_rng(3, "t"))
        assert np.allclose(w1 + d2, combined, rtol=1e-10, atol=1e-12)

    def test_batch_too_large(self):
        spec, w0, data = self._setup()
        with pytest.raises(InputError):
            local_train(spec, w0, data, TrainConfig(1, 100, 0.1), derive_rng(0, "t"))

    def test_params_stay_finite(self):
        spec, w0, data = self._setup()
        delta = local_train(spec, w0, data, TrainConfig(50, 10, 1.0), derive_rng(0, "t"))
        assert np.all(np.isfinite(delta))


class TestEvaluate:
    def test_perfect_model(self):
        spec = ModelSpec("softmax-linear", 2, 2)
        # strong weights that classify x[0] < 0 as class 0
        params = np.array([-5.0, 5.0, 0.0, 0.0, 0.0, 0.0])
        data = Dataset(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.array([0, 1]), 2)
        result = evaluate_per_class(spec, params, data)
        assert result.accuracy.tolist() == [1.0, 1.0]
        assert result.overall == 1.0

    def test_absent_class_is_nan(self):
        spec = ModelSpec("softmax-linear", 2, 3)
        data = Dataset(np.ones((4, 2)), np.array([0, 0, 1, 1]), 3)
        result = evaluate_per_class(spec, np.zeros(spec.param_count), data)
        assert np.isnan(result.accuracy[2])
        assert result.count[2] == 0

    def test_constant_predictor_on_balanced_data(self):
        spec = ModelSpec("softmax-linear", 2, 2)
        params = np.zeros(spec.param_count)
        params[4] = 10.0  # bias pushes every prediction to class 0
        data = Dataset(np.zeros((10, 2)), np.repeat([0, 1], 5), 2)
        result = evaluate_per_class(spec, params, data)
        assert result.accuracy.tolist() == [1.0, 0.0]
