import math

import numpy as np
import pytest

from kervnet.errors import ConfigurationError, DomainError, ShapeError, TrainingDivergenceError
from kervnet.models import ModelSpec, conv, dense, instantiate, kerv, simple
from kervnet.tensor import Rng
from kervnet.training import (OptimizerState, TrainSchedule, adam_step, cross_entropy, evaluate_loss,
                              fit, kfold, one_hot, rmse, sgd_momentum_step)


def tiny_classifier():
    return ModelSpec((8, 2), [conv(3, 3, 1, "same"), simple("relu"), simple("flatten"),
                              dense(2), simple("softmax")], "tiny")


def toy_data(n=64, seed=0):
    """Two classes told apart by the sign of the first channel's mean."""
    rng = Rng(seed)
    labels = (np.arange(n) % 2).astype(int)
    x = rng.normal((n, 8, 2), 0.0, 0.5)
    x[:, :, 0] += np.where(labels == 1, 1.0, -1.0)[:, None]
    return x, one_hot(labels, 2)


class TestLosses:
    def test_perfect_prediction(self):
        assert cross_entropy([[0.0, 1.0, 0.0]], [[0, 1, 0]]) == 0.0

    def test_uniform_six_classes(self):
        p = np.full((2, 6), 1 / 6)
        y = one_hot([0, 5], 6)
        assert cross_entropy(p, y) == pytest.approx(math.log(6), abs=1e-12)
        assert cross_entropy(p, y) == pytest.approx(1.7918, abs=1e-4)

    def test_zero_probability_is_clamped(self):
        value = cross_entropy([[1.0, 0.0]], [[0, 1]])
        assert math.isfinite(value)
        assert value == pytest.approx(-math.log(1e-12))

    def test_rows_must_sum_to_one(self):
        with pytest.raises(DomainError):
            cross_entropy([[0.5, 0.6]], [[1, 0]])

    def test_malformed_one_hot(self):
        with pytest.raises(DomainError):
            cross_entropy([[0.5, 0.5]], [[1, 1]])

    def test_rmse_examples(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355, abs=1e-4)
        a, b = Rng(0).normal((5,)), Rng(1).normal((5,))
        assert rmse(a, b) == rmse(b, a)

    def test_rmse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmse([1, 2], [1, 2, 3])


class TestOptimizers:
    def test_sgd_momentum_by_hand(self):
        sched = TrainSchedule("sgd_momentum", 0.02, 0.5, 0.0)
        params = {"w": np.zeros(1)}
        state = OptimizerState()
        sgd_momentum_step(params, {"w": np.ones(1)}, state, sched)
        assert params["w"][0] == pytest.approx(-0.02)
        sgd_momentum_step(params, {"w": np.ones(1)}, state, sched)
        assert params["w"][0] == pytest.approx(-0.05)  # second step moves by 0.03

    def test_sgd_decay(self):
        sched = TrainSchedule("sgd_momentum", 0.02, 0.0, 5e-5)
        params = {"w": np.zeros(1)}
        sgd_momentum_step(params, {"w": np.ones(1)}, OptimizerState(), sched, iteration=1000)
        assert params["w"][0] == pytest.approx(-0.02 / 1.05)

    def test_sgd_zero_gradient(self):
        params = {"w": np.array([1.5, -2.0])}
        sgd_momentum_step(params, {"w": np.zeros(2)}, OptimizerState(), TrainSchedule.ronao())
        np.testing.assert_array_equal(params["w"], [1.5, -2.0])

    def test_adam_first_step(self):
        params = {"w": np.zeros(3)}
        adam_step(params, {"w": np.array([1.0, -1.0, 10.0])}, OptimizerState(), TrainSchedule())
        np.testing.assert_allclose(params["w"], [-1e-3, 1e-3, -1e-3], rtol=1e-6)

    def test_adam_first_step_scale_invariant(self):
        g = Rng(3).normal((6,))
        a, b = {"w": np.zeros(6)}, {"w": np.zeros(6)}
        adam_step(a, {"w": g}, OptimizerState(), TrainSchedule())
        adam_step(b, {"w": 10 * g}, OptimizerState(), TrainSchedule())
        np.testing.assert_allclose(a["w"], b["w"], rtol=1e-6)
        np.testing.assert_allclose(np.abs(a["w"]), 1e-3, rtol=1e-4)

    def test_adam_zero_gradient(self):
        params = {"w": np.array([0.25])}
        adam_step(params, {"w": np.zeros(1)}, OptimizerState(), TrainSchedule())
        assert params["w"][0] == 0.25

    @pytest.mark.parametrize("optimizer", ["sgd_momentum", "adam"])
    def test_step_reduces_quadratic(self, optimizer):
        params = {"w": np.array([3.0])}
        sched = TrainSchedule(optimizer, 0.01, 0.5)
        before = params["w"][0] ** 2
        (adam_step if optimizer == "adam" else sgd_momentum_step)(
            params, {"w": 2 * params["w"].copy()}, OptimizerState(), sched)
        assert params["w"][0] ** 2 < before

    def test_state_mirrors_shapes(self):
        state = OptimizerState()
        params = {"a": np.zeros((2, 3)), "b": np.zeros(4)}
        adam_step(params, {"a": np.ones((2, 3)), "b": np.ones(4)}, state, TrainSchedule())
        assert state.m["a"].shape == (2, 3) and state.v["b"].shape == (4,)


class TestSchedule:
    @pytest.mark.parametrize("kw", [dict(patience=0), dict(patience=100, max_epochs=100),
                                    dict(batch_size=0), dict(optimizer="rmsprop")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            TrainSchedule(**kw)

    def test_ronao_defaults(self):
        s = TrainSchedule.ronao()
        assert (s.optimizer, s.learning_rate, s.momentum, s.decay) == ("sgd_momentum", 0.02, 0.5, 5e-5)
        assert (s.max_epochs, s.patience) == (5000, 100)


class TestFit:
    def test_learns_toy_problem(self):
        x, y = toy_data()
        model = instantiate(tiny_classifier(), 0)
        report = fit(model, (x[:48], y[:48]), (x[48:], y[48:]),
                     TrainSchedule(learning_rate=0.01, batch_size=16, max_epochs=30, patience=10))
        assert report.best_val_loss < 0.3
        acc = np.mean(model.predict(x[48:]).argmax(1) == y[48:].argmax(1))
        assert acc >= 0.9

    def test_zero_learning_rate_stops_after_patience(self):
        x, y = toy_data(32)
        model = instantiate(tiny_classifier(), 0)
        report = fit(model, (x, y), (x, y), TrainSchedule(learning_rate=0.0, max_epochs=50, patience=3))
        assert report.epochs == 4
        assert len(set(report.val_losses)) == 1
        assert report.best_epoch == 1

    def test_best_weights_restored(self):
        x, y = toy_data()
        model = instantiate(tiny_classifier(), 1)
        report = fit(model, (x[:48], y[:48]), (x[48:], y[48:]),
                     TrainSchedule("sgd_momentum", 0.5, 0.9, batch_size=8, max_epochs=25, patience=5))
        assert report.best_val_loss == min(report.val_losses)
        assert evaluate_loss(model, (x[48:], y[48:]), "cross_entropy") == pytest.approx(
            report.best_val_loss, abs=1e-12)
        assert report.epochs <= report.best_epoch + 5

    def test_deterministic(self):
        x, y = toy_data()
        reports = []
        for _ in range(2):
            model = instantiate(tiny_classifier(), 2)
            sched = TrainSchedule(batch_size=10, max_epochs=5, patience=2, seed=3)
            reports.append(fit(model, (x[:40], y[:40]), (x[40:], y[40:]), sched).lines())
        assert reports[0] == reports[1]

    def test_divergence_carries_partial_report(self):
        spec = ModelSpec((8, 1), [kerv(4, 3, 1, "same", degree=4), kerv(4, 3, 1, "same", degree=4),
                                  simple("flatten"), dense(8)])
        x = Rng(0).normal((16, 8, 1), 0, 3.0)
        model = instantiate(spec, 0)
        with pytest.raises(TrainingDivergenceError) as info:
            fit(model, (x, x.reshape(16, 8)), (x, x.reshape(16, 8)),
                TrainSchedule("sgd_momentum", 10.0, 0.9, max_epochs=50, patience=5), "rmse")
        assert info.value.report is not None

    def test_empty_split_rejected(self):
        x, y = toy_data(8)
        with pytest.raises(ConfigurationError):
            fit(instantiate(tiny_classifier()), (x, y), (x[:0], y[:0]), TrainSchedule(max_epochs=2, patience=1))


class TestKfold:
    def test_ten_items_five_folds(self):
        folds = kfold(10, 5, seed=0)
        assert [len(v) for _, v in folds] == [2] * 5

    def test_partition(self):
        folds = kfold(23, 5, seed=4)
        vals = np.concatenate([v for _, v in folds])
        np.testing.assert_array_equal(np.sort(vals), np.arange(23))
        sizes = [len(v) for _, v in folds]
        assert max(sizes) - min(sizes) <= 1
        for tr, va in folds:
            assert not set(tr) & set(va) and len(tr) + len(va) == 23

    def test_deterministic(self):
        a, b = kfold(30, 5, seed=9), kfold(30, 5, seed=9)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            kfold(3, 5)
        with pytest.raises(ConfigurationError):
            kfold(10, 1)
