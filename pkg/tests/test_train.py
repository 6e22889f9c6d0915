import numpy as np
import pytest

from adfnet.data import make_synthetic, prepare
from adfnet.errors import ConfigurationError, TrainingDivergedError, UndefinedMetricError
from adfnet.model import NetworkConfig, init_params
from adfnet.train import (
    AdamState,
    TrainConfig,
    adam_step,
    cross_validate,
    fold_indices,
    r_squared,
    train,
)


@pytest.fixture(scope="module")
def linear_splits():
    return prepare(make_synthetic("linear-1d", seed=0), 0.8, 0)


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState([np.array([0.2, 0.1])], [np.array([0.04, 0.01])], 3)
        new, after = adam_step(p, [np.zeros(2)], state, 0.1)
        np.testing.assert_allclose(after.m[0], 0.9 * state.m[0])
        np.testing.assert_allclose(after.v[0], 0.999 * state.v[0])
        fresh, _ = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), 0.1)
        np.testing.assert_array_equal(fresh[0], p[0])
        assert after.t == 4

    def test_first_step_is_sign_step(self):
        g = np.array([3.0, -0.02, 1e-3])
        new, _ = adam_step([np.zeros(3)], [g], AdamState.zeros_like([g]), 5e-4)
        np.testing.assert_allclose(new[0], -5e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_equal_gradients_equal_updates(self):
        p = [np.array([0.3, -1.0])]
        new, _ = adam_step(p, [np.array([0.7, 0.7])], AdamState.zeros_like(p), 0.01)
        step = new[0] - p[0]
        assert step[0] == pytest.approx(step[1], abs=1e-15)


class TestRSquared:
    def test_perfect(self):
        assert r_squared([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 1.0

    def test_mean_prediction(self):
        y = np.array([1.0, 2.0, 6.0])
        assert r_squared(np.full(3, y.mean()), y) == pytest.approx(0.0, abs=1e-15)

    def test_hand_example(self):
        assert r_squared([0.0, 1.0, 1.0], [0.0, 1.0, 2.0]) == pytest.approx(0.5)

    @pytest.mark.parametrize("pred,target", [([1.0, 1.0], [2.0, 2.0]), ([1.0], [1.0]), ([1.0, 2.0], [1.0])])
    def test_undefined(self, pred, target):
        with pytest.raises(UndefinedMetricError):
            r_squared(pred, target)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"lr": 0.0}, {"beta1": 1.0}, {"beta2": 0.0}, {"batch_size": 0}, {"mode": "bnn"},
         {"epochs": 0, "refine": False}, {"epochs": -1}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.epochs, cfg.refine_epochs, cfg.folds) == (5e-4, 64, 300, 100, 5)


class TestTrain:
    def test_linear_recovery(self, linear_splits):
        train_set, val_set = linear_splits
        net = NetworkConfig(widths=(1, 1))
        report, params = train(train_set, val_set, net, TrainConfig(epochs=200, refine=False))
        # closed-form least squares on the same split as the reference fit
        X = np.column_stack([train_set.X[:, 0], np.ones(train_set.n)])
        coef, *_ = np.linalg.lstsq(X, train_set.y, rcond=None)
        ols = r_squared(val_set.X[:, 0] * coef[0] + coef[1], val_set.y)
        assert report.final["r2"] >= 0.95
        assert report.final["r2"] >= ols - 0.01
        stats = train_set.stats
        slope = params.weights[0][0, 0] * stats.y_std / stats.std[0]
        assert slope == pytest.approx(3.0, rel=0.05)
        assert len(report.epochs) == 200

    def test_loss_descends(self, linear_splits):
        train_set, val_set = linear_splits
        net = NetworkConfig(widths=(1, 8, 1), dropout=0.1)
        report, _ = train(train_set, val_set, net, TrainConfig(epochs=5, refine_epochs=2))
        assert report.epochs[-1]["train_loss"] < report.epochs[0]["train_loss"]
        assert [row["phase"] for row in report.epochs] == [1] * 5 + [2] * 2
        assert all(np.isfinite(row["val_loss"]) for row in report.epochs)

    def test_zero_penalty_refinement_is_plain_training(self, linear_splits):
        train_set, _ = linear_splits
        small = train_set.subset(np.arange(200))
        net = NetworkConfig(widths=(1, 4, 1), lam=0.0, dropout=0.2)
        _, two_phase = train(small, None, net, TrainConfig(epochs=3, refine_epochs=2, batch_size=32))
        _, one_phase = train(small, None, net, TrainConfig(epochs=5, refine=False, batch_size=32))
        assert two_phase.equals(one_phase)

    def test_regularised_from_scratch(self, linear_splits):
        train_set, _ = linear_splits
        small = train_set.subset(np.arange(64))
        net = NetworkConfig(widths=(1, 3, 1))
        report, params = train(small, None, net, TrainConfig(epochs=0, refine_epochs=2, batch_size=32))
        assert [row["phase"] for row in report.epochs] == [2, 2]
        assert all(np.all(np.isfinite(a)) for a in params.flat())

    def test_deterministic(self, linear_splits):
        train_set, val_set = linear_splits
        net = NetworkConfig(widths=(1, 6, 1))
        cfg = TrainConfig(epochs=2, refine_epochs=1, seed=3)
        a, pa = train(train_set, val_set, net, cfg)
        b, pb = train(train_set, val_set, net, cfg)
        assert a.payload() == b.payload()
        assert pa.equals(pb)

    def test_baseline_mode(self, linear_splits):
        train_set, val_set = linear_splits
        net = NetworkConfig(widths=(1, 8, 1), dropout=0.0)
        report, _ = train(train_set, val_set, net, TrainConfig(epochs=30, refine=False, mode="dnn", lr=5e-3))
        assert report.final["r2"] > 0.95

    def test_divergence_names_batch(self, linear_splits):
        train_set, _ = linear_splits
        bad = train_set.subset(np.arange(100))
        bad.X[70, 0] = 1e200
        with pytest.raises(TrainingDivergedError, match=r"phase 1, epoch 1, batch \d"):
            train(bad, None, NetworkConfig(widths=(1, 2, 1)), TrainConfig(epochs=1, refine=False, batch_size=10))

    def test_width_mismatch(self, linear_splits):
        train_set, _ = linear_splits
        with pytest.raises(ConfigurationError):
            train(train_set, None, NetworkConfig(widths=(2, 1)), TrainConfig(epochs=1))

    def test_warm_start_parameters(self, linear_splits):
        train_set, _ = linear_splits
        net = NetworkConfig(widths=(1, 1))
        start = init_params(net)
        _, params = train(train_set.subset(np.arange(64)), None, net, TrainConfig(epochs=1, refine=False), start)
        assert not params.equals(start)


class TestFolds:
    def test_partition(self):
        folds = fold_indices(100, 5, 0)
        assert [len(f) for f in folds] == [20] * 5
        joined = np.concatenate(folds)
        assert sorted(joined.tolist()) == list(range(100))

    def test_seeded(self):
        a, b = fold_indices(50, 5, 1), fold_indices(50, 5, 1)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @pytest.mark.parametrize("n,k", [(3, 5), (10, 1)])
    def test_invalid(self, n, k):
        with pytest.raises(ConfigurationError):
            fold_indices(n, k, 0)

    def test_cross_validation_aggregate(self):
        ds = make_synthetic("linear-1d", seed=2, n=200)
        cv = cross_validate(ds, NetworkConfig(widths=(1, 1)), TrainConfig(epochs=3, refine=False), folds=4)
        agg = cv.aggregate()
        assert len(agg["r2_per_fold"]) == 4
        assert agg["r2_mean"] == pytest.approx(np.mean(agg["r2_per_fold"]))
        assert agg["r2_std"] == pytest.approx(np.std(agg["r2_per_fold"]))
        for fold in cv.folds:
            assert abs(fold.train_set.X.mean()) < 1e-10
            assert len(np.intersect1d(fold.train_idx, fold.val_idx)) == 0
