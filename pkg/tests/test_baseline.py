import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from healthlm.baseline import (MlpClassifier, MlpConfig, MlpRegressor, ZScoreNormalizer, evaluate_mlp, featurize,
                               feature_matrix, predict_mlp, train_mlp)
from healthlm.errors import EmptyTrainSet, InvalidSpec, ShapeMismatch
from healthlm.tasks import Split, TaskId, build_task_dataset, make_example, sample_shots, ShotPlan


def _calorie(activity="walking", duration=50, weight=156, kcal=136.5):
    return make_example(TaskId.CALORIES, {"activity": activity, "duration_min": duration, "weight_lbs": weight},
                        kcal, Split.TRAIN, "c0")


def test_featurize_calories():
    assert list(featurize(_calorie()).values) == [3.5, 50.0, 156.0]


def test_featurize_shapes():
    ds = build_task_dataset(TaskId.IBI_TO_AFIB, 2, 2, seed=0, use_ecg=False)
    assert featurize(ds.train[0]).values.shape == (32,)
    act = build_task_dataset(TaskId.ACTIVITY_REC, 2, 2, seed=0)
    assert featurize(act.train[0]).values.shape == (5,)
    stress = build_task_dataset(TaskId.STRESS_EMA, 2, 2, seed=0)
    assert featurize(stress.train[0]).values.shape == (5,)


def test_short_sequences_padded_with_mean():
    ex = make_example(TaskId.IBI_TO_HR, [800.0, 1000.0], 66.7, Split.TRAIN, "s")
    v = featurize(ex).values
    assert list(v[:2]) == [800.0, 1000.0] and np.all(v[2:] == 900.0)


def test_featurize_is_pure():
    ex = _calorie()
    assert featurize(ex).values.tobytes() == featurize(ex).values.tobytes()


def test_zscore_on_training_shots():
    X = np.random.default_rng(0).normal(5, 3, (50, 4))
    Z = ZScoreNormalizer().fit(X).transform(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(Z.std(axis=0) - 1) < 1e-6)
    with pytest.raises(ShapeMismatch):
        ZScoreNormalizer().fit(X).transform(X[:, :3])


def test_estimators_follow_sklearn_protocol():
    clf = MlpClassifier(hidden_width=8, epochs=3)
    assert clone(clf).get_params() == clf.get_params()
    assert MlpRegressor(learning_rate=0.01).get_params()["learning_rate"] == 0.01


def _separable(n=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (n, 3))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] > 0, "pos", "neg")
    return X, y


def test_separable_toy_learned_within_200_epochs():
    X, y = _separable()
    clf = MlpClassifier(hidden_width=32, epochs=200, learning_rate=0.05).fit(X, y)
    assert clf.training_accuracy(X, y) == 1.0


def test_zero_epochs_equals_initialisation():
    X, y = _separable()
    a = MlpClassifier(hidden_width=16, epochs=0).fit(X, y)
    b = MlpClassifier(hidden_width=16, epochs=0).fit(X, y)
    b._init_params(3, 2)
    assert np.array_equal(a.decision_function(X), b.decision_function(X))


def test_same_seed_same_weights():
    X, y = _separable()
    assert MlpClassifier(epochs=20, seed=4).fit(X, y).checksum() == MlpClassifier(epochs=20, seed=4).fit(X, y).checksum()
    assert MlpClassifier(epochs=20, seed=4).fit(X, y).checksum() != MlpClassifier(epochs=20, seed=5).fit(X, y).checksum()


def _fixed_logits(logits):
    clf = MlpClassifier(hidden_width=1, epochs=0, classes=["c0", "c1"]).fit(np.zeros((2, 1)), ["c0", "c1"])
    clf.W1_[:] = 0.0
    clf.b1_[:] = 0.0
    clf.W2_[:] = 0.0
    clf.b2_[:] = logits
    return clf


def test_argmax_and_tie_break():
    assert _fixed_logits([2.0, -1.0]).predict(np.zeros((1, 1)))[0] == "c0"
    assert _fixed_logits([0.5, 0.5]).predict(np.zeros((1, 1)))[0] == "c0"
    assert _fixed_logits([-1.0, 2.0]).predict(np.zeros((1, 1)))[0] == "c1"


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.sampled_from([np.exp, np.tanh, lambda v: 3 * v + 1]))
def test_argmax_invariant_under_monotone_maps(logits, f):
    a = _fixed_logits(logits).predict(np.zeros((1, 1)))[0]
    b = _fixed_logits(f(np.asarray(logits))).predict(np.zeros((1, 1)))[0]
    mapped = f(np.asarray(logits))
    if mapped[0] != mapped[1]:  # a strictly monotone map can still collapse values in floating point
        assert a == b


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_loss_non_increasing_at_small_lr(seed):
    X, y = _separable(seed=seed)
    clf = MlpClassifier(hidden_width=16, epochs=50, learning_rate=1e-3, seed=seed).fit(X, y)
    assert np.all(np.diff(clf.loss_curve_) <= 1e-12)


def test_regressor_fits_linear_target():
    X = np.random.default_rng(1).normal(0, 1, (30, 2))
    y = 3 * X[:, 0] - X[:, 1] + 10
    reg = MlpRegressor(hidden_width=64, epochs=2000, learning_rate=0.01).fit(X, y)
    assert np.mean(np.abs(reg.predict(X) - y)) < 0.3


def test_errors():
    with pytest.raises(EmptyTrainSet):
        train_mlp([])
    with pytest.raises(InvalidSpec):
        MlpConfig(hidden_width=0)
    trained = train_mlp([_calorie(), _calorie("running", 30, 200, 255.0)], MlpConfig(epochs=5))
    with pytest.raises(ShapeMismatch):
        predict_mlp(trained, np.zeros((1, 4)))


def test_calories_beat_the_mean_predictor():
    mlp, naive = [], []
    for seed in range(3):
        ds = build_task_dataset(TaskId.CALORIES, 25, 100, seed=seed)
        shots = sample_shots(ds.train, ShotPlan(25, seed))
        _, score = evaluate_mlp(train_mlp(shots, MlpConfig(seed=seed)), ds.test)
        mean = np.mean([e.answer_value for e in shots])
        mean_mae = np.mean([abs(e.answer_value - mean) for e in ds.test])
        mlp.append(score["metric_value"])
        naive.append(mean_mae)
    assert np.median(mlp) < np.median(naive)


def test_evaluate_records_cover_test_split():
    ds = build_task_dataset(TaskId.ACTIVITY_REC, 5, 10, seed=0)
    records, score = evaluate_mlp(train_mlp(ds.train, MlpConfig(epochs=50)), ds.test)
    assert len(records) == len(ds.test) == score["n"]
    assert score["metric_name"] == "accuracy" and score["failure_rate"] == 0.0
    assert feature_matrix(ds.test).shape == (len(ds.test), 5)
