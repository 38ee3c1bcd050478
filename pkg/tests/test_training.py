import math

import numpy as np
import pytest

from bilstm_ids.gradcheck import numerical_gradient, relative_error
from bilstm_ids.model import ModelConfig, build_model, init_params
from bilstm_ids.numerics import make_rng, softmax
from bilstm_ids.training import (AdamState, Dataset, TrainConfig, TrainHistory, adam_step,
                                 cross_entropy, evaluate, export_history, load_history, one_hot,
                                 sgd_step, split_dataset, split_indices, split_sizes, train)

SMALL = dict(bilstm_hidden=(4, 4), conv_kernels=8, dense_sizes=(8,))


def small_model(F=3, classes=5, seed=0):
    m = build_model(ModelConfig(input_features=F, num_classes=classes, **SMALL))
    init_params(m, make_rng(seed, "init"))
    return m


def separable(n=200, F=3, seed=0):
    rng = make_rng(seed)
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 10, F))
    X[:, :, 0] += np.where(y == 1, 2.0, -2.0)[:, None]
    return Dataset(X, y)


# --- loss ------------------------------------------------------------------

def test_loss_values():
    t = one_hot([0, 3], 5)
    assert cross_entropy(t.copy(), t)[0] == 0.0
    loss, _ = cross_entropy(np.full((2, 5), 0.2), t)
    assert abs(loss - math.log(5)) < 1e-12
    assert round(loss, 5) == 1.60944


def test_loss_gradient_wrt_logits():
    rng = make_rng(3)
    z = rng.normal(size=(4, 5))
    t = one_hot(rng.integers(0, 5, size=4), 5)
    _, g = cross_entropy(softmax(z), t)
    num = numerical_gradient(lambda: cross_entropy(softmax(z), t)[0], z)
    assert relative_error(g, num) < 1e-6


def test_loss_rejects_bad_onehot():
    with pytest.raises(ValueError):
        cross_entropy(np.full((1, 2), 0.5), np.array([[1.0, 1.0]]))
    with pytest.raises(ValueError):
        one_hot([5], 5)


# --- optimizers ------------------------------------------------------------

@pytest.mark.parametrize("g", [3.0, -0.5, 1e-3])
def test_adam_first_step_magnitude(g):
    p = {"w": np.array([1.0])}
    adam_step(p, {"w": np.array([g])}, AdamState(), lr=0.01)
    assert abs((1.0 - p["w"][0]) - 0.01 * np.sign(g)) < 1e-7


def test_adam_zero_gradient_keeps_param():
    p = {"w": np.array([0.7, -2.0])}
    st = AdamState()
    for _ in range(50):
        adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    np.testing.assert_array_equal(p["w"], [0.7, -2.0])


def test_adam_minimizes_square():
    p = {"w": np.array([1.0])}
    st = AdamState()
    for _ in range(100):
        adam_step(p, {"w": 2.0 * p["w"]}, st, lr=0.1)
    assert abs(p["w"][0]) < 0.1


def test_adam_skips_non_trainable():
    m = small_model()
    before = m.store["bn.moving_mean"].copy()
    grads = {n: np.ones_like(m.store[n]) for n in m.store.trainable_names()}
    adam_step(m.store, grads, AdamState(), lr=0.1)
    np.testing.assert_array_equal(m.store["bn.moving_mean"], before)
    with pytest.raises(KeyError):
        adam_step(m.store, {"bn.moving_mean": np.ones(3)}, AdamState(), lr=0.1)


def test_sgd_step():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": np.array([2.0])}, 0.1)
    assert p["w"][0] == pytest.approx(0.8)


# --- splitting -------------------------------------------------------------

def test_split_sizes():
    assert split_sizes(100) == (60, 20, 20)
    assert split_sizes(10) == (6, 2, 2)


def test_split_determinism_and_coverage():
    a = split_indices(100, seed=1)
    b = split_indices(100, seed=1)
    c = split_indices(100, seed=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    assert [len(x) for x in c] == [60, 20, 20]
    allidx = np.concatenate(a)
    assert sorted(allidx.tolist()) == list(range(100))


def test_split_stratifies_when_possible():
    labels = np.repeat(np.arange(5), 20)
    tr, va, te = split_indices(100, labels=labels, seed=3)
    for part, size in ((tr, 12), (va, 4), (te, 4)):
        np.testing.assert_array_equal(np.bincount(labels[part], minlength=5), [size] * 5)


def test_split_dataset_and_small_n():
    ds = separable(20)
    tr, va, te = split_dataset(ds, seed=0)
    assert (len(tr), len(va), len(te)) == (12, 4, 4)
    with pytest.raises(ValueError):
        split_indices(4)


# --- training loop ---------------------------------------------------------

def test_step_counting():
    ds = separable(64)
    hist = train(small_model(classes=2), ds, ds[:0], TrainConfig(epochs=1, batch_size=32))
    assert hist.steps == 2 and len(hist) == 1
    assert math.isnan(hist.val_loss[0])


def test_learns_separable_two_class_set():
    ds = separable(200)
    hist = train(small_model(classes=2), ds, ds[:20], TrainConfig(epochs=100, batch_size=32))
    assert hist.train_accuracy[-1] >= 0.99


def test_zero_learning_rate_freezes_params():
    m = small_model(classes=2)
    trainable = {n: m.store[n].copy() for n in m.store.trainable_names()}
    ds = separable(64)
    # one full batch per epoch, so batch-norm statistics do not vary with shuffling
    hist = train(m, ds, ds[:16], TrainConfig(epochs=4, batch_size=64, learning_rate=0.0))
    for n, v in trainable.items():
        np.testing.assert_array_equal(m.store[n], v)
    assert len(set(hist.train_accuracy)) == 1
    assert max(hist.train_loss) - min(hist.train_loss) < 1e-12


def test_training_is_reproducible(tmp_path):
    ds = separable(64)
    paths = []
    for k in range(2):
        hist = train(small_model(classes=2), ds, ds[:16], TrainConfig(epochs=3, shuffle_seed=5))
        paths.append(tmp_path / f"h{k}.csv")
        export_history(hist, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_evaluate_accuracy_is_binary_trace():
    m = small_model(classes=5)
    rng = make_rng(1)
    ds = Dataset(rng.normal(size=(30, 10, 3)), rng.integers(0, 5, size=30))
    cm, met = evaluate(m, ds)
    assert cm.total == 30
    assert met.accuracy == np.trace(cm.binary().counts) / 30


# --- history export --------------------------------------------------------

def test_history_file(tmp_path):
    h = TrainHistory([0.5], [0.75], [0.6], [0.7], 2)
    export_history(h, tmp_path / "h.csv")
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 2
    h3 = TrainHistory([1 / 3, 0.25, 0.125], [0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 1 / 7])
    export_history(h3, tmp_path / "h3.csv")
    assert len((tmp_path / "h3.csv").read_text().splitlines()) == 4
    back = load_history(tmp_path / "h3.csv")
    for attr in ("train_loss", "train_accuracy", "val_loss", "val_accuracy"):
        assert np.max(np.abs(np.array(getattr(back, attr)) - getattr(h3, attr))) <= 5e-7


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(split_ratios=(0.5, 0.5, 0.5))
    assert TrainConfig().epochs == 100 and TrainConfig().batch_size == 32
