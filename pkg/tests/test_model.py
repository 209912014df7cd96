import math

import numpy as np
import pytest

from lesionaug.augment import TEST_TABLE_II
from lesionaug.core import DatasetManifest, Label
from lesionaug.core.rng import derive_stream
from lesionaug.model import (
    MICRO_DEFAULT,
    TABLE_III_ROWS,
    VGG19_TABLE_III,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Input,
    MaxPool2D,
    ModelConfig,
    ShapeMismatch,
    TrainConfig,
    TrainHistory,
    backward,
    cross_entropy,
    evaluate,
    forward,
    grad_check,
    init_model,
    load_model,
    predict,
    save_model,
    sgd_step,
    total_params,
    train,
    validate_config,
    zero_model,
)
from lesionaug.model.network import INPUT_CENTER, INPUT_SCALE
from lesionaug.synthgen import SynthConfig, generate_samples

from conftest import random_image

TINY = ModelConfig([Input(8, 8, 3), Conv2D(4), MaxPool2D(), Flatten(), Dense(8), Dropout(0.5), Dense(2, "softmax")])
LINEAR = ModelConfig([Input(4, 4, 3), Flatten(), Dense(2, "softmax")])


def batch(rng, n, h=8, w=8):
    return np.stack([random_image(rng, h, w).data for _ in range(n)])


class TestArchitecture:
    def test_table_rows(self):
        rows = validate_config(VGG19_TABLE_III)
        assert len(rows) == len(TABLE_III_ROWS)
        for (shape, count), (_, exp_shape, exp_count) in zip(rows, TABLE_III_ROWS):
            assert shape == exp_shape and count == exp_count

    def test_total_matches_column_sum(self):
        assert total_params(VGG19_TABLE_III) == sum(r[2] for r in TABLE_III_ROWS)

    def test_first_and_head_counts(self):
        counts = [c for _, c in validate_config(VGG19_TABLE_III)]
        assert counts[1] == 1792 and counts[2] == 36928
        assert counts[-1] == 130 and 6422784 in counts and 32896 in counts and 8256 in counts

    def test_hand_counts(self):
        # 3x3 kernels over 3 channels to 64 filters, plus biases
        assert (3 * 3 * 3 + 1) * 64 == 1792
        assert 25088 * 256 + 256 == 6422784
        assert 64 * 2 + 2 == 130

    def test_dense_before_flatten(self):
        cfg = ModelConfig([Input(8, 8, 3), Dense(4), Dense(2, "softmax")])
        with pytest.raises(ShapeMismatch) as err:
            validate_config(cfg)
        assert err.value.index == 1

    def test_softmax_must_be_last(self):
        with pytest.raises(ShapeMismatch):
            validate_config(ModelConfig([Input(4, 4, 3), Flatten(), Dense(2, "softmax"), Dense(2)]))

    def test_pool_odd_size_floors(self, rng):
        cfg = ModelConfig([Input(5, 5, 3), MaxPool2D(), Flatten(), Dense(2, "softmax")])
        assert validate_config(cfg)[1][0] == (2, 2, 3)
        probs, _ = forward(init_model(cfg, 0), batch(rng, 2, 5, 5))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_pool_too_small(self):
        with pytest.raises(ShapeMismatch):
            validate_config(ModelConfig([Input(1, 4, 3), MaxPool2D(), Flatten(), Dense(2, "softmax")]))

    def test_micro_shapes(self):
        rows = validate_config(MICRO_DEFAULT)
        assert rows[-1][0] == (2,)
        assert rows[7][0] == (16 * 16 * 16,)


class TestForward:
    def test_init_deterministic_and_bounded(self):
        a, b = init_model(TINY, 3), init_model(TINY, 3)
        for wa, wb in zip(a.weights, b.weights):
            assert (wa is None and wb is None) or np.array_equal(wa, wb)
        w = a.weights[1]
        assert np.abs(w).max() <= math.sqrt(6 / 27)
        assert not np.array_equal(init_model(TINY, 4).weights[1], w)

    def test_zero_model_is_uniform(self, rng):
        probs, _ = forward(zero_model(TINY), batch(rng, 3))
        assert np.allclose(probs, 0.5)
        assert np.all(predict(zero_model(TINY), batch(rng, 3)) == Label.BENIGN.index)

    def test_eval_deterministic(self, rng):
        m = init_model(TINY, 1)
        x = batch(rng, 4)
        assert np.array_equal(forward(m, x)[0], forward(m, x)[0])

    def test_dropout_rate_zero_equals_eval(self, rng):
        cfg = ModelConfig([Input(8, 8, 3), Flatten(), Dense(8), Dropout(0.0), Dense(2, "softmax")])
        m = init_model(cfg, 2)
        x = batch(rng, 4)
        train_p, _ = forward(m, x, "train", derive_stream(0, "b", 0, "dropout"))
        assert np.array_equal(train_p, forward(m, x)[0])

    def test_dropout_expectation(self):
        cfg = ModelConfig([Input(1, 1, 3), Flatten(), Dropout(0.5), Dense(2, "softmax")])
        m = zero_model(cfg)
        m.weights[3][:, 0] = 1.0
        x = np.ones((10000, 1, 1, 3))
        _, cache = forward(m, x, "train", derive_stream(9, "x", 0, "dropout"))
        dropped = cache[2]
        # inverted dropout keeps the expected activation unchanged
        mean = float(np.mean(dropped))
        assert abs(mean - 1.0) <= 0.02

    def test_softmax_rows(self, rng):
        m = init_model(TINY, 4)
        m.weights[6] = m.weights[6] * 50.0
        probs, _ = forward(m, batch(rng, 8))
        assert np.all(probs > 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_bad_mode(self, rng):
        with pytest.raises(ValueError):
            forward(init_model(TINY, 0), batch(rng, 1), "infer")

    def test_bad_input_shape(self, rng):
        with pytest.raises(ShapeMismatch):
            forward(init_model(TINY, 0), batch(rng, 1, 6, 6))


class TestLoss:
    def test_uniform(self):
        assert cross_entropy(np.array([[0.5, 0.5]]), [0]) == pytest.approx(math.log(2))

    def test_mean_over_batch(self):
        probs = np.array([[0.5, 0.5], [0.75, 0.25]])
        assert cross_entropy(probs, [1, 1]) == pytest.approx((math.log(2) + math.log(4)) / 2)

    def test_one_hot(self):
        assert cross_entropy(np.array([[1.0, 0.0]]), [0]) <= 1e-11

    def test_floor(self):
        assert math.isfinite(cross_entropy(np.array([[1.0, 0.0]]), [1]))


class TestBackward:
    def test_softmax_gradient_closed_form(self, rng):
        m = init_model(LINEAR, 5)
        x = batch(rng, 3, 4, 4)
        y = np.array([0, 1, 1])
        probs, cache = forward(m, x)
        dw, db = backward(m, probs, cache, y)[2]
        onehot = np.eye(2)[y]
        expected_db = (probs - onehot).mean(axis=0)
        inputs = ((x - np.asarray(INPUT_CENTER)) * INPUT_SCALE).reshape(3, -1)
        assert np.allclose(db, expected_db, atol=1e-14)
        assert np.allclose(dw, inputs.T @ (probs - onehot) / 3, atol=1e-13)

    def test_plain_sgd_step(self, rng):
        m = init_model(LINEAR, 5)
        before = m.weights[2].copy()
        x, y = batch(rng, 3, 4, 4), [0, 1, 0]
        probs, cache = forward(m, x)
        grads = backward(m, probs, cache, y)
        sgd_step(m, grads, 0.1, 0.0)
        assert np.allclose(m.weights[2], before - 0.1 * grads[2][0])

    def test_step_decreases_loss(self, rng):
        m = init_model(TINY, 6)
        x, y = batch(rng, 6), [0, 1, 0, 1, 1, 0]
        probs, cache = forward(m, x)
        before = cross_entropy(probs, y)
        sgd_step(m, backward(m, probs, cache, y), 0.01, 0.0)
        assert cross_entropy(forward(m, x)[0], y) < before

    def test_one_sample_step(self, rng):
        m = init_model(TINY, 8)
        x, y = batch(rng, 1), [1]
        probs, cache = forward(m, x)
        before = cross_entropy(probs, y)
        sgd_step(m, backward(m, probs, cache, y), 1e-3, 0.9)
        assert cross_entropy(forward(m, x)[0], y) < before

    def test_grad_check_zero_input(self):
        m = init_model(TINY, 1)
        err = grad_check(m, np.zeros((2, 8, 8, 3)), [0, 1], n_params=40)
        assert math.isfinite(err)

    def test_grad_check_linear(self, rng):
        m = init_model(LINEAR, 1)
        assert grad_check(m, batch(rng, 4, 4, 4), [0, 1, 1, 0], n_params=50) < 1e-6

    def test_grad_check_tiny(self, rng):
        m = init_model(TINY, 1)
        assert grad_check(m, batch(rng, 4), [0, 1, 1, 0], n_params=100) < 1e-4

    def test_grad_check_micro(self, rng):
        m = init_model(MICRO_DEFAULT, 0)
        x = np.stack([random_image(rng, 64, 64).data for _ in range(2)])
        assert grad_check(m, x, [0, 1], n_params=200) < 1e-4


class TestPersistence:
    def test_round_trip(self, tmp_path, rng):
        m = init_model(TINY, 7)
        save_model(m, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin", TINY)
        x = batch(rng, 2)
        assert np.array_equal(forward(m, x)[0], forward(back, x)[0])

    def test_wrong_config(self, tmp_path):
        save_model(init_model(TINY, 7), tmp_path / "m.bin")
        with pytest.raises(ShapeMismatch):
            load_model(tmp_path / "m.bin", LINEAR)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"nope")
        with pytest.raises(ValueError):
            load_model(tmp_path / "x.bin", TINY)

    def test_history_csv(self, tmp_path):
        h = TrainHistory([0.5, 0.75], [0.25, 0.5], [0.7, 0.6])
        h.write_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines == ["epoch,train_acc,val_acc,train_loss", "1,0.5,0.25,0.7", "2,0.75,0.5,0.6"]


def small_data(n_train, seed=1, n_test=4):
    cfg = SynthConfig(split_counts={"train": n_train, "validation": 4, "test": n_test})
    return generate_samples(cfg, seed)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainConfig(final_lr_fraction=1.5)

    def test_linear_decay(self):
        tc = TrainConfig(epochs=11, learning_rate=0.01, final_lr_fraction=0.1)
        assert tc.lr_at(0) == pytest.approx(0.01)
        assert tc.lr_at(5) == pytest.approx(0.0055)
        assert tc.lr_at(10) == pytest.approx(0.001)
        assert TrainConfig(epochs=1).lr_at(0) == TrainConfig().learning_rate
        flat = TrainConfig(final_lr_fraction=1.0)
        assert {flat.lr_at(e) for e in range(flat.epochs)} == {flat.learning_rate}

    def test_deterministic(self):
        data = small_data(8)
        tc = TrainConfig(epochs=2, batch_size=4, seed=3)
        m1, h1 = train(MICRO_DEFAULT, data, tc)
        m2, h2 = train(MICRO_DEFAULT, data, tc)
        assert h1 == h2
        assert all(w is None or np.array_equal(w, v) for w, v in zip(m1.weights, m2.weights))

    def test_history_length(self):
        _, h = train(MICRO_DEFAULT, small_data(8), TrainConfig(epochs=3, batch_size=8))
        assert len(h) == 3 and len(list(h.rows())) == 3

    def test_zero_model_accuracy_is_benign_fraction(self):
        data = small_data(8)
        frac = sum(r.label is Label.BENIGN for r in data.split("train")) / 8
        assert evaluate(zero_model(MICRO_DEFAULT), data, "train") == frac

    def test_empty_split(self):
        data = small_data(8)
        empty = DatasetManifest(data.root, [r for r in data.records if r.split != "validation"])
        with pytest.raises(ValueError):
            train(MICRO_DEFAULT, empty, TrainConfig(epochs=1))

    def test_loss_smoke(self):
        data = small_data(64, seed=2)
        _, h = train(MICRO_DEFAULT, data, TrainConfig(epochs=4, seed=2))
        drops = sum(b <= a for a, b in zip(h.train_loss, h.train_loss[1:]))
        assert drops >= 2

    def test_separable_data(self):
        cfg = SynthConfig(benign_diameter_ratio=0.6, diameter_std=1.0, color_shift={"benign": 0.0, "malignant": 0.2},
                          color_jitter=0.0, split_counts={"train": 160, "validation": 20, "test": 60})
        data = generate_samples(cfg, 3)
        model, _ = train(MICRO_DEFAULT, data, TrainConfig(epochs=8, seed=3))
        assert evaluate(model, data, "test") >= 0.95

    def test_overfit_eight_samples(self):
        data = small_data(8, seed=5, n_test=200)
        model, _ = train(MICRO_DEFAULT, data, TrainConfig(epochs=60, batch_size=2, seed=5))
        clean = evaluate(model, data, "train")
        augmented = evaluate(model, data, "test", TEST_TABLE_II, seed=5)
        assert clean == 1.0
        assert augmented <= clean - 0.15
