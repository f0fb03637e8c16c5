from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaugecnn.dataset import generate_canon, make_angle_grid, replicate
from gaugecnn.exceptions import FormatError, InvalidParameterError, TrainingDivergedError, TruncatedError
from gaugecnn.imaging import make_default_glyph
from gaugecnn.network import (
    PARAM_NAMES,
    TINY_CONFIG,
    ModelConfig,
    evaluate,
    forward,
    gradient_check,
    init_model,
    load_model,
    model_from_bytes,
    model_to_bytes,
    predict,
    save_model,
    softmax,
    train,
)

SMALL = ModelConfig(input_height=32, input_width=32, num_classes=11, conv1_filters=8,
                    conv2_filters=16, dense_units=32, epochs=5, learning_rate=1e-2)


@pytest.fixture(scope="module")
def small_train():
    canon = generate_canon(make_default_glyph(32, 32), make_angle_grid(30, 6))
    return replicate(canon, 10, seed=1)


@pytest.fixture(scope="module")
def small_trained(small_train):
    return train(init_model(SMALL, 0), small_train)


# -- config ---------------------------------------------------------------------

def test_default_config_output_width(grid90):
    cfg = ModelConfig(num_classes=grid90.count)
    assert cfg.param_shapes()["dense2.weight"] == (128, 61)
    assert cfg.feature_shape() == [(62, 62), (31, 31), (29, 29), (14, 14)]


@pytest.mark.parametrize("changes", [
    {"kernel_size": 9, "input_height": 8, "input_width": 8},
    {"input_height": 6, "input_width": 6},
    {"num_classes": 1},
    {"conv1_filters": 0},
    {"optimizer": "rmsprop"},
    {"learning_rate": 0.0},
    {"epochs": -1},
])
def test_config_errors(changes):
    with pytest.raises(InvalidParameterError):
        ModelConfig(**changes)


def test_config_dict_round_trip():
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


# -- init / forward -------------------------------------------------------------

def test_init_deterministic():
    a, b = init_model(SMALL, 3), init_model(SMALL, 3)
    c = init_model(SMALL, 4)
    for name in PARAM_NAMES:
        assert a.params[name].tobytes() == b.params[name].tobytes()
        assert a.params[name].shape == SMALL.param_shapes()[name]
    assert a.params["conv1.weight"].tobytes() != c.params["conv1.weight"].tobytes()
    assert not np.any(a.params["dense1.bias"])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_init_near_uniform(glyph64, grid90, seed):
    # in-domain inputs: glyph renderings plus a blank frame
    canon = generate_canon(glyph64, grid90, check_aliasing=False)
    x = np.concatenate([canon.images, np.zeros((1, 64, 64))])
    probs = forward(init_model(ModelConfig(num_classes=61), seed), x)
    assert np.all(np.abs(probs - 1 / 61) <= 0.2)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 12)),
              elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_properties(logits, shift):
    p = softmax(logits)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(softmax(logits + shift), p, atol=1e-9)


def test_forward_rows_sum_to_one(rng):
    probs = forward(init_model(SMALL, 1), rng.random((7, 32, 32)))
    assert probs.shape == (7, 11)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_predict_matches_forward(small_trained, small_train):
    model, _ = small_trained
    img = small_train.images[3]
    assert np.abs(predict(model, img) - forward(model, img[None])[0]).max() <= 1e-9


def test_batching_is_transparent(small_trained, small_train):
    model, _ = small_trained
    x = small_train.images[:40]
    full = forward(model, x)
    single = np.stack([predict(model, img) for img in x])
    assert np.array_equal(full, single)
    for size in (2, 7, 32):
        chunks = np.concatenate([forward(model, x[i:i + size]) for i in range(0, len(x), size)])
        assert np.array_equal(full, chunks)


def test_shape_mismatch(small_trained):
    model, _ = small_trained
    with pytest.raises(InvalidParameterError):
        predict(model, np.zeros((16, 16)))
    with pytest.raises(InvalidParameterError):
        predict(model, np.zeros((2, 32, 32)))


# -- training -------------------------------------------------------------------

def test_training_learns(small_trained, small_train):
    model, history = small_trained
    assert len(history) == 5 == len(history.accuracy) == len(history.seconds)
    assert history.loss[-1] < history.loss[0]
    assert model.trained
    assert evaluate(model, small_train)["accuracy"] >= 0.9


def test_training_deterministic(small_trained, small_train):
    again, history = train(init_model(SMALL, 0), small_train)
    for name in PARAM_NAMES:
        assert again.params[name].tobytes() == small_trained[0].params[name].tobytes()
    assert history.loss == small_trained[1].loss


def test_training_order_matters(small_trained, small_train):
    shuffled = small_train.subset(np.arange(len(small_train))[::-1])
    other, _ = train(init_model(SMALL, 0), shuffled)
    assert other.params["dense2.weight"].tobytes() != small_trained[0].params["dense2.weight"].tobytes()


def test_zero_epochs(small_train):
    model = init_model(replace(SMALL, epochs=0), 0)
    out, history = train(model, small_train)
    assert len(history) == 0
    for name in PARAM_NAMES:
        assert np.array_equal(out.params[name], model.params[name])


def test_divergence_names_step(small_train):
    model = init_model(replace(SMALL, optimizer="sgd", learning_rate=1e30), 0)
    with pytest.raises(TrainingDivergedError, match="step") as exc:
        train(model, small_train)
    assert exc.value.step >= 1


def test_train_rejects_bad_labels(small_train):
    model = init_model(replace(SMALL, num_classes=5), 0)
    with pytest.raises(InvalidParameterError):
        train(model, small_train)


def test_sgd_trains(small_train):
    model, history = train(init_model(replace(SMALL, optimizer="sgd", learning_rate=0.05), 0), small_train)
    assert history.loss[-1] < history.loss[0]


def test_untrained_is_chance_level(glyph64, grid90):
    canon = generate_canon(glyph64, grid90, check_aliasing=False)
    acc = evaluate(init_model(ModelConfig(num_classes=61), 0), canon)["accuracy"]
    assert abs(acc - 1 / 61) <= 0.05


# -- gradient check -------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_check(seed):
    assert gradient_check(TINY_CONFIG, seed) < 1e-4


def test_gradient_check_detects_sign_flip():
    def flip(grads):
        return {k: -v for k, v in grads.items()}
    assert gradient_check(TINY_CONFIG, 0, _grad_hook=flip) > 1e-2


def test_gradient_check_pool3():
    cfg = replace(TINY_CONFIG, input_height=16, input_width=16, pool_size=3, kernel_size=2)
    assert gradient_check(cfg, 5) < 1e-4


# -- model files ----------------------------------------------------------------

def test_model_round_trip_bitwise(tmp_path, small_trained, rng):
    model, _ = small_trained
    save_model(model, tmp_path / "m.gnm")
    back = load_model(tmp_path / "m.gnm")
    assert back.config == model.config and back.trained
    x = rng.random((100, 32, 32))
    assert forward(back, x).tobytes() == forward(model, x).tobytes()
    assert model_to_bytes(back) == (tmp_path / "m.gnm").read_bytes()


def test_model_file_errors(small_trained):
    data = model_to_bytes(small_trained[0])
    with pytest.raises(FormatError, match="magic"):
        model_from_bytes(b"GNM0" + data[4:])
    with pytest.raises(TruncatedError, match="dense2.weight"):
        model_from_bytes(data[:-200])
    with pytest.raises(TruncatedError, match="header"):
        model_from_bytes(data[:6])
