import numpy as np
import pytest
from conftest import small_model
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference, naive_forward, smooth_instance

from hwrobust.data import synthetic_blobs
from hwrobust.errors import ConfigError, NumericError, UsageError
from hwrobust.nn import LayerGraph, build_model, forward, input_gradient, predict, softmax, train, xent_loss
from hwrobust.nn import layers as L
from hwrobust.nn.graph import loss_and_input_gradient, param_gradients


def total_loss(model, y):
    return lambda x: float(xent_loss(forward(model, x)[0], y).sum())


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_identity_fc():
    model = LayerGraph([L.Linear(np.eye(2), np.zeros(2))], (2,))
    logits, _ = forward(model, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(logits, [[1.0, 2.0]])


@pytest.mark.parametrize("quantized", [False, True])
def test_forward_matches_loop_reference(quantized):
    model = small_model(seed=3, quantized=quantized)
    x = np.random.default_rng(0).uniform(0, 1, size=(3, 1, 6, 6))
    logits, tape = forward(model, x)
    np.testing.assert_allclose(logits, naive_forward(model, x), rtol=1e-10, atol=1e-12)
    assert [a.shape[1:] for a in tape.pre_hook] == model.shapes[1:]


def test_forward_without_hooks_equals_empty_hooks():
    model = small_model(seed=1)
    x = np.random.default_rng(1).uniform(size=(4, 1, 6, 6))
    a, _ = forward(model, x)
    b, _ = forward(model, x, noise_hooks={})
    np.testing.assert_array_equal(a, b)


def test_forward_is_pure():
    model = small_model(seed=2, quantized=True)
    x = np.random.default_rng(2).uniform(size=(4, 1, 6, 6))
    np.testing.assert_array_equal(forward(model, x)[0], forward(model, x)[0])


def test_hook_locality_and_caching():
    model = small_model(seed=4, quantized=True)
    x = np.random.default_rng(3).uniform(size=(2, 1, 6, 6))
    _, clean = forward(model, x)
    _, hooked = forward(model, x, {4: lambda a, b: a + 1.0})
    for k in range(4):
        np.testing.assert_array_equal(clean.post_hook[k], hooked.post_hook[k])
    np.testing.assert_array_equal(hooked.post_hook[4], hooked.pre_hook[4] + 1.0)


def test_forward_errors():
    model = small_model()
    with pytest.raises(ConfigError):
        forward(model, np.zeros((1, 1, 5, 5)))
    with pytest.raises(ConfigError):
        forward(model, np.zeros((1, 1, 6, 6)), {99: lambda a, b: a})
    with pytest.raises(NumericError, match="layer 2"):
        forward(model, np.zeros((1, 1, 6, 6)), {2: lambda a, b: a * np.nan})


def test_incompatible_layers_rejected():
    with pytest.raises(ConfigError):
        build_model([{"kind": "fc", "out_features": 3}], (1, 4, 4), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        LayerGraph([L.Linear(np.zeros((2, 3)), np.zeros(2)), L.Linear(np.zeros((2, 4)), np.zeros(2))], (3,))


def test_single_class_gradient_is_zero():
    model = LayerGraph([L.Linear(np.array([[0.7, -1.3]]), np.zeros(1))], (2,))
    x = np.array([[0.2, 0.9]])
    _, g = loss_and_input_gradient(model, x, [0])
    np.testing.assert_array_equal(g, 0.0)


def test_two_class_closed_form():
    w = np.array([[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]])
    model = LayerGraph([L.Linear(w, np.array([0.1, -0.2]))], (3,))
    x = np.array([[0.3, 0.6, 0.1], [0.9, 0.2, 0.4]])
    y = np.array([1, 0])
    logits, tape = forward(model, x)
    p = softmax(x @ w.astype(np.float32).T.astype(np.float64) + np.array([0.1, -0.2], dtype=np.float32))
    expected = (p - np.eye(2)[y]) @ w.astype(np.float32).astype(np.float64)
    np.testing.assert_allclose(input_gradient(model, x, y, tape), expected, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_input_gradient_matches_finite_differences(seed):
    model = small_model(seed=seed)
    rng = np.random.default_rng(seed)
    x = smooth_instance(model, rng, (2, 1, 6, 6))
    y = rng.integers(0, 3, size=2)
    _, tape = forward(model, x)
    g = input_gradient(model, x, y, tape)
    assert rel_err(g, central_difference(total_loss(model, y), x)) < 1e-4


@pytest.mark.parametrize("kind", ["conv2d", "fc", "relu", "maxpool", "avgpool", "flatten"])
def test_each_layer_kind_gradient(kind):
    rng = np.random.default_rng(7)
    head = {"conv2d": [{"kind": "conv2d", "out_channels": 2, "kernel": 3, "padding": 1}],
            "relu": [{"kind": "relu"}], "maxpool": [{"kind": "maxpool", "size": 2}],
            "avgpool": [{"kind": "avgpool", "size": 2}], "flatten": [], "fc": []}[kind]
    tail = [{"kind": "flatten"}, {"kind": "fc", "out_features": 3}]
    model = build_model(head + tail, (2, 4, 4), rng, act_quant_kinds=())
    x = smooth_instance(model, rng, (2, 2, 4, 4), low=-1.0)
    y = np.array([0, 2])
    _, g = loss_and_input_gradient(model, x, y)
    assert rel_err(g, central_difference(total_loss(model, y), x)) < 1e-4


def test_param_gradients_match_finite_differences():
    model = small_model(seed=9)
    rng = np.random.default_rng(9)
    x = smooth_instance(model, rng, (3, 1, 6, 6))
    y = rng.integers(0, 3, size=3)
    _, tape = forward(model, x)
    pg = param_gradients(model, x, y, tape)
    layer = model.layers[0]
    w0 = layer.weight.astype(np.float64)

    def f(w):
        layer.kernel.weight = w.reshape(layer.out_channels, -1)  # keep f64 for the difference quotient
        return total_loss(model, y)(x)

    fd = central_difference(f, w0)
    layer.weight = w0
    assert rel_err(pg[0]["weight"], fd) < 1e-4


def test_tape_misuse():
    model = small_model()
    x = np.zeros((1, 1, 6, 6))
    _, tape = forward(model, x)
    input_gradient(model, x, [0], tape)
    with pytest.raises(UsageError):
        input_gradient(model, x, [0], tape)
    _, tape = forward(model, x)
    with pytest.raises(UsageError):
        input_gradient(small_model(seed=5), x, [0], tape)
    with pytest.raises(UsageError):
        input_gradient(model, np.zeros((2, 1, 6, 6)), [0, 0], tape)


def test_input_gradient_does_not_mutate_model():
    model = small_model(seed=6, quantized=True)
    before = [lay.weight.copy() for lay in model.layers if lay.has_params]
    loss_and_input_gradient(model, np.full((2, 1, 6, 6), 0.5), [0, 1])
    after = [lay.weight for lay in model.layers if lay.has_params]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_predict_matches_argmax_of_logits(seed):
    model = small_model(seed=seed % 17)
    x = np.random.default_rng(seed).uniform(size=(5, 1, 6, 6))
    np.testing.assert_array_equal(predict(model, x, batch_size=2), forward(model, x)[0].argmax(axis=1))


def blob_model(seed=0):
    return build_model([{"kind": "flatten"}, {"kind": "fc", "out_features": 8}, {"kind": "relu"},
                        {"kind": "fc", "out_features": 2}], (1, 4, 4), np.random.default_rng(seed))


def test_train_separates_blobs():
    (xtr, ytr), _ = synthetic_blobs(400, 10, num_classes=2, seed=3)
    model = train(blob_model(), (xtr, ytr), epochs=20, lr=0.1, seed=0)
    acc = np.mean(predict(model, xtr) == ytr)
    assert acc >= 0.99


def test_train_is_deterministic():
    data, _ = synthetic_blobs(200, 10, seed=1)
    a = train(blob_model(), data, epochs=2, lr=0.1, seed=5)
    b = train(blob_model(), data, epochs=2, lr=0.1, seed=5)
    for la, lb in zip(a.layers, b.layers):
        if la.has_params:
            np.testing.assert_array_equal(la.weight, lb.weight)
            np.testing.assert_array_equal(la.bias, lb.bias)


def test_constant_schedule_matches_scalar_lr():
    data, _ = synthetic_blobs(200, 10, seed=1)
    a = train(blob_model(), data, epochs=2, lr=0.1, seed=5)
    b = train(blob_model(), data, epochs=2, lr=[0.1, 0.1], seed=5)
    for la, lb in zip(a.layers, b.layers):
        if la.has_params:
            np.testing.assert_array_equal(la.weight, lb.weight)


def test_schedule_length_must_match_epochs():
    data, _ = synthetic_blobs(20, 10, seed=1)
    with pytest.raises(ConfigError, match="2 entries for 3 epochs"):
        train(blob_model(), data, epochs=3, lr=[0.1, 0.05], seed=0)


def test_zero_learning_rate_keeps_weights():
    data, _ = synthetic_blobs(100, 10, seed=1)
    model = blob_model()
    before = [lay.weight.copy() for lay in model.layers if lay.has_params]
    train(model, data, epochs=1, lr=0.0, seed=0, quantize=False)
    for b, lay in zip(before, [lay for lay in model.layers if lay.has_params]):
        np.testing.assert_array_equal(b, lay.weight)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_names_epoch():
    data, _ = synthetic_blobs(100, 10, seed=1)
    with pytest.raises(NumericError, match="epoch 0"):
        train(blob_model(), data, epochs=3, lr=1e300, seed=0)


def test_train_rejects_bad_labels():
    (x, y), _ = synthetic_blobs(20, 1, seed=0)
    with pytest.raises(ConfigError):
        train(blob_model(), (x, y + 5), epochs=1, lr=0.1, seed=0)
