import numpy as np
import pytest

from hwrobust.nn import build_model, calibrate_activations

SMALL_CNN = [
    {"kind": "conv2d", "out_channels": 3, "kernel": 3, "padding": 1},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "conv2d", "out_channels": 2, "kernel": 2},
    {"kind": "relu"},
    {"kind": "avgpool", "size": 1},
    {"kind": "flatten"},
    {"kind": "fc", "out_features": 5},
    {"kind": "relu"},
    {"kind": "fc", "out_features": 3},
]


def small_model(seed=0, quantized=False, input_shape=(1, 6, 6), spec=SMALL_CNN):
    rng = np.random.default_rng(seed)
    kinds = ("relu", "maxpool", "avgpool") if quantized else ()
    model = build_model(spec, input_shape, rng, act_quant_kinds=kinds, model_id=f"small{seed}")
    for layer in model.layers:
        if layer.has_params:
            layer.bias = rng.normal(0, 0.1, size=layer.bias.shape).astype(np.float32)
    if quantized:
        calibrate_activations(model, rng.uniform(0, 1, size=(64,) + input_shape))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# (criterion number, title, passed, detail) appended by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
