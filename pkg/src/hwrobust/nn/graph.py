"""Sequential model container, forward pass with noise hooks, and input gradients."""
import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError, UsageError
from . import layers as L
from .quant import fake_quantize

LOSS_KINDS = ("softmax_xent",)

_tape_ids = itertools.count()


class LayerGraph:
    """Ordered layers ending in a softmax cross-entropy loss.

    ``act_quant[k]`` says whether the output of layer ``k`` is stored as an
    8-bit activation; ``act_qparams[k]`` holds its calibrated range.
    """

    def __init__(self, layers, input_shape, loss="softmax_xent", act_quant=None, model_id="model"):
        if loss not in LOSS_KINDS:
            raise ConfigError(f"unsupported loss {loss!r}")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.loss = loss
        self.act_quant = list(act_quant) if act_quant is not None else [False] * len(self.layers)
        if len(self.act_quant) != len(self.layers):
            raise ConfigError("act_quant must have one flag per layer")
        self.act_qparams = [None] * len(self.layers)
        self.model_id = model_id
        self.mode = "software"
        self.shapes = self._infer_shapes()

    def _infer_shapes(self):
        shapes = [self.input_shape]
        for k, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ConfigError as e:
                raise ConfigError(f"layer {k} ({layer.kind}): {e}") from None
        if len(shapes[-1]) != 1:
            raise ConfigError(f"model output must be a logit vector, got shape {shapes[-1]}")
        return shapes

    @property
    def num_classes(self):
        return self.shapes[-1][0]

    def __len__(self):
        return len(self.layers)

    def weighted_layers(self):
        return [k for k, layer in enumerate(self.layers) if layer.has_params]

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class GradientTape:
    model_ref: int
    x_shape: tuple
    mode: str
    caches: list
    pre_hook: list
    post_hook: list
    logits: np.ndarray
    tape_id: int = field(default_factory=lambda: next(_tape_ids))
    consumed: bool = False


def _check_finite(a, k, layer):
    # a finite sum implies finite entries; fall back to the full check otherwise
    if not np.isfinite(a.sum()) and not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activation at layer {k} ({layer.kind})")


def forward(model, x, noise_hooks=None, batch_index=0):
    """Run the model on a batch ``x`` of shape (B, *input_shape).

    ``noise_hooks`` maps layer index -> ``hook(activation, batch_index)`` and is
    applied to that layer's (quantized) output. Returns ``(logits, tape)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.input_shape:
        raise ConfigError(f"input shape {x.shape[1:]} does not match model input {model.input_shape}")
    hooks = noise_hooks or {}
    for k in hooks:
        if not 0 <= k < len(model.layers):
            raise ConfigError(f"noise hook references missing layer {k}")
    caches, pre, post = [], [], []
    a = x
    for k, layer in enumerate(model.layers):
        a, cache = layer.forward(a)
        _check_finite(a, k, layer)
        if model.act_quant[k]:
            qp = model.act_qparams[k]
            if qp is None:
                raise ConfigError(f"layer {k} is quantized but has no calibrated range")
            a = fake_quantize(a, qp)
        caches.append(cache)
        pre.append(a)
        if k in hooks:
            a = np.asarray(hooks[k](a, batch_index), dtype=np.float64)
            _check_finite(a, k, layer)
        post.append(a)
    tape = GradientTape(id(model), x.shape, model.mode, caches, pre, post, a)
    return a, tape


def predict(model, x, noise_hooks=None, batch_size=500):
    out = []
    for i, start in enumerate(range(0, len(x), batch_size)):
        logits, _ = forward(model, x[start:start + batch_size], noise_hooks, batch_index=i)
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def xent_loss(logits, y):
    """Per-sample softmax cross-entropy."""
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return logz - z[np.arange(len(y)), y]


def _backward(model, tape, y, need_params):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != tape.logits.shape[0]:
        raise ConfigError("label count does not match batch size")
    g = softmax(tape.logits)
    g[np.arange(len(y)), y] -= 1.0
    pgrads = [None] * len(model.layers)
    # quantizers and noise hooks are treated as identity on the backward path
    for k in range(len(model.layers) - 1, -1, -1):
        g, pg = model.layers[k].backward(g, tape.caches[k], need_params)
        pgrads[k] = pg
    return g, pgrads


def _claim(model, x_shape, tape):
    if tape.model_ref != id(model):
        raise UsageError("gradient tape was produced by a different model")
    if tuple(tape.x_shape) != tuple(x_shape):
        raise UsageError("gradient tape does not match the input batch")
    if tape.consumed:
        raise UsageError(f"gradient tape {tape.tape_id} already consumed")
    tape.consumed = True


def input_gradient(model, x, y_true, tape):
    """d(sum of per-sample losses)/dx; row ``i`` is the gradient of sample ``i``'s loss."""
    _claim(model, np.shape(x), tape)
    g, _ = _backward(model, tape, y_true, need_params=False)
    return g


def param_gradients(model, x, y_true, tape):
    _claim(model, np.shape(x), tape)
    _, pg = _backward(model, tape, y_true, need_params=True)
    return pg


def loss_and_input_gradient(model, x, y, noise_hooks=None):
    logits, tape = forward(model, x, noise_hooks)
    return xent_loss(logits, np.asarray(y)), input_gradient(model, x, y, tape)


def calibrate_activations(model, x_calib):
    """Set per-layer activation ranges from a calibration batch (max-abs)."""
    from .quant import calibrate
    saved = model.act_quant
    model.act_quant = [False] * len(model.layers)
    try:
        _, tape = forward(model, x_calib)
    finally:
        model.act_quant = saved
    model.act_qparams = [calibrate(a) for a in tape.pre_hook]
    return model


def quantize_weights(model):
    """Replace every weight tensor by its 8-bit dequantized value (per-tensor)."""
    from .quant import calibrate, fake_quantize as fq
    for layer in model.layers:
        if layer.has_params:
            w = layer.weight.astype(np.float64)
            layer.weight = fq(w, calibrate(w))
    return model


def build_model(spec, input_shape, rng, act_quant_kinds=("relu", "maxpool", "avgpool"), model_id="model"):
    """Create a model from a list of layer dicts with He-initialised weights.

    ``spec`` entries: ``{"kind": "conv2d", "out_channels": 16, "kernel": 3, "padding": 1}``,
    ``{"kind": "fc", "out_features": 10}``, ``{"kind": "relu"}``, ``{"kind": "maxpool", "size": 2}``...
    """
    layers = []
    shape = tuple(input_shape)
    for k, ls in enumerate(spec):
        kind = ls["kind"]
        if kind == "conv2d":
            kh = kw = int(ls.get("kernel", 3)) if not isinstance(ls.get("kernel"), (list, tuple)) else None
            if kh is None:
                kh, kw = ls["kernel"]
            cin = shape[0]
            fan_in = cin * kh * kw
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(ls["out_channels"], cin, kh, kw))
            layer = L.Conv2d(w, np.zeros(ls["out_channels"]), padding=ls.get("padding", 0))
        elif kind == "fc":
            if len(shape) != 1:
                raise ConfigError(f"layer {k}: fc needs a flat input, got {shape}")
            w = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=(ls["out_features"], shape[0]))
            layer = L.Linear(w, np.zeros(ls["out_features"]))
        else:
            layer = L.layer_from_spec(ls)
        try:
            shape = tuple(layer.output_shape(shape))
        except ConfigError as e:
            raise ConfigError(f"layer {k} ({kind}): {e}") from None
        layers.append(layer)
    flags = [layer.kind in act_quant_kinds for layer in layers]
    return LayerGraph(layers, input_shape, act_quant=flags, model_id=model_id)


DESK_CNN = [
    {"kind": "conv2d", "out_channels": 16, "kernel": 3, "padding": 1},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "conv2d", "out_channels": 32, "kernel": 3, "padding": 1},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "flatten"},
    {"kind": "fc", "out_features": 128},
    {"kind": "relu"},
    {"kind": "fc", "out_features": 10},
]
