"""Plain minibatch SGD on softmax cross-entropy."""
import logging

import numpy as np

from ..errors import ConfigError, NumericError
from .graph import calibrate_activations, forward, param_gradients, quantize_weights, xent_loss

log = logging.getLogger(__name__)


def train(model, dataset, epochs, lr, seed, batch_size=64, quantize=True, calib_size=1000):
    """Train ``model`` in place and return it.

    ``dataset`` is ``(x, y)``. Training runs in floating point with activation
    quantization off; afterwards weights are rounded to 8 bits and activation
    ranges calibrated on the first ``calib_size`` training samples.
    ``lr`` is one rate or a list with one rate per epoch.
    """
    x, y = dataset
    y = np.asarray(y, dtype=np.int64)
    if len(y) and (y.min() < 0 or y.max() >= model.num_classes):
        raise ConfigError(f"labels must lie in [0, {model.num_classes})")
    rates = [float(r) for r in lr] if np.ndim(lr) else [float(lr)] * epochs
    if len(rates) != epochs:
        raise ConfigError(f"lr schedule has {len(rates)} entries for {epochs} epochs")
    rng = np.random.default_rng(seed)
    saved = model.act_quant
    model.act_quant = [False] * len(model.layers)
    try:
        for epoch, lr in enumerate(rates):
            order = rng.permutation(len(x))
            total, seen = 0.0, 0
            for start in range(0, len(x), batch_size):
                idx = order[start:start + batch_size]
                xb, yb = x[idx], y[idx]
                try:
                    logits, tape = forward(model, xb)
                except NumericError as e:
                    raise NumericError(f"training diverged in epoch {epoch}: {e}") from None
                loss = xent_loss(logits, yb)
                if not np.all(np.isfinite(loss)):
                    raise NumericError(f"training diverged in epoch {epoch}: loss is NaN/inf")
                total += float(loss.sum())
                seen += len(idx)
                if lr == 0:
                    continue
                grads = param_gradients(model, xb, yb, tape)
                step = lr / len(idx)
                for layer, g in zip(model.layers, grads):
                    if g is None:
                        continue
                    layer.weight = layer.weight - step * g["weight"]
                    layer.bias = (layer.bias - step * g["bias"]).astype(np.float32)
            log.info("epoch %d: mean loss %.4f", epoch, total / max(seen, 1))
    finally:
        model.act_quant = saved
    if quantize:
        quantize_weights(model)
    if quantize and any(model.act_quant):
        calibrate_activations(model, x[:calib_size])
    return model
