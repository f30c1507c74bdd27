from .graph import (DESK_CNN, GradientTape, LayerGraph, build_model, calibrate_activations, forward,
                    input_gradient, predict, quantize_weights, softmax, xent_loss)
from .quant import QuantParams, QuantTensor, calibrate, dequantize, quantize
from .train import train

__all__ = [
    "DESK_CNN", "GradientTape", "LayerGraph", "QuantParams", "QuantTensor", "build_model",
    "calibrate", "calibrate_activations", "dequantize", "forward", "input_gradient", "predict",
    "quantize", "quantize_weights", "softmax", "train", "xent_loss",
]
