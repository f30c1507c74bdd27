"""8-bit affine fixed-point quantization."""
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError

BITS = 8
QMAX = (1 << BITS) - 1
# scale used when a tensor's calibrated range is empty
DEGENERATE_SCALE = 1.0 / QMAX


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def to_dict(self):
        return {"scale": self.scale, "zero_point": self.zero_point}


@dataclass
class QuantTensor:
    codes: np.ndarray  # uint8
    scale: float
    zero_point: int

    @property
    def shape(self):
        return self.codes.shape


def calibrate(x, bits=BITS):
    """Pick scale/zero_point covering the range of ``x``.

    Non-negative tensors map [0, max] onto the full code range; signed tensors
    use a symmetric max-abs range with zero_point = 128.
    """
    if bits != BITS:
        raise ConfigError(f"only {BITS}-bit quantization is supported, got {bits}")
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise NumericError("cannot calibrate quantization range on empty or non-finite data")
    lo, hi = float(x.min()), float(x.max())
    if lo >= 0.0:
        scale = hi / QMAX
        zp = 0
    else:
        m = max(abs(lo), abs(hi))
        scale = 2.0 * m / QMAX
        zp = 128
    if scale == 0.0 or lo == hi:
        scale = DEGENERATE_SCALE
    return QuantParams(float(scale), zp)


def quantize_codes(x, qp):
    """Round-to-nearest-even affine quantization, saturating to [0, 255]."""
    q = np.rint(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, 0, QMAX).astype(np.uint8)


def dequantize_codes(codes, qp):
    return (codes.astype(np.float64) - qp.zero_point) * qp.scale


def quantize(x, bits=BITS, params=None):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("quantize: input contains non-finite values")
    qp = params if params is not None else calibrate(x, bits)
    return QuantTensor(quantize_codes(x, qp), qp.scale, qp.zero_point)


def dequantize(q):
    return dequantize_codes(q.codes, QuantParams(q.scale, q.zero_point))


def fake_quantize(x, qp):
    return dequantize_codes(quantize_codes(x, qp), qp)
