"""Layer kinds for the sequential engine.

Every weighted layer routes its matrix multiply through a ``kernel`` object
with ``matmul``/``matmul_backward``. Software layers use :class:`DenseKernel`;
crossbar mapping swaps in an analog kernel without touching the layer.
"""
import numpy as np

from ..errors import ConfigError


class DenseKernel:
    """Exact digital matrix multiply ``y = x @ W.T`` with ``W`` of shape (M, K)."""

    kind = "dense"

    def __init__(self, weight):
        self.weight = np.asarray(weight, dtype=np.float32)

    @property
    def shape(self):
        return self.weight.shape

    def effective_matrix(self):
        return self.weight.astype(np.float64)

    def matmul(self, x):
        return x @ self.effective_matrix().T

    def matmul_backward(self, grad):
        return grad @ self.effective_matrix()

    def matmul_cols(self, cols):
        """Batched ``W @ cols`` for im2col patches of shape (B, K, P)."""
        return np.matmul(self.effective_matrix(), cols)

    def matmul_cols_backward(self, grad):
        return np.matmul(self.effective_matrix().T, grad)


class Layer:
    kind = "layer"
    has_params = False

    def forward(self, x):
        """Return ``(y, cache)``."""
        raise NotImplementedError

    def backward(self, grad, cache, need_params=False):
        """Return ``(grad_input, param_grads or None)``."""
        raise NotImplementedError

    def output_shape(self, in_shape):
        return in_shape

    def spec(self):
        return {"kind": self.kind}


class Linear(Layer):
    kind = "fc"
    has_params = True

    def __init__(self, weight, bias):
        self.kernel = DenseKernel(weight)
        self.bias = np.asarray(bias, dtype=np.float32)

    @property
    def weight(self):
        return self.kernel.weight

    @weight.setter
    def weight(self, w):
        self.kernel.weight = np.asarray(w, dtype=np.float32)

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.kernel.shape[1]:
            raise ConfigError(f"fc expects input ({self.kernel.shape[1]},), got {tuple(in_shape)}")
        return (self.kernel.shape[0],)

    def forward(self, x):
        return self.kernel.matmul(x) + self.bias, x

    def backward(self, grad, cache, need_params=False):
        gx = self.kernel.matmul_backward(grad)
        if not need_params:
            return gx, None
        return gx, {"weight": grad.T @ cache, "bias": grad.sum(axis=0)}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def spec(self):
        return {"kind": self.kind, "out_features": self.kernel.shape[0], "in_features": self.kernel.shape[1]}


def im2col(x, kh, kw, padding):
    """(B, C, H, W) -> (B, C*kh*kw, Ho*Wo) patch matrix for stride-1 convolution.

    Row order is (channel, kernel row, kernel col), matching ``weight.reshape(Cout, -1)``.
    """
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    b, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + ho, j:j + wo]
    return cols.reshape(b, c * kh * kw, ho * wo), ho, wo


def col2im(cols, x_shape, kh, kw, padding, ho, wo):
    b, c, h, w = x_shape
    patches = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ho, j:j + wo] += patches[:, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


class Conv2d(Layer):
    """Stride-1 2-D convolution realized as im2col followed by the kernel matmul."""

    kind = "conv2d"
    has_params = True

    def __init__(self, weight, bias, padding=0):
        weight = np.asarray(weight, dtype=np.float32)
        self.out_channels, self.in_channels, self.kh, self.kw = weight.shape
        self.kernel = DenseKernel(weight.reshape(self.out_channels, -1))
        self.bias = np.asarray(bias, dtype=np.float32)
        self.padding = int(padding)

    @property
    def weight(self):
        return self.kernel.weight.reshape(self.out_channels, self.in_channels, self.kh, self.kw)

    @weight.setter
    def weight(self, w):
        self.kernel.weight = np.asarray(w, dtype=np.float32).reshape(self.out_channels, -1)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ConfigError(f"conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        _, h, w = in_shape
        ho, wo = h + 2 * self.padding - self.kh + 1, w + 2 * self.padding - self.kw + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv2d kernel larger than input {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def forward(self, x):
        cols, ho, wo = im2col(x, self.kh, self.kw, self.padding)
        y = self.kernel.matmul_cols(cols) + self.bias[:, None]
        return y.reshape(x.shape[0], self.out_channels, ho, wo), (cols, x.shape, ho, wo)

    def backward(self, grad, cache, need_params=False):
        cols, x_shape, ho, wo = cache
        g = grad.reshape(grad.shape[0], self.out_channels, ho * wo)
        gx = col2im(self.kernel.matmul_cols_backward(g), x_shape, self.kh, self.kw, self.padding, ho, wo)
        if not need_params:
            return gx, None
        gw = np.einsum("bmp,bkp->mk", g, cols, optimize=True)
        return gx, {"weight": gw.reshape(self.out_channels, self.in_channels, self.kh, self.kw),
                    "bias": g.sum(axis=(0, 2))}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def spec(self):
        return {"kind": self.kind, "out_channels": self.out_channels, "in_channels": self.in_channels,
                "kernel": [self.kh, self.kw], "padding": self.padding}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad, mask, need_params=False):
        return grad * mask, None


class _Pool(Layer):
    def __init__(self, size=2):
        self.size = int(size)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"{self.kind} expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ConfigError(f"{self.kind} size {self.size} does not divide {h}x{w}")
        return (c, h // self.size, w // self.size)

    def _offsets(self):
        k = self.size
        return [(i, j) for i in range(k) for j in range(k)]

    def spec(self):
        return {"kind": self.kind, "size": self.size}


class MaxPool2d(_Pool):
    kind = "maxpool"

    def forward(self, x):
        k = self.size
        y = x[:, :, ::k, ::k].copy()
        for i, j in self._offsets()[1:]:
            np.maximum(y, x[:, :, i::k, j::k], out=y)
        return y, (x, y)

    def backward(self, grad, cache, need_params=False):
        x, y = cache
        k = self.size
        gx = np.zeros(x.shape, dtype=grad.dtype)
        free = np.ones(y.shape, dtype=bool)
        # first maximum in row-major window order receives the gradient on ties
        for i, j in self._offsets():
            hit = (x[:, :, i::k, j::k] == y) & free
            gx[:, :, i::k, j::k] = np.where(hit, grad, 0.0)
            free &= ~hit
        return gx, None


class AvgPool2d(_Pool):
    kind = "avgpool"

    def forward(self, x):
        k = self.size
        y = sum(x[:, :, i::k, j::k] for i, j in self._offsets()) / (k * k)
        return y, x.shape

    def backward(self, grad, x_shape, need_params=False):
        k = self.size
        gx = np.empty(x_shape, dtype=grad.dtype)
        for i, j in self._offsets():
            gx[:, :, i::k, j::k] = grad / (k * k)
        return gx, None


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, x_shape, need_params=False):
        return grad.reshape(x_shape), None


def layer_from_spec(spec, params=None):
    """Rebuild a layer from its ``spec()`` dict; ``params`` holds weight/bias arrays."""
    kind = spec["kind"]
    if kind == "fc":
        return Linear(params["weight"], params["bias"])
    if kind == "conv2d":
        return Conv2d(params["weight"], params["bias"], padding=spec.get("padding", 0))
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool2d(spec.get("size", 2))
    if kind == "avgpool":
        return AvgPool2d(spec.get("size", 2))
    if kind == "flatten":
        return Flatten()
    raise ConfigError(f"unknown layer kind {kind!r}")
