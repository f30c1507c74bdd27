"""Dataset loaders: MNIST (IDX), CIFAR-10 (binary batches) and synthetic blobs.

All loaders return ``((x_train, y_train), (x_test, y_test))`` with images as
float64 in [0, 1] shaped (N, C, H, W) and int64 labels.
"""
import gzip
import os
import struct

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        raise
    except OSError as e:
        raise FormatError(f"{path}: {e}") from None


def read_idx(path, expect_magic):
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise FormatError(f"{path}: IDX magic 0x{magic:08x}, expected 0x{expect_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX dimensions", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header != n:
        raise FormatError(f"{path}: expected {n} data bytes, found {len(raw) - header}", offset=header)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist(root):
    def pair(prefix):
        x = read_idx(_find(root, f"{prefix}-images-idx3-ubyte"), IDX_IMAGES_MAGIC)
        y = read_idx(_find(root, f"{prefix}-labels-idx1-ubyte"), IDX_LABELS_MAGIC)
        if len(x) != len(y):
            raise FormatError(f"{root}: {len(x)} images but {len(y)} labels")
        return x[:, None, :, :].astype(np.float64) / 255.0, _labels(y, 10)
    return pair("train"), pair("t10k")


def _find(root, name):
    for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
        p = os.path.join(root, cand)
        if os.path.exists(p):
            return p
    raise ConfigError(f"missing MNIST file {name} under {root}")


def read_cifar_batch(path):
    raw = _read_bytes(path)
    if len(raw) % CIFAR_RECORD:
        good = len(raw) - len(raw) % CIFAR_RECORD
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}-byte records",
                          offset=good)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return x, _labels(rec[:, 0], 10, path)


def load_cifar10(root):
    train_files = [os.path.join(root, f"data_batch_{i}.bin") for i in range(1, 6)]
    train_files = [p for p in train_files if os.path.exists(p)]
    test_file = os.path.join(root, "test_batch.bin")
    if not train_files or not os.path.exists(test_file):
        raise ConfigError(f"missing CIFAR-10 binary batches under {root}")
    parts = [read_cifar_batch(p) for p in train_files]
    train = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
    return train, read_cifar_batch(test_file)


def _labels(y, num_classes, where=""):
    y = np.asarray(y, dtype=np.int64)
    if len(y) and (y.min() < 0 or y.max() >= num_classes):
        raise FormatError(f"{where}: label outside [0, {num_classes})")
    return y


def synthetic_blobs(n_train, n_test, num_classes=2, shape=(1, 4, 4), spread=0.08, seed=0):
    """Gaussian class blobs clipped to [0, 1]; centres drawn once per seed."""
    rng = np.random.default_rng(seed)
    dim = int(np.prod(shape))
    centres = rng.uniform(0.2, 0.8, size=(num_classes, dim))

    def draw(n):
        y = rng.integers(0, num_classes, size=n)
        x = centres[y] + rng.normal(0.0, spread, size=(n, dim))
        return np.clip(x, 0.0, 1.0).reshape((n,) + tuple(shape)), y.astype(np.int64)

    return draw(n_train), draw(n_test)


def load_dataset(spec):
    """``spec``: ``{"kind": "mnist"|"cifar10"|"synthetic", "path": ..., limits...}``."""
    kind = spec.get("kind")
    if kind == "mnist":
        train, test = load_mnist(spec["path"])
    elif kind == "cifar10":
        train, test = load_cifar10(spec["path"])
    elif kind == "synthetic":
        train, test = synthetic_blobs(spec.get("n_train", 2000), spec.get("n_test", 500),
                                      spec.get("num_classes", 2), tuple(spec.get("shape", (1, 4, 4))),
                                      spec.get("spread", 0.08), spec.get("seed", 0))
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if spec.get("train_limit"):
        train = (train[0][:spec["train_limit"]], train[1][:spec["train_limit"]])
    if spec.get("test_limit"):
        test = (test[0][:spec["test_limit"]], test[1][:spec["test_limit"]])
    return train, test
