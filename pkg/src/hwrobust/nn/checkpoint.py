"""Checkpoint = ``manifest.json`` + one little-endian f32 blob per weight tensor."""
import json
import os

import numpy as np

from ..errors import FormatError
from .graph import LayerGraph
from .layers import layer_from_spec
from .quant import QuantParams, calibrate

FORMAT_VERSION = 1


def save_checkpoint(model, path, seed=None, extra=None):
    os.makedirs(path, exist_ok=True)
    layers = []
    for k, layer in enumerate(model.layers):
        entry = {"index": k, "spec": layer.spec(), "act_quant": bool(model.act_quant[k]),
                 "act_qparams": model.act_qparams[k].to_dict() if model.act_qparams[k] else None}
        if layer.has_params:
            entry["tensors"] = {}
            for name, arr in layer.params().items():
                fname = f"layer{k}_{name}.f32"
                np.ascontiguousarray(arr, dtype="<f4").tofile(os.path.join(path, fname))
                info = {"file": fname, "shape": list(arr.shape)}
                if name == "weight":
                    info["scale"] = calibrate(arr).scale
                entry["tensors"][name] = info
        layers.append(entry)
    manifest = {"format": FORMAT_VERSION, "model_id": model.model_id, "input_shape": list(model.input_shape),
                "loss": model.loss, "seed": seed, "layers": layers}
    if extra:
        manifest.update(extra)
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_checkpoint(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{mpath}: {e}", offset=e.pos) from None
    if manifest.get("format") != FORMAT_VERSION:
        raise FormatError(f"{mpath}: unsupported checkpoint format {manifest.get('format')!r}")
    layers, flags, qps = [], [], []
    for entry in manifest["layers"]:
        params = None
        if "tensors" in entry:
            params = {}
            for name, info in entry["tensors"].items():
                fpath = os.path.join(path, info["file"])
                arr = np.fromfile(fpath, dtype="<f4")
                n = int(np.prod(info["shape"]))
                if arr.size != n:
                    raise FormatError(f"{fpath}: expected {n} floats, found {arr.size}", offset=4 * min(n, arr.size))
                params[name] = arr.reshape(info["shape"]).astype(np.float32)
        layers.append(layer_from_spec(entry["spec"], params))
        flags.append(entry["act_quant"])
        qps.append(QuantParams(**entry["act_qparams"]) if entry["act_qparams"] else None)
    model = LayerGraph(layers, manifest["input_shape"], manifest["loss"], flags, manifest.get("model_id", "model"))
    model.act_qparams = qps
    return model, manifest
