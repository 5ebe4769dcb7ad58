"""Network container: spec-driven construction, loss heads, checkpoints."""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from ..errors import DataError, ToolkitError
from .layers import Layer, LayerSpec, make_layer

__all__ = [
    "Network",
    "build_network",
    "softmax_xent",
    "mse_loss",
    "l1_loss",
    "bce_loss",
    "save_checkpoint",
    "load_checkpoint",
]

_CKPT_MAGIC = b"MPNET\n"
_CKPT_VERSION = 1


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch. Returns (loss, dlogits, probs)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n, probs


def mse_loss(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def l1_loss(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def bce_loss(probs: np.ndarray, labels: np.ndarray):
    """Binary cross-entropy on probabilities in [0, 1]."""
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise DataError("invalid-discriminator-output",
                        f"probabilities outside [0, 1]: min {probs.min():.3g} max {probs.max():.3g}")
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    loss = float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))
    dprobs = (p - labels) / (p * (1.0 - p) * labels.size)
    return loss, dprobs


class Network:
    """An ordered stack of layers with an optional softmax-xent head.

    ``feature_tap`` names the layer whose output serves as the feature
    embedding for ``extract_features`` (by default the input of the last
    linear layer, when one exists).
    """

    def __init__(self, layers: list[Layer], input_shape, loss: str | None = None,
                 feature_tap: str | None = None, dtype=np.float64):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.loss = loss
        self.feature_tap = feature_tap
        self.dtype = np.dtype(dtype)

    def layer(self, name: str) -> Layer:
        for lay in self.layers:
            if lay.name == name:
                return lay
        raise DataError("no-such-layer", f"no layer named {name!r}")

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for lay in self.layers:
            out = lay.forward(out)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for lay in reversed(self.layers):
            dy = lay.backward(dy)
        return dy

    def zero_grads(self):
        for lay in self.layers:
            lay.zero_grads()

    def parameters(self):
        """Yield (layer, param_name, array) for every trainable array."""
        for lay in self.layers:
            for pname in lay.params:
                yield lay, pname, lay.params[pname]

    def trainable_layers(self) -> list[Layer]:
        return [lay for lay in self.layers if lay.params]

    def predict_classes(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    def extract_features(self, x: np.ndarray) -> np.ndarray:
        if self.feature_tap is None:
            raise DataError("no-feature-tap", "network has no feature tap configured")
        out = np.asarray(x, dtype=self.dtype)
        seen = False
        for lay in self.layers:
            out = lay.forward(out)
            if lay.name == self.feature_tap:
                seen = True
                break
        if not seen:
            raise DataError("no-feature-tap", f"feature tap {self.feature_tap!r} names no layer")
        return out

    def specs(self) -> list[LayerSpec]:
        return [lay.spec() for lay in self.layers]

    def state_arrays(self):
        """Flat ordered list of (key, array); key is 'layername/paramname'."""
        out = []
        for lay in self.layers:
            for pname in sorted(lay.params):
                out.append((f"{lay.name}/{pname}", lay.params[pname]))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for lay in self.layers:
            for pname in lay.params:
                key = f"{lay.name}/{pname}"
                if key not in arrays:
                    raise DataError("shape-error", f"checkpoint missing array {key}")
                arr = arrays[key]
                if arr.shape != lay.params[pname].shape:
                    raise DataError("shape-error",
                                    f"checkpoint array {key}: shape {arr.shape} vs {lay.params[pname].shape}")
                lay.params[pname] = arr.astype(self.dtype)
        self.zero_grads()


def build_network(specs: list[LayerSpec], input_shape, seed: int = 0,
                  feature_tap: str | int | None = "auto", dtype=np.float64) -> Network:
    """Build a network from layer specs, validating shape composition.

    A trailing softmax-xent spec attaches the cross-entropy head instead of
    creating a layer. Shape mismatches raise a shape-error naming the layer.
    """
    rng = np.random.default_rng(seed)
    specs = list(specs)
    loss = None
    if specs and specs[-1].kind == "softmax-xent":
        loss = "softmax-xent"
        specs = specs[:-1]
    for sp in specs:
        if sp.kind == "softmax-xent":
            raise ToolkitError("shape-error", "softmax-xent head must be the final spec")
    layers: list[Layer] = []
    counts: dict[str, int] = {}
    shape = tuple(input_shape)
    for sp in specs:
        counts[sp.kind] = counts.get(sp.kind, 0) + 1
        name = f"{sp.kind}{counts[sp.kind]}"
        layer, shape = make_layer(sp, name, shape, rng, dtype)
        layers.append(layer)
    tap: str | None
    if feature_tap == "auto":
        tap = None
        for i in range(len(layers) - 1, -1, -1):
            if layers[i].kind == "linear" and i > 0:
                tap = layers[i - 1].name
                break
    elif isinstance(feature_tap, int):
        tap = layers[feature_tap].name
    else:
        tap = feature_tap
    net = Network(layers, input_shape, loss=loss, feature_tap=tap, dtype=dtype)
    net.output_shape = shape
    return net


def save_checkpoint(net: Network, path: str):
    """Versioned binary checkpoint: JSON header + little-endian float32 blobs."""
    arrays = net.state_arrays()
    header = {
        "version": _CKPT_VERSION,
        "input_shape": list(net.input_shape),
        "loss": net.loss,
        "feature_tap": net.feature_tap,
        "specs": [{"kind": sp.kind, "params": sp.params} for sp in net.specs()],
        "arrays": [{"key": key, "shape": list(arr.shape)} for key, arr in arrays],
    }
    blob = io.BytesIO()
    blob.write(_CKPT_MAGIC)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob.write(struct.pack("<I", len(head)))
    blob.write(head)
    for _, arr in arrays:
        blob.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path: str, dtype=np.float64) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataError("shape-error", f"{path}: not a network checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != _CKPT_VERSION:
            raise DataError("shape-error", f"{path}: unsupported checkpoint version {header['version']}")
        specs = [LayerSpec(d["kind"], dict(d["params"])) for d in header["specs"]]
        if header["loss"] == "softmax-xent":
            specs.append(LayerSpec("softmax-xent"))
        net = build_network(specs, tuple(header["input_shape"]),
                            feature_tap=header["feature_tap"], dtype=dtype)
        arrays = {}
        for meta in header["arrays"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError("shape-error", f"{path}: truncated checkpoint")
            arrays[meta["key"]] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    net.load_state_arrays(arrays)
    return net
