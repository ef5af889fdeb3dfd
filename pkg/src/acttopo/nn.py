"""Minimal float64 feedforward engine.

Forward evaluation with full activation recording, exact reverse-mode
gradients (used for both training and input-space attacks), deterministic
SGD training, and the two reference conv-conv-dense-dense architectures.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    ConsistencyError,
    FormatError,
    NumericError,
    UsageError,
)

logger = logging.getLogger(__name__)

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, SIGMOID, IDENTITY)


def _check_activation(name: str) -> None:
    if name not in _ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {name!r}, expected one of {_ACTIVATIONS}")


@dataclass(frozen=True)
class Dense:
    in_size: int
    out_size: int
    activation: str = RELU

    def __post_init__(self):
        if self.in_size < 1 or self.out_size < 1:
            raise ConfigurationError(f"Dense dimensions must be >= 1, got {self}")
        _check_activation(self.activation)


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    activation: str = RELU

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w) < 1:
            raise ConfigurationError(f"Conv2d dimensions must be >= 1, got {self}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError(f"Conv2d needs stride >= 1 and padding >= 0, got {self}")
        _check_activation(self.activation)


@dataclass(frozen=True)
class MaxPool2d:
    kernel: int
    stride: int

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ConfigurationError(f"MaxPool2d kernel/stride must be >= 1, got {self}")


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Dense | Conv2d | MaxPool2d | Flatten


@dataclass(frozen=True)
class NetworkSpec:
    """An ordered stack of layers plus the expected input shape."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        layer_shapes(self)  # raises ConfigurationError if layers do not compose


@lru_cache(maxsize=None)
def layer_shapes(spec: NetworkSpec) -> tuple[tuple[int, ...], ...]:
    """Shapes flowing through the network: input shape followed by each layer's output shape."""
    shapes = [spec.input_shape]
    cur = spec.input_shape
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            if len(cur) != 1 or cur[0] != layer.in_size:
                raise ConfigurationError(
                    f"layer {li} (Dense) expects flat input of size {layer.in_size}, got shape {cur}"
                )
            cur = (layer.out_size,)
        elif isinstance(layer, Conv2d):
            if len(cur) != 3 or cur[0] != layer.in_channels:
                raise ConfigurationError(
                    f"layer {li} (Conv2d) expects {layer.in_channels}xHxW input, got shape {cur}"
                )
            _, h, w = cur
            oh = (h + 2 * layer.padding - layer.kernel_h) // layer.stride + 1
            ow = (w + 2 * layer.padding - layer.kernel_w) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ConfigurationError(f"layer {li} (Conv2d) output would be empty for input {cur}")
            cur = (layer.out_channels, oh, ow)
        elif isinstance(layer, MaxPool2d):
            if len(cur) != 3:
                raise ConfigurationError(f"layer {li} (MaxPool2d) expects CxHxW input, got shape {cur}")
            c, h, w = cur
            oh = (h - layer.kernel) // layer.stride + 1
            ow = (w - layer.kernel) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ConfigurationError(f"layer {li} (MaxPool2d) output would be empty for input {cur}")
            cur = (c, oh, ow)
        elif isinstance(layer, Flatten):
            cur = (int(np.prod(cur)),)
        else:  # pragma: no cover - layer union is closed
            raise ConfigurationError(f"layer {li} has unknown type {type(layer).__name__}")
        shapes.append(cur)
    return tuple(shapes)


@dataclass
class NetworkWeights:
    """Per-layer (weight, bias) pairs, aligned with NetworkSpec.layers; None for parameter-free layers."""

    params: tuple[tuple[np.ndarray, np.ndarray] | None, ...]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(tuple(None if p is None else (p[0].copy(), p[1].copy()) for p in self.params))


def init_weights(spec: NetworkSpec, seed: int = 0) -> NetworkWeights:
    """Seeded uniform init on +-sqrt(6 / (fan_in + fan_out)); biases start at zero."""
    rng = np.random.default_rng(seed)
    params: list[tuple[np.ndarray, np.ndarray] | None] = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            limit = math.sqrt(6.0 / (layer.in_size + layer.out_size))
            w = rng.uniform(-limit, limit, size=(layer.out_size, layer.in_size))
            b = np.zeros(layer.out_size)
            params.append((w, b))
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_channels * layer.kernel_h * layer.kernel_w
            fan_out = layer.out_channels * layer.kernel_h * layer.kernel_w
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w))
            b = np.zeros(layer.out_channels)
            params.append((w, b))
        else:
            params.append(None)
    return NetworkWeights(tuple(params))


def validate_weights(spec: NetworkSpec, weights: NetworkWeights) -> None:
    if len(weights.params) != len(spec.layers):
        raise ConfigurationError(
            f"weights carry {len(weights.params)} layer entries, spec has {len(spec.layers)}"
        )
    for li, (layer, p) in enumerate(zip(spec.layers, weights.params)):
        if isinstance(layer, Dense):
            if p is None or p[0].shape != (layer.out_size, layer.in_size) or p[1].shape != (layer.out_size,):
                raise ConfigurationError(f"layer {li} (Dense) has mismatched parameter shapes")
        elif isinstance(layer, Conv2d):
            wshape = (layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)
            if p is None or p[0].shape != wshape or p[1].shape != (layer.out_channels,):
                raise ConfigurationError(f"layer {li} (Conv2d) has mismatched parameter shapes")
        elif p is not None:
            raise ConfigurationError(f"layer {li} ({type(layer).__name__}) should carry no parameters")


@dataclass
class ActivationRecord:
    """Everything the forward pass saw for one input."""

    input: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    pool_argmax: dict[int, np.ndarray]  # layer index -> flat source index per pooled output
    logits: np.ndarray
    predicted_class: int


# ---------------------------------------------------------------------------
# receptive-field geometry (shared by the forward pass and the graph builder)

@lru_cache(maxsize=None)
def conv_source_indices(in_shape: tuple[int, int, int], kernel_h: int, kernel_w: int,
                        stride: int, padding: int) -> tuple[np.ndarray, tuple[int, int]]:
    """im2col index matrix.

    Returns ``(idx, (oh, ow))`` where ``idx[p, k]`` is the flat index into the
    CxHxW input feeding output position ``p`` through kernel column ``k``
    (columns ordered channel-major, then row-major over the kernel window),
    or -1 where the receptive field falls into padding.
    """
    c, h, w = in_shape
    oh = (h + 2 * padding - kernel_h) // stride + 1
    ow = (w + 2 * padding - kernel_w) // stride + 1
    oy, ox = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    base_y = (oy.reshape(-1, 1) * stride - padding).astype(np.int64)
    base_x = (ox.reshape(-1, 1) * stride - padding).astype(np.int64)
    ci = np.repeat(np.arange(c), kernel_h * kernel_w)
    ky = np.tile(np.repeat(np.arange(kernel_h), kernel_w), c)
    kx = np.tile(np.arange(kernel_w), c * kernel_h)
    iy = base_y + ky[None, :]
    ix = base_x + kx[None, :]
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    lin = ci[None, :] * (h * w) + iy * w + ix
    idx = np.where(valid, lin, -1).astype(np.int64)
    idx.setflags(write=False)
    return idx, (oh, ow)


@lru_cache(maxsize=None)
def pool_source_indices(in_shape: tuple[int, int, int], kernel: int,
                        stride: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Window index matrix for max pooling: idx[p, k] flat source index, rows ordered (c, oy, ox)."""
    c, h, w = in_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    cc, oy, ox = np.meshgrid(np.arange(c), np.arange(oh), np.arange(ow), indexing="ij")
    base = (cc * h * w + oy * stride * w + ox * stride).reshape(-1, 1).astype(np.int64)
    ky = np.repeat(np.arange(kernel), kernel)
    kx = np.tile(np.arange(kernel), kernel)
    idx = base + (ky * w + kx)[None, :]
    idx.setflags(write=False)
    return idx, (c, oh, ow)


def _gather_cols(h_flat: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # -1 entries are padding: contribute 0
    return np.where(idx >= 0, h_flat[np.maximum(idx, 0)], 0.0)


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(x, 0.0)
    if kind == SIGMOID:
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    return x.copy()


def _activation_derivative(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return (pre > 0).astype(np.float64)  # derivative at exactly 0 is 0
    if kind == SIGMOID:
        return post * (1.0 - post)
    return np.ones_like(pre)


def forward(spec: NetworkSpec, weights: NetworkWeights, x: np.ndarray) -> ActivationRecord:
    """Run the network on one input, recording pre/post activations per layer.

    Logits are the final layer's pre-activation; prediction breaks ties toward
    the lowest class index.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.shape != spec.input_shape:
        raise ConfigurationError(f"input shape {x.shape} does not match spec input {spec.input_shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("input contains non-finite entries")
    validate_weights(spec, weights)

    pre_list: list[np.ndarray] = []
    post_list: list[np.ndarray] = []
    pool_argmax: dict[int, np.ndarray] = {}
    h = x
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            w, b = weights.params[li]
            pre = w @ h + b
            post = _activate(pre, layer.activation)
        elif isinstance(layer, Conv2d):
            w, b = weights.params[li]
            idx, (oh, ow) = conv_source_indices(h.shape, layer.kernel_h, layer.kernel_w,
                                                layer.stride, layer.padding)
            cols = _gather_cols(h.reshape(-1), idx)
            wmat = w.reshape(layer.out_channels, -1)
            pre = (cols @ wmat.T).T.reshape(layer.out_channels, oh, ow) + b[:, None, None]
            post = _activate(pre, layer.activation)
        elif isinstance(layer, MaxPool2d):
            idx, out_shape = pool_source_indices(h.shape, layer.kernel, layer.stride)
            vals = h.reshape(-1)[idx]
            am = np.argmax(vals, axis=1)  # first occurrence = lowest flat index on ties
            rows = np.arange(idx.shape[0])
            pre = vals[rows, am].reshape(out_shape)
            post = pre.copy()
            pool_argmax[li] = idx[rows, am]
        else:  # Flatten
            pre = h.reshape(-1).copy()
            post = pre
        pre_list.append(pre)
        post_list.append(post)
        h = post

    logits = pre_list[-1].reshape(-1)
    return ActivationRecord(
        input=x,
        pre=pre_list,
        post=post_list,
        pool_argmax=pool_argmax,
        logits=logits,
        predicted_class=int(np.argmax(logits)),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    return z - math.log(np.sum(np.exp(z)))


def loss_and_gradients(spec: NetworkSpec, weights: NetworkWeights, x: np.ndarray,
                       true_label: int) -> tuple[float, NetworkWeights, np.ndarray]:
    """Softmax cross-entropy loss plus exact reverse-mode gradients.

    Returns ``(loss, weight_gradients, input_gradient)``. Max pooling routes
    gradient only through the recorded argmax positions.
    """
    record = forward(spec, weights, x)
    k = record.logits.size
    if not 0 <= true_label < k:
        raise UsageError(f"label {true_label} outside [0, {k})")
    logp = _log_softmax(record.logits)
    loss = float(-logp[true_label])
    if not math.isfinite(loss):
        raise NumericError("loss is non-finite")

    d = np.exp(logp)
    d[true_label] -= 1.0  # dL/d(final pre-activation); the last activation never feeds the loss
    d = d.reshape(record.pre[-1].shape)

    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(spec.layers)
    for li in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[li]
        h_in = record.post[li - 1] if li > 0 else record.input
        if isinstance(layer, Dense):
            w, _ = weights.params[li]
            grads[li] = (np.outer(d, h_in), d.copy())
            d = w.T @ d
        elif isinstance(layer, Conv2d):
            w, _ = weights.params[li]
            idx, _ = conv_source_indices(h_in.shape, layer.kernel_h, layer.kernel_w,
                                         layer.stride, layer.padding)
            cols = _gather_cols(h_in.reshape(-1), idx)
            dmat = d.reshape(layer.out_channels, -1).T  # (positions, out_channels)
            dw = (dmat.T @ cols).reshape(w.shape)
            db = d.reshape(layer.out_channels, -1).sum(axis=1)
            grads[li] = (dw, db)
            dcols = dmat @ w.reshape(layer.out_channels, -1)
            d_flat = np.zeros(h_in.size)
            valid = idx >= 0
            np.add.at(d_flat, idx[valid], dcols[valid])
            d = d_flat.reshape(h_in.shape)
        elif isinstance(layer, MaxPool2d):
            d_flat = np.zeros(h_in.size)
            np.add.at(d_flat, record.pool_argmax[li], d.reshape(-1))
            d = d_flat.reshape(h_in.shape)
        else:  # Flatten
            d = d.reshape(h_in.shape)
        if li > 0 and isinstance(spec.layers[li - 1], (Dense, Conv2d)):
            prev = spec.layers[li - 1]
            d = d * _activation_derivative(record.pre[li - 1], record.post[li - 1], prev.activation)

    return loss, NetworkWeights(tuple(grads)), d


def sgd_train(spec: NetworkSpec, weights: NetworkWeights, dataset, epochs: int,
              lr: float, batch: int = 32, seed: int = 0) -> NetworkWeights:
    """Plain SGD with a seeded shuffle. Deterministic given (weights, dataset, seed).

    ``dataset`` is anything with ``images`` and ``labels`` attributes. Mean
    per-epoch loss is logged; a NaN loss aborts with the epoch index.
    """
    images, labels = dataset.images, dataset.labels
    if len(images) == 0:
        raise UsageError("dataset is empty")
    if lr < 0:
        raise UsageError("learning rate must be >= 0")
    if batch < 1:
        raise UsageError("batch size must be >= 1")
    rng = np.random.default_rng(seed)
    w = weights.copy()
    n = len(images)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            bidx = order[start:start + batch]
            acc: list[list[np.ndarray] | None] = [None] * len(spec.layers)
            for i in bidx:
                try:
                    loss, grads, _ = loss_and_gradients(spec, w, images[i], labels[i])
                except NumericError as exc:
                    raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
                total += loss
                for li, g in enumerate(grads.params):
                    if g is None:
                        continue
                    if acc[li] is None:
                        acc[li] = [g[0].copy(), g[1].copy()]
                    else:
                        acc[li][0] += g[0]
                        acc[li][1] += g[1]
            scale = lr / len(bidx)
            for li, a in enumerate(acc):
                if a is None:
                    continue
                w.params[li][0][...] -= scale * a[0]
                w.params[li][1][...] -= scale * a[1]
        logger.info("epoch %d mean loss %.6f", epoch, total / n)
    return w


def accuracy(spec: NetworkSpec, weights: NetworkWeights, dataset) -> float:
    hits = sum(forward(spec, weights, img).predicted_class == lab
               for img, lab in zip(dataset.images, dataset.labels))
    return hits / len(dataset.images)


def preset(name: str) -> NetworkSpec:
    """The two reference architectures on 1x28x28 inputs.

    Two conv layers (three 5x5 filters then three 3x3 filters, stride 1, no
    padding) feeding dense 1452->256 and 256->10, all with the named
    activation. 28 -> 24 -> 22 spatially, and 3*22*22 = 1452.
    """
    if name not in ("ccff-relu", "ccff-sigmoid"):
        raise UsageError(f"unknown preset {name!r}; available: ccff-relu, ccff-sigmoid")
    act = RELU if name == "ccff-relu" else SIGMOID
    return NetworkSpec(
        layers=(
            Conv2d(1, 3, 5, 5, stride=1, padding=0, activation=act),
            Conv2d(3, 3, 3, 3, stride=1, padding=0, activation=act),
            Flatten(),
            Dense(1452, 256, activation=act),
            Dense(256, 10, activation=act),
        ),
        input_shape=(1, 28, 28),
    )


# ---------------------------------------------------------------------------
# model bundle on disk: manifest.json + params.bin (row-major little-endian f64)

_LAYER_TAGS = {Dense: "dense", Conv2d: "conv2d", MaxPool2d: "maxpool2d", Flatten: "flatten"}


def _layer_to_json(layer: LayerSpec) -> dict:
    d = {"kind": _LAYER_TAGS[type(layer)]}
    if isinstance(layer, Dense):
        d.update(in_size=layer.in_size, out_size=layer.out_size, activation=layer.activation)
    elif isinstance(layer, Conv2d):
        d.update(in_channels=layer.in_channels, out_channels=layer.out_channels,
                 kernel_h=layer.kernel_h, kernel_w=layer.kernel_w,
                 stride=layer.stride, padding=layer.padding, activation=layer.activation)
    elif isinstance(layer, MaxPool2d):
        d.update(kernel=layer.kernel, stride=layer.stride)
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    kind = d.get("kind")
    if kind == "dense":
        return Dense(d["in_size"], d["out_size"], d["activation"])
    if kind == "conv2d":
        return Conv2d(d["in_channels"], d["out_channels"], d["kernel_h"], d["kernel_w"],
                      d["stride"], d["padding"], d["activation"])
    if kind == "maxpool2d":
        return MaxPool2d(d["kernel"], d["stride"])
    if kind == "flatten":
        return Flatten()
    raise FormatError(f"unknown layer kind {kind!r} in model manifest")


def save_bundle(dir_path, spec: NetworkSpec, weights: NetworkWeights, metadata: dict | None = None) -> None:
    """Write manifest.json plus params.bin (all parameters concatenated in layer order)."""
    validate_weights(spec, weights)
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    blobs = []
    for p in weights.params:
        if p is None:
            continue
        blobs.append(np.ascontiguousarray(p[0], dtype="<f8").tobytes())
        blobs.append(np.ascontiguousarray(p[1], dtype="<f8").tobytes())
    payload = b"".join(blobs)
    manifest = {
        "format": "acttopo-model/1",
        "input_shape": list(spec.input_shape),
        "layers": [_layer_to_json(l) for l in spec.layers],
        "dtype": "<f8",
        "param_bytes": len(payload),
        "metadata": metadata or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "params.bin").write_bytes(payload)


def load_bundle(dir_path) -> tuple[NetworkSpec, NetworkWeights, dict]:
    """Load a model bundle, validating the parameter byte count against the manifest."""
    base = Path(dir_path)
    try:
        manifest = json.loads((base / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != "acttopo-model/1":
        raise FormatError(f"unrecognized model format {manifest.get('format')!r}")
    spec = NetworkSpec(
        layers=tuple(_layer_from_json(d) for d in manifest["layers"]),
        input_shape=tuple(manifest["input_shape"]),
    )
    payload = (base / "params.bin").read_bytes()
    if len(payload) != manifest["param_bytes"]:
        raise ConsistencyError(
            f"params.bin holds {len(payload)} bytes, manifest says {manifest['param_bytes']}"
        )
    params: list[tuple[np.ndarray, np.ndarray] | None] = []
    offset = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    for layer in spec.layers:
        if isinstance(layer, Dense):
            params.append((take((layer.out_size, layer.in_size)), take((layer.out_size,))))
        elif isinstance(layer, Conv2d):
            params.append((take((layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w)),
                           take((layer.out_channels,))))
        else:
            params.append(None)
    if offset != len(payload):
        raise ConsistencyError(
            f"params.bin holds {len(payload)} bytes but the layer list accounts for {offset}"
        )
    return spec, NetworkWeights(tuple(params)), manifest.get("metadata", {})
