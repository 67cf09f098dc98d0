"""Image-level presence classifier: architecture, training and weight files."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import diffnet
from .diffnet import Conv, Dense, GlobalAvgPool, MaxPool, Network, ReLU

__all__ = [
    "ClassifierModel",
    "TrainConfig",
    "build_default",
    "normalize",
    "train",
    "predict",
    "predict_batch",
    "save_weights",
    "load_weights",
    "PresenceClassifier",
    "DatasetError",
    "WeightFileError",
]

MAGIC = b"CPSD"
FORMAT_VERSION = 1
_KIND_TAGS = {"conv": 1, "relu": 2, "maxpool": 3, "gap": 4, "dense": 5}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class DatasetError(ValueError):
    """Training data that cannot be used (single class, mixed shapes, empty)."""


class WeightFileError(ValueError):
    """Malformed weight file; the message names the path and byte offset."""


@dataclass
class ClassifierModel:
    net: Network
    mean: float
    std: float
    input_side: int

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("normalization std must be positive")

    @property
    def norm_stats(self):
        return self.mean, self.std

    def copy(self):
        return ClassifierModel(self.net.copy(), self.mean, self.std, self.input_side)


@dataclass
class TrainConfig:
    epochs: int = 25
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0, learning rate and batch size positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


def build_default(input_side=64, seed=0, channels=(8, 16, 32)):
    """Three conv/relu/maxpool blocks, global average pool, one-logit head.

    Weights are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases start at 0.
    """
    input_side = int(input_side)
    if input_side < 16 or input_side // 8 < 1:
        raise ValueError(f"input_side {input_side} too small for three 2x pooling stages (need >= 16)")
    rng = np.random.default_rng(seed)
    layers, c_in = [], 1
    for c_out in channels:
        bound = np.sqrt(6.0 / (c_in * 9))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(np.float32)
        layers += [Conv(c_in, c_out, 3, weight=w), ReLU(), MaxPool(2, 2)]
        c_in = c_out
    bound = np.sqrt(6.0 / c_in)
    layers += [GlobalAvgPool(), Dense(c_in, 1, weight=rng.uniform(-bound, bound, (1, c_in)).astype(np.float32))]
    net = Network(layers, (1, input_side, input_side))
    return ClassifierModel(net, 0.0, 1.0, input_side)


def normalize(image, stats):
    mean, std = stats
    if not std > 0:
        raise ValueError("std must be positive")
    return (np.asarray(image, dtype=np.float64) - mean) / std


def _check_image(model, image):
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-2:] != (model.input_side, model.input_side):
        raise ValueError(f"image shape {image.shape} does not match model input side {model.input_side}")
    return image


def predict(model: ClassifierModel, image):
    """Return ``(score, logit)`` for one image in [0, 1] intensity units."""
    image = _check_image(model, image)
    logit, _ = diffnet.forward(model.net, normalize(image, model.norm_stats))
    return float(diffnet.sigmoid(logit)), logit


def predict_batch(model: ClassifierModel, images):
    images = _check_image(model, images)
    if images.ndim == 2:
        images = images[None]
    logits, _ = diffnet.forward_batch(model.net, normalize(images, model.norm_stats)[:, None])
    return diffnet.sigmoid(logits), logits


def _param_list(net):
    return [(i, name) for i, layer in enumerate(net.layers) for name in layer.params]


def _batch_loss_grad(net, x, y):
    logits, trace = diffnet.forward_batch(net, x[:, None])
    p = diffnet.sigmoid(logits)
    loss = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    seed = (p - y) / len(y)
    grads = diffnet.backward(net, trace, seed, need_params=True)
    return float(loss.mean()), grads.params


def train(dataset, cfg: TrainConfig | None = None, input_side=None, callback=None):
    """SGD with momentum on sigmoid cross-entropy.

    ``dataset`` is a sequence of ``(image, label)`` pairs. The model is
    built from ``cfg.seed`` and the same seed drives minibatch shuffling.
    ``callback(epoch, loss)`` is called after every epoch when given.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    shapes = {np.shape(img) for img, _ in dataset}
    if len(shapes) != 1:
        raise DatasetError(f"images have mixed shapes: {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 2 or shape[0] != shape[1]:
        raise DatasetError(f"expected square single-channel images, got {shape}")
    labels = np.array([int(lbl) for _, lbl in dataset], dtype=np.float64)
    if set(np.unique(labels)) != {0.0, 1.0}:
        raise DatasetError("dataset must contain both labels 0 and 1")
    images = np.stack([np.asarray(img, dtype=np.float64) for img, _ in dataset])

    model = build_default(input_side or shape[0], seed=cfg.seed)
    mean = float(np.float32(images.mean()))
    std = float(np.float32(images.std()))
    if not std > 0:
        raise DatasetError("training images have zero variance")
    model.mean, model.std = mean, std
    x_all = normalize(images, (mean, std))

    net = model.net
    keys = _param_list(net)
    velocity = {k: np.zeros(net.layers[k[0]].params[k[1]].shape) for k in keys}
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _batch_loss_grad(net, x_all[idx], labels[idx])
            losses.append(loss * len(idx))
            for li, name in keys:
                v = velocity[(li, name)]
                v *= cfg.momentum
                v += grads[li][name]
                layer = net.layers[li]
                updated = getattr(layer, name).astype(np.float64) - cfg.learning_rate * v
                setattr(layer, name, updated.astype(np.float32))
        if callback is not None:
            callback(epoch, sum(losses) / n)
    return model


# -- weight files ---------------------------------------------------------
#
# Little-endian layout:
#   b"CPSD" | u32 version | u32 input_side | u32 cam_index | u32 n_layers
#   per layer: u8 kind tag, then
#     conv    u32 in, u32 out, u32 kernel, u32 stride, u32 padding,
#             f32[out*in*k*k] weight, f32[out] bias
#     relu    (nothing)
#     maxpool u32 window, u32 stride
#     gap     (nothing)
#     dense   u32 in, u32 out, f32[out*in] weight, f32[out] bias
#   f32 mean | f32 std


def save_weights(model: ClassifierModel, path):
    buf = io.BytesIO()
    net = model.net
    buf.write(MAGIC)
    buf.write(struct.pack("<4I", FORMAT_VERSION, model.input_side, net.cam_index, len(net.layers)))
    for layer in net.layers:
        buf.write(struct.pack("<B", _KIND_TAGS[layer.kind]))
        if layer.kind == "conv":
            buf.write(struct.pack("<5I", layer.in_ch, layer.out_ch, layer.kernel, layer.stride, layer.padding))
        elif layer.kind == "maxpool":
            buf.write(struct.pack("<2I", layer.window, layer.stride))
        elif layer.kind == "dense":
            buf.write(struct.pack("<2I", layer.n_in, layer.n_out))
        for name in ("weight", "bias"):
            if name in layer.params:
                buf.write(np.ascontiguousarray(layer.params[name], dtype="<f4").tobytes())
    buf.write(struct.pack("<2f", model.mean, model.std))
    _atomic_write(Path(path), buf.getvalue())


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise WeightFileError(f"{self.path}: truncated weight file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, shape):
        count = int(np.prod(shape))
        (raw,) = self.take(f"<{4 * count}s")
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def load_weights(path) -> ClassifierModel:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise WeightFileError(f"{path}: bad magic {magic!r} at byte 0")
    version, side, cam_index, n_layers = r.take("<4I")
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported format version {version} at byte 4")
    layers = []
    for _ in range(n_layers):
        (tag,) = r.take("<B")
        kind = _TAG_KINDS.get(tag)
        if kind == "conv":
            cin, cout, k, stride, pad = r.take("<5I")
            w = r.array((cout, cin, k, k))
            layers.append(Conv(cin, cout, k, stride, pad, weight=w, bias=r.array((cout,))))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool":
            layers.append(MaxPool(*r.take("<2I")))
        elif kind == "gap":
            layers.append(GlobalAvgPool())
        elif kind == "dense":
            nin, nout = r.take("<2I")
            w = r.array((nout, nin))
            layers.append(Dense(nin, nout, weight=w, bias=r.array((nout,))))
        else:
            raise WeightFileError(f"{path}: unknown layer tag {tag} at byte {r.pos - 1}")
    mean, std = r.take("<2f")
    if r.pos != len(data):
        raise WeightFileError(f"{path}: trailing bytes after byte {r.pos}")
    net = Network(layers, (1, side, side), cam_index=cam_index)
    return ClassifierModel(net, float(mean), float(std), side)


class PresenceClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`train` / :func:`predict_batch`.

    ``X`` is an array of square grayscale images shaped (n, side, side).
    """

    def __init__(self, epochs=25, learning_rate=0.02, momentum=0.9, batch_size=16, random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError("X must have shape (n_images, side, side)")
        y = np.asarray(y).astype(int)
        cfg = TrainConfig(self.epochs, self.learning_rate, self.momentum, self.batch_size, self.random_state)
        self.model_ = train(list(zip(X, y)), cfg)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict_batch(self.model_, np.asarray(X, dtype=np.float64))[1]

    def predict_proba(self, X):
        p = diffnet.sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(int)
