"""Small differentiable convolutional network.

Layers keep their parameters as float32 arrays; evaluation upcasts to
float64 so reductions are stable and input gradients can be checked
against finite differences. Backward is per-layer over the activations
retained by the forward pass, there is no general tape.

Tensors are plain numpy arrays laid out as (N, C, H, W) for feature maps
and (N, F) after global pooling.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Conv",
    "ReLU",
    "MaxPool",
    "GlobalAvgPool",
    "Dense",
    "Network",
    "ForwardTrace",
    "Gradients",
    "forward",
    "forward_batch",
    "backward",
    "sigmoid",
    "sigmoid_bce",
    "count_forwards",
]

_active_counter: contextvars.ContextVar[list[int] | None] = contextvars.ContextVar(
    "maskloc_forward_counter", default=None
)


@contextmanager
def count_forwards():
    """Count every image pushed through :func:`forward_batch` in this context.

    Yields a one-element list whose entry is updated in place.
    """
    box = [0]
    token = _active_counter.set(box)
    try:
        yield box
    finally:
        _active_counter.reset(token)


class Conv:
    kind = "conv"

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=None, weight=None, bias=None):
        if stride != 1:
            raise ValueError("only stride-1 convolutions are supported")
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.kernel = int(kernel)
        self.stride = 1
        self.padding = self.kernel // 2 if padding is None else int(padding)
        shape = (self.out_ch, self.in_ch, self.kernel, self.kernel)
        self.weight = np.zeros(shape, np.float32) if weight is None else np.asarray(weight, np.float32)
        self.bias = np.zeros(self.out_ch, np.float32) if bias is None else np.asarray(bias, np.float32)
        if self.weight.shape != shape or self.bias.shape != (self.out_ch,):
            raise ValueError("conv parameter extents do not match layer spec")

    @property
    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        k, p = self.kernel, self.padding
        return (self.out_ch, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def _padded(self, x):
        p = self.padding
        if not p:
            return x
        n, c, h, w = x.shape
        xp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        xp[:, :, p : p + h, p : p + w] = x
        return xp

    def _cols(self, x):
        """(N, C*k*k, Ho*Wo) patch matrix, channel-major like the weight layout."""
        k = self.kernel
        xp = self._padded(x)
        n, c = x.shape[:2]
        ho, wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
        cols = np.empty((n, c, k, k, ho, wo))
        for di in range(k):
            for dj in range(k):
                cols[:, :, di, dj] = xp[:, :, di : di + ho, dj : dj + wo]
        return cols.reshape(n, c * k * k, ho * wo), (ho, wo)

    def forward(self, x):
        cols, (ho, wo) = self._cols(x)
        wmat = self.weight.reshape(self.out_ch, -1).astype(np.float64)
        out = np.matmul(wmat, cols)
        out += self.bias.astype(np.float64)[:, None]
        return out.reshape(x.shape[0], self.out_ch, ho, wo)

    def backward(self, x, y, gy, need_params=True):
        n, _, h, w = x.shape
        k, p = self.kernel, self.padding
        ho, wo = gy.shape[2], gy.shape[3]
        gflat = gy.reshape(n, self.out_ch, ho * wo)
        grads = None
        if need_params:
            cols, _ = self._cols(x)
            gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0)
            grads = {"weight": gw.reshape(self.weight.shape), "bias": gflat.sum(axis=(0, 2))}
        # input gradient is a full correlation of gy with the flipped kernel
        q = k - 1 - p
        gyp = np.zeros((n, self.out_ch, ho + 2 * q, wo + 2 * q))
        gyp[:, :, q : q + ho, q : q + wo] = gy
        gcols = np.empty((n, self.out_ch, k, k, h, w))
        for di in range(k):
            for dj in range(k):
                gcols[:, :, di, dj] = gyp[:, :, di : di + h, dj : dj + w]
        wflip = self.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(self.in_ch, -1).astype(np.float64)
        gx = np.matmul(wflip, gcols.reshape(n, self.out_ch * k * k, h * w)).reshape(n, self.in_ch, h, w)
        return gx, grads


class ReLU:
    kind = "relu"
    params: dict = {}

    def out_shape(self, shape):
        return shape

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, gy, need_params=True):
        return gy * (x > 0), None


class MaxPool:
    kind = "maxpool"
    params: dict = {}

    def __init__(self, window=2, stride=2):
        if window != stride:
            raise ValueError("maxpool requires window == stride")
        self.window = int(window)
        self.stride = int(stride)

    def out_shape(self, shape):
        c, h, w = shape
        return (c, h // self.window, w // self.window)

    def _views(self, x):
        s = self.window
        ho, wo = x.shape[2] // s, x.shape[3] // s
        # row-major order inside each window
        return [x[:, :, di : ho * s : s, dj : wo * s : s] for di in range(s) for dj in range(s)]

    def forward(self, x):
        views = self._views(x)
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        return out

    def backward(self, x, y, gy, need_params=True):
        s = self.window
        gx = np.zeros(x.shape)
        taken = np.zeros(y.shape, dtype=bool)
        ho, wo = y.shape[2], y.shape[3]
        for (di, dj), v in zip([(a, b) for a in range(s) for b in range(s)], self._views(x)):
            # route to the first maximum only
            hit = (v == y) & ~taken
            taken |= hit
            gx[:, :, di : ho * s : s, dj : wo * s : s] = gy * hit
        return gx, None


class GlobalAvgPool:
    kind = "gap"
    params: dict = {}

    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, x):
        return x.mean(axis=(2, 3))

    def backward(self, x, y, gy, need_params=True):
        n, c, h, w = x.shape
        return np.broadcast_to(gy[:, :, None, None] / (h * w), x.shape).copy(), None


class Dense:
    kind = "dense"

    def __init__(self, n_in, n_out, weight=None, bias=None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        shape = (self.n_out, self.n_in)
        self.weight = np.zeros(shape, np.float32) if weight is None else np.asarray(weight, np.float32)
        self.bias = np.zeros(self.n_out, np.float32) if bias is None else np.asarray(bias, np.float32)
        if self.weight.shape != shape or self.bias.shape != (self.n_out,):
            raise ValueError("dense parameter extents do not match layer spec")

    @property
    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError(f"dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def forward(self, x):
        return x @ self.weight.T.astype(np.float64) + self.bias.astype(np.float64)

    def backward(self, x, y, gy, need_params=True):
        grads = None
        if need_params:
            grads = {"weight": gy.T @ x, "bias": gy.sum(axis=0)}
        return gy @ self.weight.astype(np.float64), grads


@dataclass
class Network:
    """Ordered layer stack mapping a (C, H, W) input to one logit."""

    layers: list
    input_shape: tuple[int, int, int]
    cam_index: int = field(default=-1)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
            if len(shape) == 3 and min(shape[1:]) < 1:
                raise ValueError("layer stack collapses the spatial extent to zero")
        if shape != (1,):
            raise ValueError(f"network must end in a single logit, ends in {shape}")
        if not any(layer.kind == "conv" for layer in self.layers):
            raise ValueError("network needs at least one conv layer")
        if self.cam_index < 0:
            self.cam_index = _default_cam_index(self.layers)
        if not 0 <= self.cam_index < len(self.layers):
            raise ValueError("cam_index out of range")

    def shapes(self):
        """Activation shape after every layer (without batch axis)."""
        out, shape = [], self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
            out.append(shape)
        return out

    def copy(self):
        import copy

        return copy.deepcopy(self)


def _default_cam_index(layers):
    # output of the last convolutional block, i.e. the last spatial map
    # produced after the final conv layer and before global pooling
    last_conv = max(i for i, layer in enumerate(layers) if layer.kind == "conv")
    idx = last_conv
    for i in range(last_conv + 1, len(layers)):
        if layers[i].kind in ("relu", "maxpool"):
            idx = i
        else:
            break
    return idx


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    activations: list
    cam_index: int
    shape_key: tuple = ()

    @property
    def cam_activation(self):
        return self.activations[self.cam_index]


@dataclass
class Gradients:
    params: list
    input: np.ndarray
    cam: np.ndarray


def _shape_key(net):
    return (net.input_shape, tuple(net.shapes()))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    c, h, w = net.input_shape
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (c, h, w):
        raise ValueError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x


def forward_batch(net: Network, x):
    """Logits of shape (N,) and the retained trace for a batch of inputs."""
    x = _as_batch(net, x)
    box = _active_counter.get()
    if box is not None:
        box[0] += x.shape[0]
    acts, h = [], x
    for layer in net.layers:
        h = layer.forward(h)
        acts.append(h)
    logits = h[:, 0]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logit")
    return logits, ForwardTrace(x, acts, net.cam_index, _shape_key(net))


def forward(net: Network, image):
    """Single-image forward pass; returns ``(logit, trace)``."""
    x = _as_batch(net, image)
    if x.shape[0] != 1:
        raise ValueError("forward expects a single image; use forward_batch")
    logits, trace = forward_batch(net, x)
    return float(logits[0]), trace


def backward(net: Network, trace: ForwardTrace, seed=1.0, need_params=True):
    """Reverse pass from ``seed * d(logit)``.

    ``seed`` is a scalar or one value per batch item. Returns parameter
    gradients (summed over the batch), the gradient with respect to the
    input, and the gradient with respect to the CAM-layer activation.
    """
    if trace.shape_key != _shape_key(net) or len(trace.activations) != len(net.layers):
        raise ValueError("trace does not belong to this network")
    n = trace.inputs.shape[0]
    seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), (n,))
    g = seed[:, None].copy()
    param_grads = [None] * len(net.layers)
    cam_grad = None
    for i in range(len(net.layers) - 1, -1, -1):
        if i == trace.cam_index:
            cam_grad = g
        x = trace.activations[i - 1] if i > 0 else trace.inputs
        g, pg = net.layers[i].backward(x, trace.activations[i], g, need_params)
        param_grads[i] = pg
    return Gradients(param_grads, g, cam_grad)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def sigmoid_bce(logit, label):
    """Binary cross-entropy on a logit; returns ``(loss, dloss/dlogit)``."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    z = float(logit)
    # log(1 + exp(-|z|)) formulation avoids overflow
    loss = max(z, 0.0) - z * label + np.log1p(np.exp(-abs(z)))
    return float(loss), float(sigmoid(z) - label)
