"""GradCAM heatmaps and the top-1% center-of-mass initial position."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet
from .classifier import ClassifierModel, normalize

__all__ = ["Heatmap", "grad_cam", "init_position", "upsample", "heatmap_image"]


@dataclass
class Heatmap:
    raw: np.ndarray
    upsampled: np.ndarray


def _interp_matrix(n_out, n_in, mode):
    """Row-stochastic (n_out, n_in) matrix for half-pixel-centered resampling."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    mat = np.zeros((n_out, n_in))
    if mode == "nearest":
        idx = np.minimum(np.floor((np.arange(n_out)) * scale).astype(int), n_in - 1)
        mat[np.arange(n_out), idx] = 1.0
        return mat
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    np.add.at(mat, (np.arange(n_out), lo), 1 - frac)
    np.add.at(mat, (np.arange(n_out), hi), frac)
    return mat


def upsample(grid, shape, mode="bilinear"):
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown upsampling mode {mode!r}")
    rows = _interp_matrix(shape[0], grid.shape[0], mode)
    cols = _interp_matrix(shape[1], grid.shape[1], mode)
    return rows @ grid @ cols.T


def grad_cam(model: ClassifierModel, image, mode="bilinear"):
    image = np.asarray(image, dtype=np.float64)
    logit, trace = diffnet.forward(model.net, normalize(image, model.norm_stats))
    grads = diffnet.backward(model.net, trace, 1.0, need_params=False)
    acts = trace.cam_activation[0]
    dacts = grads.cam[0]
    weights = dacts.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, acts, axes=1), 0.0)
    up = np.maximum(upsample(raw, image.shape, mode), 0.0)
    return Heatmap(raw, up)


def init_position(heat, rng=None, top_fraction=0.01):
    """Center of mass of the top ``top_fraction`` of the heatmap.

    Returns ``None`` when the map is flat. When the center of mass does
    not fall on a pixel of the top set, a uniformly random pixel of that
    set is returned instead.
    """
    h = heat.upsampled if isinstance(heat, Heatmap) else np.asarray(heat, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("heatmap contains non-finite values")
    if h.min() == h.max():
        return None
    flat = np.sort(h, axis=None)
    rank = int(np.ceil((1.0 - top_fraction) * flat.size))
    thr = flat[max(rank - 1, 0)]
    top = h >= thr
    ys, xs = np.nonzero(top)
    w = h[top]
    if w.sum() > 0:
        cx, cy = float((w * xs).sum() / w.sum()), float((w * ys).sum() / w.sum())
    else:
        cx, cy = float(xs.mean()), float(ys.mean())
    ix, iy = int(round(cx)), int(round(cy))
    if 0 <= iy < h.shape[0] and 0 <= ix < h.shape[1] and top[iy, ix]:
        return (cx, cy)
    rng = np.random.default_rng() if rng is None else rng
    k = int(rng.integers(len(xs)))
    return (float(xs[k]), float(ys[k]))


def heatmap_image(heat):
    h = heat.upsampled if isinstance(heat, Heatmap) else np.asarray(heat)
    lo, hi = h.min(), h.max()
    if hi == lo:
        return np.zeros(h.shape)
    return (h - lo) / (hi - lo)
