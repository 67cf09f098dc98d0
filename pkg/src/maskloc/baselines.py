"""Comparison detectors: dense sliding window and difference-of-Gaussians."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

from .classifier import predict_batch
from .detector import Detection, DetectorConfig, _check_scale, nms, random_init, score_detections
from .gaussmask import circular_fill

__all__ = [
    "grid_positions",
    "sliding_window_response",
    "sliding_window_detect",
    "random_init",
    "DoGConfig",
    "dog_keypoints",
    "dog_detect",
    "dog_detect_dataset",
]


def grid_positions(dims, stride):
    h, w = dims
    xs = np.arange(math.ceil(w / stride)) * stride
    ys = np.arange(math.ceil(h / stride)) * stride
    return xs, ys


def sliding_window_response(model, image, cfg: DetectorConfig, nm_per_px, stride_factor=0.125, chunk=256):
    """Keep-only classifier logit at every grid position; returns ``(xs, ys, R)``.

    Logits rather than scores, so that saturated scores do not tie.
    """
    _check_scale(nm_per_px)
    image = np.asarray(image, dtype=np.float64)
    radius = cfg.radius_px(nm_per_px)
    mcfg = cfg.mask_config(model)
    xs, ys = grid_positions(image.shape, stride_factor * radius)
    pts = [(x, y) for y in ys for x in xs]
    scores = []
    for start in range(0, len(pts), chunk):
        batch = np.stack([circular_fill(image, p, radius, mcfg, "keep_only") for p in pts[start : start + chunk]])
        scores.append(np.atleast_1d(predict_batch(model, batch)[1]))
    return xs, ys, np.concatenate(scores).reshape(len(ys), len(xs))


def sliding_window_detect(model, image, cfg: DetectorConfig, nm_per_px, stride_factor=0.125):
    """Local maxima of the dense keep-only response become candidates.

    Candidates share the detector's scoring and suppression; they are
    suppressed once on their raw response first, since neighbouring grid
    maxima on one particle would otherwise mask each other out when
    rescored.
    """
    xs, ys, resp = sliding_window_response(model, image, cfg, nm_per_px, stride_factor)
    t = cfg.stop_threshold
    peaks = (resp == maximum_filter(resp, size=3, mode="nearest")) & (resp >= math.log(t / (1 - t)))
    radius = cfg.radius_px(nm_per_px)
    iy, ix = np.nonzero(peaks)
    cands = [Detection(float(xs[j]), float(ys[i]), radius, float(resp[i, j])) for i, j in zip(iy, ix)]
    cands = nms(cands, cfg.nms_iou)[: max(cfg.max_detections * 4, 1)]
    scored = score_detections(model, image, cands, cfg)
    return nms(scored, cfg.nms_iou)


@dataclass(frozen=True)
class DoGConfig:
    radius_px: float
    contrast_threshold: float = 0.02
    size_range: tuple[float, float] = (0.8, 1.2)
    respond_score: bool = True
    octaves: int = 3
    intervals: int = 3
    sigma0: float = 1.6
    input_blur: float = 0.5
    edge_ratio: float = 10.0
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.contrast_threshold <= 0 or self.radius_px <= 0:
            raise ValueError("contrast threshold and radius must be positive")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ValueError("size_range must satisfy 0 < low <= high")

    def with_(self, **kw):
        return replace(self, **kw)


def _edge_like(d, y, x, ratio):
    dxx = d[y, x + 1] + d[y, x - 1] - 2 * d[y, x]
    dyy = d[y + 1, x] + d[y - 1, x] - 2 * d[y, x]
    dxy = (d[y + 1, x + 1] - d[y + 1, x - 1] - d[y - 1, x + 1] + d[y - 1, x - 1]) / 4
    tr, det = dxx + dyy, dxx * dyy - dxy * dxy
    return det <= 0 or tr * tr / det >= (ratio + 1) ** 2 / ratio


def dog_keypoints(image, cfg: DoGConfig):
    """Scale-space extrema as ``(x, y, sigma, response)`` in input pixels.

    The Gaussian stack covers ``octaves * intervals`` DoG levels at full
    resolution. Skipping the per-octave decimation keeps extrema on the
    pixel grid and avoids sampling mismatches between octaves.
    """
    img = np.asarray(image, dtype=np.float64)
    s = cfg.intervals
    k = 2.0 ** (1.0 / s)
    n_levels = cfg.octaves * s + 3
    gauss = [gaussian_filter(img, math.sqrt(max(cfg.sigma0**2 - cfg.input_blur**2, 0.0)), mode="nearest")]
    for i in range(1, n_levels):
        prev_sigma = cfg.sigma0 * k ** (i - 1)
        inc = math.sqrt((prev_sigma * k) ** 2 - prev_sigma**2)
        gauss.append(gaussian_filter(gauss[-1], inc, mode="nearest"))
    dog = np.stack([b - a for a, b in zip(gauss[:-1], gauss[1:])])
    mx = maximum_filter(dog, size=3, mode="nearest")
    mn = minimum_filter(dog, size=3, mode="nearest")
    ext = ((dog == mx) | (dog == mn)) & (np.abs(dog) >= cfg.contrast_threshold)
    ext[[0, -1]] = False
    ext[:, [0, -1]] = False
    ext[:, :, [0, -1]] = False
    out = []
    for lvl, y, x in zip(*np.nonzero(ext)):
        if _edge_like(dog[lvl], y, x, cfg.edge_ratio):
            continue
        # the difference of levels lvl and lvl+1 peaks at their geometric mean
        sigma = cfg.sigma0 * k ** (lvl + 0.5)
        out.append((float(x), float(y), sigma, float(dog[lvl, y, x])))
    return out


def dog_detect(image, cfg: DoGConfig):
    """Keypoints whose diameter falls in the size range, as fixed-size detections.

    With ``respond_score`` the score is the raw |DoG| response; use
    :func:`dog_detect_dataset` to normalize it over a dataset. Otherwise
    every detection scores 1.
    """
    lo, hi = cfg.size_range
    d_target = 2 * cfg.radius_px
    dets = []
    for x, y, sigma, resp in dog_keypoints(image, cfg):
        diameter = 2 * math.sqrt(2) * sigma
        if lo * d_target <= diameter <= hi * d_target:
            dets.append(Detection(x, y, cfg.radius_px, abs(resp) if cfg.respond_score else 1.0))
    return nms(dets, cfg.nms_iou)


def dog_detect_dataset(images, cfg: DoGConfig):
    """Run :func:`dog_detect` per image; responses are divided by the dataset maximum."""
    per_image = [dog_detect(img, cfg) for img in images]
    if cfg.respond_score:
        top = max((d.score for dets in per_image for d in dets), default=0.0)
        if top > 0:
            per_image = [[replace(d, score=d.score / top) for d in dets] for dets in per_image]
    return per_image
