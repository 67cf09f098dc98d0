"""Iterative multi-particle detection: initialize, optimize, verify, remove.

After the loop every accepted position is rescored, overlapping boxes are
suppressed and each survivor becomes a square box of side ``2 * radius``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cam
from .classifier import ClassifierModel, predict, predict_batch
from .evalkit import iou
from .gaussmask import MaskConfig, circular_fill
from .posopt import OptConfig, SigmaSchedule, optimize_position

__all__ = [
    "Detection",
    "DetectorConfig",
    "VIRUS_SIZE_NM",
    "detect",
    "verify_detection",
    "score_detections",
    "nms",
    "random_init",
    "detections_to_json",
    "detections_from_json",
    "write_detections",
    "read_detections",
]

# Reference particle sizes (nm) of common virus types.
VIRUS_SIZE_NM = {"herpes": 165.0, "adeno": 80.0, "noro": 30.0, "papilloma": 50.0, "rota": 75.0}


@dataclass
class Detection:
    cx: float
    cy: float
    radius: float
    score: float = float("nan")

    @property
    def center(self):
        return (self.cx, self.cy)

    @property
    def box(self):
        r = self.radius
        return (self.cx - r, self.cy - r, 2 * r, 2 * r)

    def to_dict(self):
        x, y, w, h = self.box
        return {"x": x, "y": y, "w": w, "h": h, "score": self.score, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class DetectorConfig:
    """Detection settings. Lengths ending in ``_nm`` are physical units.

    ``sigma_max_nm=None`` uses a third of the image half-diagonal, so every
    pixel lies within three standard deviations of a centered mask.
    ``sigma_min`` and the convergence tolerance are fractions of the radius.
    ``size_error`` scales the radius used by the detector (0.2 = +20%).
    """

    radius_nm: float
    stop_threshold: float = 0.5
    max_detections: int = 12
    nms_iou: float = 0.5
    score_mode: str = "mask_other"
    init: str = "gradcam"
    fill: str = "mean"
    pdf_normalized: bool = False
    objective: str = "logit"
    sigma_min_factor: float = 1.0
    sigma_max_nm: float | None = None
    max_iterations: int = 200
    step_size: float = 0.25
    scale_step: bool = True
    tolerance_factor: float = 0.05
    cam_upsample: str = "bilinear"
    size_error: float = 0.0

    def __post_init__(self):
        if not self.radius_nm > 0:
            raise ValueError("radius_nm must be positive")
        if not 0 < self.stop_threshold < 1:
            raise ValueError("stop_threshold must lie in (0, 1)")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")
        if self.score_mode not in ("mask_other", "mask_background"):
            raise ValueError(f"unknown score_mode {self.score_mode!r}")
        if self.init not in ("gradcam", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.size_error <= -1:
            raise ValueError("size_error must be > -1")
        MaskConfig(self.pdf_normalized, self.fill)

    def with_(self, **kw):
        return replace(self, **kw)

    def radius_px(self, nm_per_px):
        return self.radius_nm * (1.0 + self.size_error) / nm_per_px

    def mask_config(self, model: ClassifierModel):
        return MaskConfig(self.pdf_normalized, self.fill, model.mean)

    def opt_config(self, nm_per_px, dims):
        r_nm = self.radius_nm * (1.0 + self.size_error)
        sigma_max = self.sigma_max_nm
        if sigma_max is None:
            sigma_max = np.hypot(*dims) / 6.0 * nm_per_px
        sigma_min = self.sigma_min_factor * r_nm
        sched = SigmaSchedule(max(sigma_max, sigma_min), sigma_min, max(self.max_iterations, 1))
        return OptConfig(
            sched,
            step_size=self.step_size,
            max_iterations=self.max_iterations,
            objective=self.objective,
            tolerance=self.tolerance_factor * r_nm / nm_per_px,
            scale_step=self.scale_step,
            pdf_normalized=self.pdf_normalized,
        )


def _check_scale(nm_per_px):
    if nm_per_px is None or not nm_per_px > 0:
        raise ValueError("image scale (nm per pixel) must be known and positive")


def random_init(dims, rng):
    """Uniformly random pixel position ``(x, y)``."""
    h, w = dims
    return (float(rng.integers(w)), float(rng.integers(h)))


def verify_detection(model, image, p, cfg: DetectorConfig, nm_per_px):
    """Keep only the disk at ``p`` and classify; accept iff score >= threshold."""
    _check_scale(nm_per_px)
    keep = circular_fill(image, p, cfg.radius_px(nm_per_px), cfg.mask_config(model), "keep_only")
    score, _ = predict(model, keep)
    return score >= cfg.stop_threshold, score


def score_detections(model, image, detections, cfg: DetectorConfig, mode=None):
    """Assign each detection a classifier score on a masked copy of ``image``.

    ``mask_other`` fills every other detection's disk; ``mask_background``
    fills everything outside the detection's own disk.
    """
    mode = mode or cfg.score_mode
    mcfg = cfg.mask_config(model)
    if not detections:
        return []
    image = np.asarray(image, dtype=np.float64)
    batch = []
    for i, d in enumerate(detections):
        if mode == "mask_other":
            img = image
            for j, o in enumerate(detections):
                if j != i:
                    img = circular_fill(img, o.center, o.radius, mcfg, "remove")
            batch.append(img)
        elif mode == "mask_background":
            batch.append(circular_fill(image, d.center, d.radius, mcfg, "keep_only"))
        else:
            raise ValueError(f"unknown score mode {mode!r}")
    scores, _ = predict_batch(model, np.stack(batch))
    return [replace(d, score=float(s)) for d, s in zip(detections, np.atleast_1d(scores))]


def nms(detections, iou_threshold=0.5):
    """Greedy suppression; equal scores keep their original order."""
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept = []
    for i in order:
        if all(iou(detections[i].box, detections[k].box) < iou_threshold for k in kept):
            kept.append(i)
    return [detections[i] for i in kept]


@dataclass
class DetectLog:
    """Side outputs of :func:`detect` for inspection and dumps."""

    heatmaps: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    stop_reason: str = ""
    attempts: int = 0


def detect(model: ClassifierModel, image, cfg: DetectorConfig, nm_per_px=None, rng=None, log: DetectLog | None = None):
    _check_scale(nm_per_px)
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(0) if rng is None else rng
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    log = DetectLog() if log is None else log
    radius = cfg.radius_px(nm_per_px)
    mcfg = cfg.mask_config(model)
    ocfg = cfg.opt_config(nm_per_px, image.shape)
    working = image.copy()
    found = []
    log.stop_reason = "max_detections"
    if predict(model, working)[0] < cfg.stop_threshold:
        log.stop_reason = "residual_score"
        return []
    while len(found) < cfg.max_detections:
        log.attempts += 1
        if cfg.init == "gradcam":
            heat = cam.grad_cam(model, working, cfg.cam_upsample)
            log.heatmaps.append(heat)
            p0 = cam.init_position(heat, rng)
            if p0 is None:
                log.stop_reason = "flat_cam"
                break
        else:
            p0 = random_init(image.shape, rng)
        p, traj, _ = optimize_position(model, working, p0, ocfg, nm_per_px)
        log.trajectories.append(traj)
        accepted, score = verify_detection(model, working, p, cfg, nm_per_px)
        if not accepted:
            log.stop_reason = "rejected"
            break
        found.append(Detection(p[0], p[1], radius, score))
        working = circular_fill(working, p, radius, mcfg, "remove")
        if predict(model, working)[0] < cfg.stop_threshold:
            log.stop_reason = "residual_score"
            break
    scored = score_detections(model, image, found, cfg)
    return nms(scored, cfg.nms_iou)


# -- JSON -------------------------------------------------------------------


def detections_to_json(detections):
    return [d.to_dict() for d in detections]


def detections_from_json(items):
    out = []
    for it in items:
        r = it["w"] / 2.0
        out.append(Detection(float(it["cx"]), float(it["cy"]), r, float(it["score"])))
    return out


def write_detections(path, detections):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(detections_to_json(detections), indent=1))
    tmp.replace(path)


def read_detections(path):
    return detections_from_json(json.loads(Path(path).read_text()))
