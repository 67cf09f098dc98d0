"""Benchmark runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import baselines, detector
from .diffnet import count_forwards
from .evalkit import centers_to_boxes, map50, match_detections

__all__ = ["RunResult", "run_method", "ABLATION_SUITES", "suite_configs", "localization_rate"]


@dataclass
class RunResult:
    detections: list
    forward_passes: int
    map50: float
    n_detections: int
    extra: dict = field(default_factory=dict)

    @property
    def forwards_per_detection(self):
        return self.forward_passes / max(self.n_detections, 1)


def _gts(samples, radius=None):
    return [centers_to_boxes(s.centers, s.radius_px if radius is None else radius) for s in samples]


def run_method(model, samples, cfg, method="opt", seed=0, dog_cfg=None, log_fn=None):
    """Run one detector over ``samples`` and score it against ground truth.

    The ground-truth boxes always use the true radius, so a corrupted
    ``cfg.size_error`` is penalized through box overlap.
    """
    per_image = []
    with count_forwards() as counter:
        if method == "dog":
            per_image = baselines.dog_detect_dataset([s.image for s in samples], dog_cfg or baselines.DoGConfig(radius_px=cfg.radius_px(samples[0].nm_per_px)))
        else:
            for i, s in enumerate(samples):
                rng = np.random.default_rng([seed, i])
                if method == "opt":
                    dets = detector.detect(model, s.image, cfg, s.nm_per_px, rng)
                elif method == "sliding":
                    dets = baselines.sliding_window_detect(model, s.image, cfg, s.nm_per_px)
                else:
                    raise ValueError(f"unknown method {method!r}")
                per_image.append(dets)
                if log_fn:
                    log_fn(i, dets)
    pairs = [[(d.box, d.score) for d in dets] for dets in per_image]
    score = map50(pairs, _gts(samples))
    n_det = sum(len(d) for d in per_image)
    return RunResult(per_image, counter[0], score, n_det)


def localization_rate(samples, per_image, max_dist_factor=0.5):
    """Fraction of ground-truth centers with a distinct detection within ``factor * r``."""
    hit = total = 0
    for s, dets in zip(samples, per_image):
        r = s.radius_px
        used = set()
        for c in s.centers:
            total += 1
            best, best_j = None, None
            for j, d in enumerate(dets):
                if j in used:
                    continue
                dist = np.hypot(d.cx - c[0], d.cy - c[1])
                if dist <= max_dist_factor * r and (best is None or dist < best):
                    best, best_j = dist, j
            if best_j is not None:
                used.add(best_j)
                hit += 1
    return hit / total if total else 1.0


ABLATION_SUITES = {
    "init": [("random", {"init": "random"}), ("gradcam", {"init": "gradcam"}), ("sliding", {"method": "sliding"})],
    "sigma_min": [(f"{f}r", {"sigma_min_factor": f}) for f in (2.0, 1.0, 0.5, 0.25)],
    "loss": [("logit", {"objective": "logit"}), ("score", {"objective": "score"})],
    "fill": [("zeros", {"fill": "zeros"}), ("mean", {"fill": "mean"})],
    "score_mode": [("mask_other", {"score_mode": "mask_other"}), ("mask_background", {"score_mode": "mask_background"})],
    "pdf": [("on", {"pdf_normalized": True}), ("off", {"pdf_normalized": False})],
    "size_error": [(f"{int(round(e * 100))}%", {"size_error": e}) for e in (0.0, 0.1, 0.2, 0.3)],
}


def suite_configs(suite, base_cfg):
    """``(row label, method, config)`` triples for an ablation suite."""
    if suite not in ABLATION_SUITES:
        raise KeyError(f"unknown suite {suite!r}; valid suites: {', '.join(sorted(ABLATION_SUITES))}")
    rows = []
    for label, overrides in ABLATION_SUITES[suite]:
        overrides = dict(overrides)
        method = overrides.pop("method", "opt")
        rows.append((label, method, base_cfg.with_(**overrides)))
    return rows
