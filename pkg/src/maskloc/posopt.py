"""Annealed Gaussian-mask position optimization for a single particle.

The position ``p`` is moved by gradient ascent on the classifier output
for the masked image ``I * M(p, sigma_t)``, while ``sigma_t`` decays
exponentially from ``sigma_max`` to ``sigma_min``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffnet
from .classifier import ClassifierModel, normalize
from .gaussmask import gaussian_mask, mask_position_gradient

__all__ = [
    "SigmaSchedule",
    "OptConfig",
    "Trajectory",
    "sigma_at",
    "objective_gradient",
    "optimize_position",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class SigmaSchedule:
    """Mask width schedule in nanometres; ``steps`` is the decay horizon T."""

    sigma_max: float
    sigma_min: float
    steps: int

    def __post_init__(self):
        if not self.sigma_max >= self.sigma_min > 0:
            raise ValueError("need sigma_max >= sigma_min > 0")
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")


def sigma_at(schedule: SigmaSchedule, t):
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [0, {schedule.steps}]")
    return schedule.sigma_max * (schedule.sigma_min / schedule.sigma_max) ** (t / schedule.steps)


@dataclass(frozen=True)
class OptConfig:
    """Position-update settings.

    ``step_size`` is the displacement in pixels of the largest gradient
    component at ``sigma_min``; with ``scale_step`` it grows in proportion
    to the current sigma, otherwise it is constant. ``tolerance`` is the
    per-step displacement (pixels) below which three consecutive steps
    count as converged.
    """

    schedule: SigmaSchedule
    step_size: float = 0.25
    max_iterations: int = 200
    objective: str = "logit"
    tolerance: float = 0.3
    scale_step: bool = True
    pdf_normalized: bool = False
    patience: int = 3

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.objective not in ("logit", "score"):
            raise ValueError("objective must be 'logit' or 'score'")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class Trajectory:
    """Visited states ``(t, x, y, sigma_px, value)`` and classifier forwards used.

    The final entry holds the returned position with ``value`` NaN when
    it was not evaluated.
    """

    steps: list = field(default_factory=list)
    forward_passes: int = 0

    def __len__(self):
        return len(self.steps)

    @property
    def positions(self):
        return np.array([(s[1], s[2]) for s in self.steps])


def _value_and_seed(logit, objective):
    if objective == "logit":
        return logit, 1.0
    s = float(diffnet.sigmoid(logit))
    return s, s * (1.0 - s)


def objective_gradient(model: ClassifierModel, image, p, sigma, pdf_normalized=True, objective="logit"):
    """Classifier output on the masked image and its gradient w.r.t. ``p``.

    ``sigma`` is in pixels. Runs exactly one forward and one backward pass.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = gaussian_mask(p, sigma, image.shape, pdf_normalized)
    z = normalize(image * mask, model.norm_stats)
    logit, trace = diffnet.forward(model.net, z)
    value, seed = _value_and_seed(logit, objective)
    g = diffnet.backward(model.net, trace, seed, need_params=False).input[0, 0]
    # chain: d value/d(I*M) = g / std, then through the mask
    weighted = g * image / model.std
    dmx, dmy = mask_position_gradient(p, sigma, image.shape, pdf_normalized, mask=mask)
    return value, np.array([np.sum(weighted * dmx), np.sum(weighted * dmy)])


def optimize_position(model, image, p0, cfg: OptConfig, nm_per_px=1.0):
    """Refine ``p0`` by normalized gradient ascent; returns ``(p, traj, converged)``."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    p = np.array(p0, dtype=np.float64)
    if not (0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1):
        raise ValueError(f"initial position {tuple(p0)} outside image of size {w}x{h}")
    traj = Trajectory()
    sched = cfg.schedule
    sigma_min_px = sched.sigma_min / nm_per_px
    quiet = 0
    converged = False
    for t in range(cfg.max_iterations):
        sigma = sigma_at(sched, min(t, sched.steps)) / nm_per_px
        value, grad = objective_gradient(model, image, p, sigma, cfg.pdf_normalized, cfg.objective)
        traj.forward_passes += 1
        traj.steps.append((t, float(p[0]), float(p[1]), sigma, float(value)))
        gmax = np.abs(grad).max()
        if gmax > 0:
            step = cfg.step_size * (sigma / sigma_min_px if cfg.scale_step else 1.0)
            new = p + step * grad / gmax
            new[0] = min(max(new[0], 0.0), w - 1)
            new[1] = min(max(new[1], 0.0), h - 1)
        else:
            new = p
        quiet = quiet + 1 if np.hypot(*(new - p)) < cfg.tolerance else 0
        p = new
        if quiet >= cfg.patience:
            converged = True
            break
    t_end = len(traj.steps)
    sigma_end = sigma_at(sched, min(t_end, sched.steps)) / nm_per_px
    traj.steps.append((t_end, float(p[0]), float(p[1]), sigma_end, float("nan")))
    return (float(p[0]), float(p[1])), traj, converged


def write_trajectory_csv(path, traj: Trajectory):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "px", "py", "sigma", "value"])
        for t, x, y, s, v in traj.steps:
            wr.writerow([t, f"{x:.6f}", f"{y:.6f}", f"{s:.6f}", f"{v:.9g}"])
