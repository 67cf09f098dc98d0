"""Gaussian position masks and circular fill masks.

Positions are ``(x, y)`` in pixel units with pixel ``(row i, col j)``
centered at ``x = j, y = i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MaskConfig",
    "gaussian_mask",
    "mask_position_gradient",
    "apply_mask",
    "circular_fill",
    "disk",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class MaskConfig:
    """``pdf_normalized`` multiplies the mask by 1/(sigma*sqrt(2*pi)).

    ``fill`` picks the replacement value for removed regions: the dataset
    mean intensity (``fill_value``) or zero.
    """

    pdf_normalized: bool = True
    fill: str = "mean"
    fill_value: float = 0.0

    def __post_init__(self):
        if self.fill not in ("mean", "zeros"):
            raise ValueError(f"fill must be 'mean' or 'zeros', got {self.fill!r}")

    @property
    def value(self):
        return self.fill_value if self.fill == "mean" else 0.0


def _sqdist(p, dims):
    h, w = dims
    dx = np.arange(w, dtype=np.float64) - float(p[0])
    dy = np.arange(h, dtype=np.float64) - float(p[1])
    return dx, dy


def gaussian_mask(p, sigma, dims, pdf_normalized=True):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    dx, dy = _sqdist(p, dims)
    # separable: exp(-(dx^2 + dy^2)/2s^2) = exp(-dx^2/2s^2) * exp(-dy^2/2s^2)
    m = np.outer(np.exp(-(dy**2) / (2 * sigma**2)), np.exp(-(dx**2) / (2 * sigma**2)))
    if pdf_normalized:
        m /= sigma * _SQRT_2PI
    return m


def mask_position_gradient(p, sigma, dims, pdf_normalized=True, mask=None):
    """dM/dp_x and dM/dp_y, i.e. ``M * (x - p) / sigma**2`` per component."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    m = gaussian_mask(p, sigma, dims, pdf_normalized) if mask is None else mask
    dx, dy = _sqdist(p, dims)
    s2 = sigma**2
    return m * (dx / s2)[None, :], m * (dy / s2)[:, None]


def apply_mask(image, mask):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != np.shape(mask):
        raise ValueError(f"mask shape {np.shape(mask)} does not match image {image.shape}")
    return image * mask


def disk(center, radius, dims):
    """Boolean map of pixels whose centers lie within ``radius`` (inclusive)."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    dx, dy = _sqdist(center, dims)
    return dx[None, :] ** 2 + dy[:, None] ** 2 <= radius**2


def circular_fill(image, center, radius, cfg: MaskConfig, mode="remove"):
    """Fill the disk (``remove``) or everything outside it (``keep_only``)."""
    inside = disk(center, radius, np.shape(image))
    if mode == "remove":
        region = inside
    elif mode == "keep_only":
        region = ~inside
    else:
        raise ValueError(f"mode must be 'remove' or 'keep_only', got {mode!r}")
    out = np.array(image, dtype=np.float64, copy=True)
    out[region] = cfg.value
    return out
