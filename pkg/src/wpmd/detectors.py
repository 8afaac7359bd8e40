"""Classical single-frame small-target detectors: white top-hat and max-median."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image_core import as_image, pad_symmetric


@dataclass(frozen=True)
class DetectorConfig:
    radius: int = 1
    half_length: int = 2
    k_sigma: float = 3.0

    def __post_init__(self):
        if self.radius < 1 or self.half_length < 1:
            raise ValueError("radius and half_length must be >= 1")
        if not self.k_sigma > 0:
            raise ValueError("k_sigma must be positive")


def top_hat(img, radius: int = 1) -> np.ndarray:
    """White top-hat ``img - opening(img)`` with a (2r+1)^2 square, mirror borders."""
    img = as_image(img)
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if 2 * radius > min(img.shape) - 1:
        raise ValueError(f"radius {radius} exceeds the half-extent of a {img.shape} image")
    size = 2 * radius + 1
    opened = ndimage.grey_opening(img, size=(size, size), mode="mirror")
    return np.maximum(img - opened, 0.0)


_DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


def max_median(img, half_length: int = 2) -> np.ndarray:
    """Max of the four directional (2L+1)-sample medians, subtracted and clamped at 0."""
    img = as_image(img)
    L = half_length
    if L < 1:
        raise ValueError("half_length must be >= 1")
    h, w = img.shape
    padded = pad_symmetric(img, L)
    medians = []
    for dy, dx in _DIRECTIONS:
        samples = [padded[L + t * dy:L + t * dy + h, L + t * dx:L + t * dx + w] for t in range(-L, L + 1)]
        medians.append(np.median(np.stack(samples), axis=0))
    filtered = np.max(np.stack(medians), axis=0)
    return np.maximum(img - filtered, 0.0)


def threshold_adaptive(response, k_sigma: float = 3.0) -> np.ndarray:
    """Binary mask ``response > mean + k_sigma * std``."""
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    r = as_image(response)
    return r > r.mean() + k_sigma * r.std()


def detect(img, method: str, config: DetectorConfig = DetectorConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Return (response, mask) for ``method`` in {"tophat", "maxmedian"}."""
    if method == "tophat":
        response = top_hat(img, config.radius)
    elif method == "maxmedian":
        response = max_median(img, config.half_length)
    else:
        raise ValueError(f"unknown detector {method!r}")
    return response, threshold_adaptive(response, config.k_sigma)
