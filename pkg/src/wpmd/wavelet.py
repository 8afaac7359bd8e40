"""One-level undecimated 2-D Haar frame.

Kernels are ``low = (1/2, 1/2)`` and ``high = (1/2, -1/2)`` so the detail bands are
half first differences and ``|H|^2 + |G|^2 = 1``. Filtering is correlation with
circular indexing: ``y[i] = k0 * x[i] + k1 * x[i + 1]``. Circular indexing is the only
boundary rule under which a same-size 2-tap frame is tight (``synthesize`` is both the
exact adjoint and the exact inverse of ``analyze``). Callers that need mirror
boundaries extend the image first, see :func:`wpmd.diffusion.mirror_extend`.

Band names follow ``XY``: ``X`` filters along rows (axis 1), ``Y`` along columns
(axis 0). ``LH`` therefore responds to horizontal edges, ``HL`` to vertical ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image_core import as_image

LOW = (0.5, 0.5)
HIGH = (0.5, -0.5)
BANDS = ("LL", "LH", "HL", "HH")
_KERNELS = {"L": LOW, "H": HIGH}


@dataclass(frozen=True)
class WaveletBands:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __getitem__(self, which: str) -> np.ndarray:
        return getattr(self, _check_band(which).lower())

    @property
    def shape(self) -> tuple[int, int]:
        return self.ll.shape


def _check_band(which: str) -> str:
    if which not in BANDS:
        raise ValueError(f"invalid band id {which!r}; expected one of {BANDS}")
    return which


def _check_shape(img: np.ndarray) -> None:
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"unsupported shape {img.shape}: both dimensions must be >= 2")


def _correlate(x: np.ndarray, kernel, axis: int) -> np.ndarray:
    return kernel[0] * x + kernel[1] * np.roll(x, -1, axis=axis)


def _convolve(x: np.ndarray, kernel, axis: int) -> np.ndarray:
    # transpose of _correlate
    return kernel[0] * x + kernel[1] * np.roll(x, 1, axis=axis)


def band_filter(img, which: str) -> np.ndarray:
    img = as_image(img)
    _check_shape(img)
    row_k, col_k = (_KERNELS[c] for c in _check_band(which))
    return _correlate(_correlate(img, row_k, axis=1), col_k, axis=0)


def band_adjoint(plane, which: str) -> np.ndarray:
    plane = as_image(plane)
    _check_shape(plane)
    row_k, col_k = (_KERNELS[c] for c in _check_band(which))
    return _convolve(_convolve(plane, col_k, axis=0), row_k, axis=1)


def analyze(img) -> WaveletBands:
    img = as_image(img)
    _check_shape(img)
    lo = _correlate(img, LOW, axis=1)
    hi = _correlate(img, HIGH, axis=1)
    return WaveletBands(
        ll=_correlate(lo, LOW, axis=0),
        lh=_correlate(lo, HIGH, axis=0),
        hl=_correlate(hi, LOW, axis=0),
        hh=_correlate(hi, HIGH, axis=0),
    )


def synthesize(bands: WaveletBands) -> np.ndarray:
    shape = bands.ll.shape
    for name in BANDS:
        if bands[name].shape != shape:
            raise ValueError(f"mismatched band dimensions: {name} is {bands[name].shape}, LL is {shape}")
    return sum(band_adjoint(bands[name], name) for name in BANDS)
