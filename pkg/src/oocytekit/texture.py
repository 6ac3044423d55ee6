"""Cytoplasm texture descriptors.

Ten wavelet-frame energies from a three-level undecimated (a trous) Haar
transform, followed by the mean, variance and entropy of the intensities.

Subband naming: the first letter is the filter applied along x (columns),
the second the filter along y (rows). ``HH1`` therefore responds to a pixel
checkerboard.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, EmptyMask, ImageTooSmall, MissingCytoplasm
from .imagery import Label
from .morphology import Roi, connected_components, keep_largest

LEVELS = 3
SUBBANDS = ("LL3", "LH1", "HL1", "HH1", "LH2", "HL2", "HH2", "LH3", "HL3", "HH3")
TEXTURE_NAMES = tuple(f"E_{b}" for b in SUBBANDS) + ("mean", "variance", "entropy")

_S = 1.0 / math.sqrt(2.0)
LOWPASS = (_S, _S)
HIGHPASS = (_S, -_S)


def _filter_axis(x: np.ndarray, taps, step: int, axis: int) -> np.ndarray:
    """``y[n] = taps[0] * x[n] + taps[1] * x[n + step]`` with symmetric extension."""
    n = x.shape[axis]
    pad = [(0, 0), (0, 0)]
    pad[axis] = (0, step)
    ext = np.pad(x, pad, mode="symmetric")
    lead = np.take(ext, np.arange(n), axis=axis)
    lag = np.take(ext, np.arange(step, n + step), axis=axis)
    return taps[0] * lead + taps[1] * lag


def uwt_haar3(image) -> dict[str, np.ndarray]:
    """Undecimated three-level Haar decomposition.

    Level ``l`` uses the Haar pair dilated by ``2**(l-1) - 1`` inserted zeros
    and is applied to the low-pass output of level ``l - 1``. Every subband has
    the size of the input. Returns a dict keyed by :data:`SUBBANDS`.
    """
    x = np.asarray(image, dtype=float)
    if x.ndim != 2 or min(x.shape) < 2 ** LEVELS:
        raise ImageTooSmall(f"need at least {2 ** LEVELS}x{2 ** LEVELS} pixels, got {x.shape}")
    out = {}
    low = x
    for level in range(1, LEVELS + 1):
        step = 2 ** (level - 1)
        lo_x = _filter_axis(low, LOWPASS, step, axis=1)
        hi_x = _filter_axis(low, HIGHPASS, step, axis=1)
        out[f"LH{level}"] = _filter_axis(lo_x, HIGHPASS, step, axis=0)
        out[f"HL{level}"] = _filter_axis(hi_x, LOWPASS, step, axis=0)
        out[f"HH{level}"] = _filter_axis(hi_x, HIGHPASS, step, axis=0)
        low = _filter_axis(lo_x, LOWPASS, step, axis=0)
    out["LL3"] = low
    return {name: out[name] for name in SUBBANDS}


def subband_energies(rasters: dict[str, np.ndarray], mask) -> np.ndarray:
    """Mean squared coefficient of each subband over the masked pixels."""
    mask = np.asarray(mask, dtype=bool)
    count = np.count_nonzero(mask)
    if count == 0:
        raise EmptyMask("energy mask is empty")
    return np.array([np.sum(rasters[b][mask] ** 2) / count for b in SUBBANDS])


def intensity_stats(image, mask) -> tuple[float, float, float]:
    """Mean, population variance and Shannon entropy (bits) of masked pixels."""
    mask = np.asarray(mask, dtype=bool)
    values = np.asarray(image)[mask]
    if values.size == 0:
        raise EmptyMask("intensity mask is empty")
    values = values.astype(float)
    mean = values.mean()
    variance = ((values - mean) ** 2).mean()
    hist = np.bincount(np.clip(values, 0, 255).astype(np.int64), minlength=256)
    p = hist[hist > 0] / values.size
    # + 0.0 turns -0.0 into 0.0 for a single-valued histogram
    entropy = float(-(p * np.log2(p)).sum()) + 0.0
    return float(mean), float(variance), entropy


@dataclass(frozen=True)
class TextureFeatures:
    energies: tuple[float, ...]
    mean: float
    variance: float
    entropy: float

    def as_tuple(self) -> tuple:
        return tuple(self.energies) + (self.mean, self.variance, self.entropy)


def filter_interior(region) -> np.ndarray:
    """Pixels of ``region`` whose whole three-level filter support lies in it.

    The cascade reads ``x[n .. n + 7]`` along each axis, so these are the
    pixels whose 8x8 forward window is inside the region (the frame edge
    counts as outside).
    """
    reach = 2 ** LEVELS
    return ndimage.binary_erosion(np.asarray(region, dtype=bool), structure=np.ones((reach, reach), bool),
                                  origin=-(reach // 2), border_value=0)


def compute_texture(roi: Roi) -> TextureFeatures:
    """Texture descriptors of the largest cytoplasm component.

    Subband energies are averaged over :func:`filter_interior` of the
    cytoplasm so that coefficients mixing in zona or background pixels do not
    count as texture; a region too thin to have an interior falls back to
    the whole component. Intensity statistics use the whole component.
    """
    try:
        cyto = keep_largest(connected_components(roi.mask == Label.CYTOPLASM))
    except EmptyInput:
        raise MissingCytoplasm(f"ROI {roi.roi_id or '?'} has no cytoplasm") from None
    region = cyto.to_mask()
    inner = filter_interior(region)
    energies = subband_energies(uwt_haar3(roi.image), inner if inner.any() else region)
    return TextureFeatures(tuple(float(e) for e in energies), *intensity_stats(roi.image, region))
