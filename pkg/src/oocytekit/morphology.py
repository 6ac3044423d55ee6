"""Mask-domain machinery: components, size filtering, ROIs, boundaries, holes.

Connectivity convention: foreground components are 8-connected, while
boundary and hole tests use 4-adjacency (the complementary pair).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyInput, FrameTooSmall
from .imagery import Label

ROI_SIZE = 416
LOCALIZATION_MIN_AREA = 10_000
POLAR_BODY_MIN_AREA = 500

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class Component:
    """One connected set of pixels inside a frame of shape ``frame_shape``."""

    rows: np.ndarray
    cols: np.ndarray
    frame_shape: tuple[int, int]
    label: int | None = None

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def centroid(self) -> tuple[float, float]:
        """Center of gravity as ``(x, y)``."""
        return float(self.cols.mean()), float(self.rows.mean())

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.frame_shape, dtype=bool)
        mask[self.rows, self.cols] = True
        return mask


def connected_components(mask, label: int | None = None) -> list[Component]:
    """8-connected components of a boolean raster.

    Components come back ordered by their first pixel in raster scan order,
    i.e. by (min row, min column of that row).
    """
    mask = np.asarray(mask, dtype=bool)
    labeled, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    flat = labeled.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_ids = flat[order]
    bounds = np.searchsorted(sorted_ids, np.arange(1, n + 2))
    width = mask.shape[1]
    # ndimage.label numbers components in scan order of their first pixel
    components = []
    for k in range(n):
        idx = order[bounds[k]:bounds[k + 1]]
        rows, cols = np.divmod(idx, width)
        components.append(Component(rows, cols, mask.shape, label))
    return components


def suppress_small(components: list[Component], min_area: int) -> list[Component]:
    """Drop components strictly smaller than ``min_area`` pixels."""
    if min_area < 0:
        raise ValueError("min_area must be non-negative")
    return [c for c in components if c.area >= min_area]


def keep_largest(components: list[Component]) -> Component:
    if not components:
        raise EmptyInput("keep_largest needs at least one component")
    best = components[0]
    for c in components[1:]:
        if c.area > best.area:
            best = c
    return best


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


@dataclass(frozen=True, eq=False)
class Roi:
    """A fixed-size crop of an image and its mask around one oocyte.

    ``center`` is the requested (rounded) center in source coordinates and
    ``origin`` the top-left corner ``(x0, y0)`` of the window after clamping.
    """

    image: np.ndarray
    mask: np.ndarray
    center: tuple[int, int]
    origin: tuple[int, int]
    source_id: str = ""
    roi_id: str = ""


def roi_window(frame_shape, center, size: int = ROI_SIZE) -> tuple[int, int]:
    height, width = frame_shape
    if height < size or width < size:
        raise FrameTooSmall(f"frame {width}x{height} is smaller than the {size}px ROI")
    cx, cy = (round_half_away(c) for c in center)
    half = size // 2
    x0 = min(max(cx - half, 0), width - size)
    y0 = min(max(cy - half, 0), height - size)
    return x0, y0


def extract_roi(image, mask, center, size: int = ROI_SIZE, source_id: str = "",
                roi_id: str = "") -> Roi:
    """Crop a ``size``-square window around ``center``.

    Windows that would leave the frame are shifted back inside; no padding
    is ever introduced.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise ValueError("image and mask sizes differ")
    x0, y0 = roi_window(image.shape, center, size)
    cx, cy = (round_half_away(c) for c in center)
    return Roi(
        image=image[y0:y0 + size, x0:x0 + size].copy(),
        mask=mask[y0:y0 + size, x0:x0 + size].copy(),
        center=(cx, cy),
        origin=(x0, y0),
        source_id=source_id,
        roi_id=roi_id,
    )


def boundary_pixels(component: Component) -> np.ndarray:
    """Member pixels with at least one 4-neighbour outside the component.

    The frame edge counts as outside. Returns an ``(n, 2)`` array of ``(x, y)``.
    """
    if component.area == 0:
        raise EmptyInput("empty component")
    r0, c0 = component.rows.min(), component.cols.min()
    h = component.rows.max() - r0 + 1
    w = component.cols.max() - c0 + 1
    local = np.zeros((h + 2, w + 2), dtype=bool)
    local[component.rows - r0 + 1, component.cols - c0 + 1] = True
    interior = ndimage.binary_erosion(local, structure=_FOUR, border_value=0)
    # pixels on the frame edge have an outside neighbour by definition
    fh, fw = component.frame_shape
    if r0 == 0:
        interior[1, :] = False
    if c0 == 0:
        interior[:, 1] = False
    if r0 + h == fh:
        interior[h, :] = False
    if c0 + w == fw:
        interior[:, w] = False
    rows, cols = np.nonzero(local & ~interior)
    return np.column_stack([cols + c0 - 1, rows + r0 - 1])


def fill_holes(mask) -> np.ndarray:
    """Turn background pixels not 4-connected to the frame border into foreground."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool), structure=_FOUR)


def localize(mask, min_area: int = LOCALIZATION_MIN_AREA) -> list[Component]:
    """Cytoplasm components large enough to be oocytes, in scan order."""
    binary = np.asarray(mask) == Label.CYTOPLASM
    return suppress_small(connected_components(binary, Label.CYTOPLASM), min_area)
