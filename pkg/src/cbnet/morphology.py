"""Binary morphology and connected components on 2-D boolean images.

Pixels outside the image count as background, so erosion shrinks objects
that touch the border.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError


def disk_element(r):
    """Offsets ``(dy, dx)`` with ``dy**2 + dx**2 <= r**2``."""
    r = int(r)
    if r < 1:
        raise ConfigError(f"disk radius must be >= 1, got {r}")
    d = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    keep = dy * dy + dx * dx <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1).astype(np.int64)


def square_element(size):
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"square size must be a positive odd number, got {size}")
    h = size // 2
    d = np.arange(-h, h + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1).astype(np.int64)


def erode(mask, element):
    return kernels.binary_erode(mask, element)


def dilate(mask, element):
    return kernels.binary_dilate(mask, element)


def opening(mask, element):
    # dilation by the reflected element; every element used here is symmetric
    return dilate(erode(mask, element), -np.asarray(element))


def closing(mask, element):
    return erode(dilate(mask, element), -np.asarray(element))


def morphology(mask, element, mode):
    if mode == "erode":
        return erode(mask, element)
    if mode == "dilate":
        return dilate(mask, element)
    if mode == "open":
        return opening(mask, element)
    raise ContractError(f"unknown morphology mode {mode!r}")


@dataclass
class InstanceLabeling:
    labels: np.ndarray  # 0 = background, ids 1..count
    count: int

    def masks(self):
        return [self.labels == i for i in range(1, self.count + 1)]

    def areas(self):
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]


def connected_components(mask, connectivity=8):
    """Ids in raster order of each component's first pixel."""
    labels, count = kernels.label_components(np.asarray(mask, dtype=bool), connectivity)
    return InstanceLabeling(labels, count)


def fill_holes(mask):
    """Background 4-components that do not touch the border become foreground."""
    mask = np.asarray(mask, dtype=bool)
    bg = connected_components(~mask, connectivity=4)
    if bg.count == 0:
        return mask.copy()
    lab = bg.labels
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    outside = np.isin(lab, border[border > 0])
    return mask | ((lab > 0) & ~outside)
