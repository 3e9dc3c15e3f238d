"""Three-class training labels from conservative instance annotations.

Cell pixels are the annotation eroded by a small disk; background pixels are
everything beyond a larger dilation plus the ridge separating the
influence zones of neighbouring eroded cells; the remaining ring around each
cell is left unlabelled (fuzzy).
"""
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .layers import BACKGROUND, CELL, FUZZY
from .morphology import connected_components, dilate, disk_element, erode


@dataclass
class MorphArtifacts:
    eroded: np.ndarray
    dilated: np.ndarray
    axis: np.ndarray


def separation_rule(a1, a2):
    """True where ``sqrt(a2) - sqrt(a1) <= sqrt(2)``, in exact integer arithmetic.

    ``a1``/``a2`` are squared distances to the nearest and second-nearest
    component. A gap of at most one diagonal step guarantees that every
    8-connected path between two components crosses the marked band.
    """
    a1 = np.asarray(a1, dtype=np.int64)
    a2 = np.asarray(a2, dtype=np.int64)
    t = a2 - a1 - 2
    # t <= 0, or t**2 <= 8*a1 (t stays small enough that this cannot overflow
    # for any realistic image size)
    return (t <= 0) | (t * t <= 8 * a1)


def outer_medial_axis(eroded):
    """Boundary between the influence zones of the 8-connected components.

    Empty when there are fewer than two components.
    """
    eroded = np.asarray(eroded, dtype=bool)
    comps = connected_components(eroded, connectivity=8)
    if comps.count < 2:
        return np.zeros(eroded.shape, dtype=bool)
    a1, a2 = kernels.nearest_two_sqdist(comps.labels, comps.count)
    return separation_rule(a1, a2) & ~eroded


def generate_labels(annotation, r_erode=1, r_dilate=4):
    """Return ``(labels, MorphArtifacts)``; labels are 1 cell, 2 background, 3 fuzzy."""
    A = np.asarray(annotation, dtype=bool)
    E = erode(A, disk_element(r_erode))
    comps = connected_components(A, connectivity=8)
    if comps.count:
        hit = np.zeros(comps.count + 1, dtype=bool)
        hit[comps.labels[E]] = True
        lost = [i for i in range(1, comps.count + 1) if not hit[i]]
        if lost:
            warnings.warn(f"{len(lost)} annotated component(s) vanish under erosion with radius "
                          f"{r_erode}; keeping them as Cell in full", RuntimeWarning, stacklevel=2)
            E = E | np.isin(comps.labels, lost)
    D = dilate(A, disk_element(r_dilate))
    M = outer_medial_axis(E)
    labels = np.full(A.shape, FUZZY, dtype=np.uint8)
    labels[M | ~D] = BACKGROUND
    labels[E] = CELL
    return labels, MorphArtifacts(E, D, M)
