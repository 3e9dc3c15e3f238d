"""Hot inner loops, compiled with numba when available.

Set ``CBNET_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
Both backends are always importable as ``kernels.numpy_backend`` and
(if numba imports) ``kernels.numba_backend`` so they can be compared.
"""
import os

import numpy as np

from . import _numpy as numpy_backend

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

_disabled = os.environ.get("CBNET_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

if numba_backend is not None and not _disabled:
    backend = numba_backend
    BACKEND = "numba"
else:
    backend = numpy_backend
    BACKEND = "numpy"


def conv2d_valid(x, w, b, stride=1):
    """Direct valid cross-correlation with a fixed per-element summation order.

    Each output element is ``b[o]`` followed by ``w[o,c,i,j] * x[...]`` terms
    added in (c, i, j) order, independent of the spatial extent. That is what
    makes tiled inference reproduce whole-image inference exactly.
    """
    return backend.conv2d_valid(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        int(stride),
    )


def binary_erode(mask, offsets):
    return backend.binary_erode(np.ascontiguousarray(mask, dtype=bool),
                                np.ascontiguousarray(offsets, dtype=np.int64))


def binary_dilate(mask, offsets):
    return backend.binary_dilate(np.ascontiguousarray(mask, dtype=bool),
                                 np.ascontiguousarray(offsets, dtype=np.int64))


def label_components(mask, connectivity=8):
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = backend.label_components(np.ascontiguousarray(mask, dtype=bool), int(connectivity))
    return labels, int(count)


def nearest_two_sqdist(labels, count):
    return backend.nearest_two_sqdist(np.ascontiguousarray(labels, dtype=np.int64), int(count))
