"""Whole-image prediction by tiling feasible patches.

Stride-2 layers make the network equivariant only to shifts by 16 pixels,
so every tile starts on a multiple of 16 in image coordinates and the tile
stride is the output window rounded down to a multiple of 16. Under that
alignment each output pixel equals what a whole-image forward pass would
produce; no blending is needed.

The padded transition convolution runs once over the whole image, and the
tiles are cut from its output, so interior tile borders never see padding.
Feature positions beyond the image are zeros.
"""
import logging

import numpy as np

from .errors import ShapeError
from .evaluate import postprocess
from .model import MARGIN, forward, is_feasible, stem

log = logging.getLogger(__name__)

GRID = 16
HALF = MARGIN // 2


def _axis_plan(n, tile):
    window = tile - MARGIN
    stride = (window // GRID) * GRID
    if stride < GRID:
        raise ShapeError(f"tile {tile} leaves an output window of {window}; need a tile of at least 204")
    first = -GRID * (-(-HALF // GRID))      # largest multiple of 16 that is <= -HALF
    starts = []
    s = first
    while s + HALF < n:
        starts.append(s)
        s += stride
    return starts, stride


def tile_plan(shape, tile):
    """Tile origins (image coordinates, possibly negative) and the stride per axis."""
    if not is_feasible(tile):
        raise ShapeError(f"tile size {tile} is infeasible; need N = 12 (mod 16) and N >= 188")
    ys, sy = _axis_plan(shape[0], tile)
    xs, sx = _axis_plan(shape[1], tile)
    return ys, xs, (sy, sx)


def predict_logp(net, image, tile=444):
    """Log-probabilities for every pixel of a [C, H, W] image (eval mode)."""
    image = np.asarray(image, dtype=np.float64)
    C, H, W = image.shape
    ys, xs, (sy, sx) = tile_plan((H, W), tile)
    top, left = -ys[0], -xs[0]
    bottom = max(0, ys[-1] + tile - H)
    right = max(0, xs[-1] + tile - W)
    feats = stem(net, image).data
    padded = np.pad(feats, ((0, 0), (top, bottom), (left, right)))
    if bottom or right or top or left:
        log.info("zero-padding image %dx%d by (%d, %d, %d, %d) for tiling", H, W, top, bottom, left, right)
    out = np.empty((net.config.num_classes, len(ys) * sy, len(xs) * sx))
    for ti, y0 in enumerate(ys):
        for tj, x0 in enumerate(xs):
            patch = padded[:, y0 + top:y0 + top + tile, x0 + left:x0 + left + tile]
            logp = forward(net, np.ascontiguousarray(patch), mode="eval", features=True).data
            out[:, ti * sy:(ti + 1) * sy, tj * sx:(tj + 1) * sx] = logp[:, :sy, :sx]
    # row r of ``out`` is image row ys[0] + HALF + r
    oy, ox = ys[0] + HALF, xs[0] + HALF
    return out[:, -oy:-oy + H, -ox:-ox + W]


def predict_probability(net, image, tile=444):
    return np.exp(predict_logp(net, image, tile)[1])


def predict_mask(net, image, tile=444, threshold=0.75):
    return postprocess(predict_probability(net, image, tile), threshold=threshold)
