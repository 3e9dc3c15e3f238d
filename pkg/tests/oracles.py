"""Slow, obviously-correct reference implementations used by several tests."""
import math

import numpy as np


def brute_components(mask, connectivity=8):
    """Flood fill; ids in raster order of each component's first pixel."""
    H, W = mask.shape
    labels = np.zeros((H, W), dtype=np.int64)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    n = 0
    for y in range(H):
        for x in range(W):
            if mask[y, x] and not labels[y, x]:
                n += 1
                stack = [(y, x)]
                labels[y, x] = n
                while stack:
                    cy, cx = stack.pop()
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < H and 0 <= nx < W and mask[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = n
                            stack.append((ny, nx))
    return labels, n


def brute_erode(mask, element):
    H, W = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(H):
        for x in range(W):
            out[y, x] = all(0 <= y + dy < H and 0 <= x + dx < W and mask[y + dy, x + dx] for dy, dx in element)
    return out


def brute_dilate(mask, element):
    H, W = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y, x in zip(*np.nonzero(mask)):
        for dy, dx in element:
            if 0 <= y + dy < H and 0 <= x + dx < W:
                out[y + dy, x + dx] = True
    return out


def brute_skiz(E):
    """Pixels outside E whose two nearest components differ in distance by at most sqrt(2).

    Distances run over every pixel of every 8-connected component; the
    comparison ``sqrt(a2) - sqrt(a1) <= sqrt(2)`` is done exactly as
    ``a2 - a1 - 2 <= isqrt(8 * a1)`` on integers.
    """
    labels, n = brute_components(E, 8)
    M = np.zeros(E.shape, dtype=bool)
    if n < 2:
        return M
    H, W = E.shape
    yy, xx = np.mgrid[0:H, 0:W]
    best = np.empty((n, H, W), dtype=np.int64)
    for k in range(1, n + 1):
        d = np.full((H, W), np.iinfo(np.int64).max)
        for py, px in zip(*np.nonzero(labels == k)):
            np.minimum(d, (yy - py) ** 2 + (xx - px) ** 2, out=d)
        best[k - 1] = d
    best.sort(axis=0)
    for y, x in zip(*np.nonzero(~E)):
        a1, a2 = int(best[0, y, x]), int(best[1, y, x])
        M[y, x] = a2 - a1 - 2 <= math.isqrt(8 * a1)
    return M
