"""numba-compiled kernels; see ``_numpy.py`` for the reference semantics."""
import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_valid(x, w, b, stride):
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    out = np.empty((O, Ho, Wo))
    for o in range(O):
        for yy in range(Ho):
            for xx in range(Wo):
                out[o, yy, xx] = b[o]
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    wv = w[o, c, i, j]
                    for yy in range(Ho):
                        row = x[c, yy * stride + i]
                        orow = out[o, yy]
                        for xx in range(Wo):
                            orow[xx] += wv * row[xx * stride + j]
    return out


@njit(cache=True)
def binary_erode(mask, offsets):
    H, W = mask.shape
    out = np.zeros((H, W), dtype=np.bool_)
    for y in range(H):
        for x in range(W):
            keep = True
            for k in range(offsets.shape[0]):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if yy < 0 or yy >= H or xx < 0 or xx >= W or not mask[yy, xx]:
                    keep = False
                    break
            out[y, x] = keep
    return out


@njit(cache=True)
def binary_dilate(mask, offsets):
    H, W = mask.shape
    out = np.zeros((H, W), dtype=np.bool_)
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            for k in range(offsets.shape[0]):
                yy = y + offsets[k, 0]
                xx = x + offsets[k, 1]
                if 0 <= yy < H and 0 <= xx < W:
                    out[yy, xx] = True
    return out


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def label_components(mask, connectivity):
    H, W = mask.shape
    parent = np.arange(H * W)
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            p = y * W + x
            # backward neighbours in raster order
            for dy, dx in ((0, -1), (-1, 0), (-1, -1), (-1, 1)):
                if connectivity == 4 and dy != 0 and dx != 0:
                    continue
                yy = y + dy
                xx = x + dx
                if 0 <= yy < H and 0 <= xx < W and mask[yy, xx]:
                    ra = _find(parent, p)
                    rb = _find(parent, yy * W + xx)
                    if ra < rb:
                        parent[rb] = ra
                    elif rb < ra:
                        parent[ra] = rb
    labels = np.zeros((H, W), dtype=np.int64)
    ids = np.zeros(H * W, dtype=np.int64)
    count = 0
    for y in range(H):
        for x in range(W):
            if not mask[y, x]:
                continue
            r = _find(parent, y * W + x)
            if ids[r] == 0:
                count += 1
                ids[r] = count
            labels[y, x] = ids[r]
    return labels, count


@njit(cache=True)
def nearest_two_sqdist(labels, count):
    H, W = labels.shape
    big = np.iinfo(np.int64).max
    # boundary pixels grouped by component
    n_b = 0
    by = np.empty(H * W, dtype=np.int64)
    bx = np.empty(H * W, dtype=np.int64)
    bc = np.empty(H * W, dtype=np.int64)
    for y in range(H):
        for x in range(W):
            c = labels[y, x]
            if c == 0:
                continue
            edge = False
            if y > 0 and labels[y - 1, x] != c:
                edge = True
            elif y < H - 1 and labels[y + 1, x] != c:
                edge = True
            elif x > 0 and labels[y, x - 1] != c:
                edge = True
            elif x < W - 1 and labels[y, x + 1] != c:
                edge = True
            if edge:
                by[n_b] = y
                bx[n_b] = x
                bc[n_b] = c
                n_b += 1
    order = np.argsort(bc[:n_b], kind="mergesort")
    by = by[:n_b][order]
    bx = bx[:n_b][order]
    bc = bc[:n_b][order]
    start = np.zeros(count + 2, dtype=np.int64)
    for k in range(n_b):
        start[bc[k] + 1] += 1
    for c in range(1, count + 2):
        start[c] += start[c - 1]
    a1 = np.full((H, W), big, dtype=np.int64)
    a2 = np.full((H, W), big, dtype=np.int64)
    for y in range(H):
        for x in range(W):
            m1 = big
            m2 = big
            for c in range(1, count + 1):
                d = big
                for k in range(start[c], start[c + 1]):
                    dy = y - by[k]
                    dx = x - bx[k]
                    v = dy * dy + dx * dx
                    if v < d:
                        d = v
                if d < m1:
                    m2 = m1
                    m1 = d
                elif d < m2:
                    m2 = d
            a1[y, x] = m1
            a2[y, x] = m2
    return a1, a2
