"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_numba.py`` with the same
signature. ``conv2d_valid`` accumulates in the same order as its twin, so the
two paths agree bit for bit.
"""
import numpy as np


def conv2d_valid(x, w, b, stride):
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    out = np.empty((O, Ho, Wo))
    out[:] = b[:, None, None]
    hspan = stride * (Ho - 1) + 1
    wspan = stride * (Wo - 1) + 1
    for o in range(O):
        acc = out[o]
        for c in range(C):
            xc = x[c]
            for i in range(kh):
                for j in range(kw):
                    # separate multiply then add: matches the unfused numba loop
                    acc += w[o, c, i, j] * xc[i:i + hspan:stride, j:j + wspan:stride]
    return out


def _shifted(mask, dy, dx, fill):
    """Return ``mask`` sampled at ``p + (dy, dx)``, ``fill`` outside the image."""
    H, W = mask.shape
    out = np.full((H, W), fill, dtype=bool)
    ys, ye = max(0, -dy), min(H, H - dy)
    xs, xe = max(0, -dx), min(W, W - dx)
    if ys < ye and xs < xe:
        out[ys:ye, xs:xe] = mask[ys + dy:ye + dy, xs + dx:xe + dx]
    return out


def binary_erode(mask, offsets):
    out = np.ones(mask.shape, dtype=bool)
    for dy, dx in offsets:
        out &= _shifted(mask, int(dy), int(dx), False)
    return out


def binary_dilate(mask, offsets):
    out = np.zeros(mask.shape, dtype=bool)
    for dy, dx in offsets:
        out |= _shifted(mask, -int(dy), -int(dx), False)
    return out


def _neighbour_pairs(H, W, connectivity):
    idx = np.arange(H * W).reshape(H, W)
    steps = [(0, 1), (1, 0)]
    if connectivity == 8:
        steps += [(1, 1), (1, -1)]
    pairs = []
    for dy, dx in steps:
        x0, x1 = max(0, -dx), W - max(0, dx)
        a = idx[0:H - dy, x0:x1]
        b = idx[dy:H, x0 + dx:x1 + dx]
        pairs.append((a.ravel(), b.ravel()))
    return pairs


def label_components(mask, connectivity):
    """Raster-ordered component ids via parallel hooking + pointer jumping."""
    H, W = mask.shape
    flat = mask.ravel()
    parent = np.arange(H * W)
    edges = []
    for a, b in _neighbour_pairs(H, W, connectivity):
        keep = flat[a] & flat[b]
        if keep.any():
            edges.append((a[keep], b[keep]))
    if edges:
        ea = np.concatenate([e[0] for e in edges])
        eb = np.concatenate([e[1] for e in edges])
        while True:
            ra, rb = parent[ea], parent[eb]
            lo = np.minimum(ra, rb)
            hi = np.maximum(ra, rb)
            differ = lo != hi
            if not differ.any():
                break
            # hook the larger root onto the smaller one
            np.minimum.at(parent, hi[differ], lo[differ])
            while True:
                nxt = parent[parent]
                if np.array_equal(nxt, parent):
                    break
                parent = nxt
    labels = np.zeros(H * W, dtype=np.int64)
    roots = parent[flat]
    uniq, inverse = np.unique(roots, return_inverse=True)
    # roots are the minimum raster index of each component, so sorted order
    # is raster order of first pixels
    labels[flat] = inverse + 1
    return labels.reshape(H, W), len(uniq)


def _boundary(comp):
    inner = comp.copy()
    inner[1:, :] &= comp[:-1, :]
    inner[:-1, :] &= comp[1:, :]
    inner[:, 1:] &= comp[:, :-1]
    inner[:, :-1] &= comp[:, 1:]
    return comp & ~inner


def nearest_two_sqdist(labels, count):
    """Squared Euclidean distance to the nearest and second-nearest component.

    Returns ``(a1, a2)``; ``a2`` is the distance to the closest component other
    than one attaining ``a1`` (equal to ``a1`` on ties). Unset entries hold
    ``np.iinfo(np.int64).max``.
    """
    H, W = labels.shape
    big = np.iinfo(np.int64).max
    a1 = np.full(H * W, big, dtype=np.int64)
    a2 = np.full(H * W, big, dtype=np.int64)
    yy, xx = np.divmod(np.arange(H * W, dtype=np.int64), W)
    chunk = max(1, 4_000_000 // max(1, H * W))
    for c in range(1, count + 1):
        by, bx = np.nonzero(_boundary(labels == c))
        d = np.full(H * W, big, dtype=np.int64)
        for s in range(0, len(by), chunk):
            dy = yy[:, None] - by[None, s:s + chunk]
            dx = xx[:, None] - bx[None, s:s + chunk]
            np.minimum(d, (dy * dy + dx * dx).min(axis=1), out=d)
        a2 = np.minimum(a2, np.maximum(a1, d))
        a1 = np.minimum(a1, d)
    return a1.reshape(H, W), a2.reshape(H, W)
