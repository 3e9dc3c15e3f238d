"""Neural-network primitives on [C, H, W] tensors (batch size fixed at 1)."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, DegenerateError, ShapeError
from .tensor import Tensor, _wants, as_tensor, record

CELL, BACKGROUND, FUZZY = 1, 2, 3


def _chw(x, op):
    if x.ndim != 3:
        raise ShapeError(f"{op}: expected a [C, H, W] tensor, got shape {x.shape}")


def _where(block):
    return f" in block {block!r}" if block else ""


def conv_output_extent(n, k, stride, block=None, axis="height"):
    if n < k:
        raise ShapeError(f"{axis} {n} is smaller than kernel {k}{_where(block)}")
    if (n - k) % stride:
        raise ShapeError(
            f"{axis} {n} gives a non-integral output for kernel {k} stride {stride}"
            f"{_where(block)}: (n - k) must be divisible by {stride}")
    return (n - k) // stride + 1


def conv2d(x, weight, bias, stride=1, padding="valid", block=None):
    """Cross-correlation with a [out, in, kh, kw] kernel.

    ``padding="same"`` zero-pads an odd kernel so the extent is preserved
    (stride 1 only).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _chw(x, "conv2d")
    O, C, kh, kw = weight.shape
    if x.shape[0] != C:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernel expects {C}{_where(block)}")
    if bias.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {O} output channels{_where(block)}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0 or stride != 1:
            raise ShapeError(f"same padding needs an odd kernel and stride 1{_where(block)}")
        ph, pw = kh // 2, kw // 2
        xin = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    elif padding == "valid":
        ph = pw = 0
        xin = x.data
    else:
        raise ContractError(f"unknown padding {padding!r}")
    Hp, Wp = xin.shape[1:]
    Ho = conv_output_extent(Hp, kh, stride, block, "height")
    Wo = conv_output_extent(Wp, kw, stride, block, "width")
    out = Tensor(kernels.conv2d_valid(xin, weight.data, bias.data, stride))

    def backward(g):
        g2 = g.reshape(O, -1)
        gw = gx = None
        if _wants(weight):
            gw = np.empty(weight.shape)
            for i in range(kh):
                for j in range(kw):
                    patch = xin[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride]
                    gw[:, :, i, j] = g2 @ patch.reshape(C, -1).T
        gb = g.sum(axis=(1, 2)) if _wants(bias) else None
        if _wants(x):
            cols = (weight.data.reshape(O, -1).T @ g2).reshape(C, kh, kw, Ho, Wo)
            gxp = np.zeros(xin.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += cols[:, i, j]
            gx = gxp[:, ph:Hp - ph, pw:Wp - pw] if (ph or pw) else gxp
        return gx, gw, gb

    return record(out, (x, weight, bias), backward)


def deconv2x2(x, weight, bias, block=None):
    """Stride-2 transposed convolution; ``weight`` is [out, in, 2, 2].

    ``out[o, 2y+i, 2x+j] = bias[o] + sum_c weight[o, c, i, j] * x[c, y, x]``.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _chw(x, "deconv2x2")
    O, C, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ShapeError(f"deconv2x2 needs a 2x2 kernel, got {kh}x{kw}{_where(block)}")
    if x.shape[0] != C:
        raise ShapeError(f"deconv2x2: input has {x.shape[0]} channels, kernel expects {C}{_where(block)}")
    _, H, W = x.shape
    data = np.empty((O, 2 * H, 2 * W))
    for i in range(2):
        for j in range(2):
            data[:, i::2, j::2] = kernels.conv2d_valid(x.data, weight.data[:, :, i:i + 1, j:j + 1], bias.data, 1)
    out = Tensor(data)

    def backward(g):
        gx = gw = None
        if _wants(x):
            gx = np.zeros(x.shape)
            for i in range(2):
                for j in range(2):
                    gx += np.einsum("oc,ohw->chw", weight.data[:, :, i, j], g[:, i::2, j::2])
        if _wants(weight):
            gw = np.empty(weight.shape)
            xf = x.data.reshape(C, -1)
            for i in range(2):
                for j in range(2):
                    gw[:, :, i, j] = g[:, i::2, j::2].reshape(O, -1) @ xf.T
        gb = g.sum(axis=(1, 2)) if _wants(bias) else None
        return gx, gw, gb

    return record(out, (x, weight, bias), backward)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, momentum=0.1, eps=1e-5, prefix=""):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{prefix}gamma"),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{prefix}beta"),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            eps=eps,
        )


def batch_norm(x, state, mode="train"):
    """Per-channel normalisation over the spatial plane.

    Train mode uses the statistics of ``x`` and updates the running
    estimates in place (unbiased variance, as is conventional); eval mode is
    a fixed affine map built from the running estimates.
    """
    x = as_tensor(x)
    _chw(x, "batch_norm")
    C, H, W = x.shape
    gamma, beta = state.gamma, state.beta
    n = H * W
    if mode == "train":
        if n < 2:
            raise DegenerateError("batch_norm in train mode needs at least 2 pixels per channel")
        mean = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean[:, None, None]) * inv_std[:, None, None]
        m = state.momentum
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        state.running_var[:] = (1 - m) * state.running_var + m * var * (n / (n - 1))
        out = Tensor(gamma.data[:, None, None] * xhat + beta.data[:, None, None])

        def backward(g):
            gg = (g * xhat).sum(axis=(1, 2))
            gb = g.sum(axis=(1, 2))
            gx = None
            if _wants(x):
                dxhat = g * gamma.data[:, None, None]
                gx = (inv_std[:, None, None] / n) * (
                    n * dxhat
                    - dxhat.sum(axis=(1, 2))[:, None, None]
                    - xhat * (dxhat * xhat).sum(axis=(1, 2))[:, None, None])
            return gx, gg, gb

    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean[:, None, None]) * inv_std[:, None, None]
        out = Tensor(xhat * gamma.data[:, None, None] + beta.data[:, None, None])

        def backward(g):
            gx = g * (gamma.data * inv_std)[:, None, None] if _wants(x) else None
            return gx, (g * xhat).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    else:
        raise ContractError(f"unknown batch-norm mode {mode!r}")
    return record(out, (x, gamma, beta), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return record(out, (x,), lambda g: (g * mask,))


def _interp_table(n, f, align_corners):
    """Source indices and weights for 1-D linear upsampling of ``n`` samples by ``f``."""
    m = n * f
    i = np.arange(m)
    if align_corners:
        pos = i * ((n - 1) / (m - 1)) if m > 1 else np.zeros(m)
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
    else:
        # half-pixel centres; the fraction depends only on i mod f, so the
        # result is exactly shift-equivariant for shifts by f
        r = i % f
        frac = (r + 0.5) / f - 0.5
        lo = i // f
        neg = frac < 0
        lo = lo - neg
        frac = np.where(neg, frac + 1.0, frac)
    lo = np.clip(lo, 0, n - 1)
    hi = np.clip(lo + 1, 0, n - 1)
    return lo, hi, 1.0 - frac, frac


def _interp_matrix(n, f, align_corners):
    lo, hi, w0, w1 = _interp_table(n, f, align_corners)
    R = np.zeros((n * f, n))
    rows = np.arange(n * f)
    np.add.at(R, (rows, lo), w0)
    np.add.at(R, (rows, hi), w1)
    return R


def upsample_bilinear(x, f, align_corners=False):
    x = as_tensor(x)
    _chw(x, "upsample_bilinear")
    f = int(f)
    if f < 2:
        raise ShapeError(f"resize factor must be >= 2, got {f}")
    C, H, W = x.shape
    lo, hi, w0, w1 = _interp_table(H, f, align_corners)
    t = x.data[:, lo, :] * w0[None, :, None] + x.data[:, hi, :] * w1[None, :, None]
    lo, hi, w0, w1 = _interp_table(W, f, align_corners)
    out = Tensor(t[:, :, lo] * w0 + t[:, :, hi] * w1)

    def backward(g):
        Rh = _interp_matrix(H, f, align_corners)
        Rw = _interp_matrix(W, f, align_corners)
        return (np.matmul(np.matmul(Rh.T, g), Rw),)

    return record(out, (x,), backward)


def maxpool(x, f):
    x = as_tensor(x)
    _chw(x, "maxpool")
    f = int(f)
    if f < 2:
        raise ShapeError(f"resize factor must be >= 2, got {f}")
    C, H, W = x.shape
    if H % f or W % f:
        raise ShapeError(f"maxpool factor {f} does not divide extent {H}x{W}")
    win = x.data.reshape(C, H // f, f, W // f, f).transpose(0, 1, 3, 2, 4).reshape(C, H // f, W // f, f * f)
    arg = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0])

    def backward(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        return (gw.reshape(C, H // f, W // f, f, f).transpose(0, 1, 3, 2, 4).reshape(C, H, W),)

    return record(out, (x,), backward)


def resize(x, mode, f, align_corners=True):
    """``mode`` is ``"bilinear-up"`` or ``"maxpool-down"``.

    Upsampling is corner-aligned by default. The network itself asks for
    half-pixel sampling, the variant that commutes with 16-pixel shifts.
    """
    if mode == "bilinear-up":
        return upsample_bilinear(x, f, align_corners=align_corners)
    if mode == "maxpool-down":
        return maxpool(x, f)
    raise ContractError(f"unknown resize mode {mode!r}")


def crop_offsets(src, dst):
    """Top/left offset of a centred crop; the odd leftover goes bottom/right."""
    return (src - dst) // 2


def center_crop(x, target):
    x = as_tensor(x)
    _chw(x, "center_crop")
    C, H, W = x.shape
    h, w = int(target[0]), int(target[1])
    if h > H or w > W or h < 1 or w < 1:
        raise ShapeError(f"cannot crop {H}x{W} to {h}x{w}")
    if (h, w) == (H, W):
        return x
    top, left = crop_offsets(H, h), crop_offsets(W, w)
    out = Tensor(x.data[:, top:top + h, left:left + w].copy())

    def backward(g):
        gx = np.zeros(x.shape)
        gx[:, top:top + h, left:left + w] = g
        return (gx,)

    return record(out, (x,), backward)


def concat_channels(xs):
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in xs:
        _chw(t, "concat_channels")
    spatial = {t.shape[1:] for t in xs}
    if len(spatial) != 1:
        raise ShapeError(f"concat_channels: spatial extents differ: {sorted(spatial)}")
    if len(xs) == 1:
        return xs[0]
    out = Tensor(np.concatenate([t.data for t in xs], axis=0))
    bounds = np.cumsum([0] + [t.shape[0] for t in xs])

    def backward(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(xs)))

    return record(out, tuple(xs), backward)


def dropout_mask(channels, rate, seed):
    """Boolean keep-mask over channels."""
    rng = np.random.default_rng(seed)
    return rng.random(channels) >= rate


def spatial_dropout(x, rate, seed=None, mode="train", mask=None):
    """Zero whole channels with probability ``rate``; survivors scaled by 1/(1-rate).

    ``mask`` (boolean, one entry per channel) freezes the choice, which is
    what gradient checks need.
    """
    x = as_tensor(x)
    _chw(x, "spatial_dropout")
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ContractError(f"unknown dropout mode {mode!r}")
    if mask is None:
        if seed is None:
            raise ContractError("spatial_dropout in train mode needs a seed or a mask")
        mask = dropout_mask(x.shape[0], rate, seed)
    factor = np.asarray(mask, dtype=np.float64) / (1.0 - rate)
    out = Tensor(x.data * factor[:, None, None])
    return record(out, (x,), lambda g: (g * factor[:, None, None],))


def log_softmax_channels(x):
    x = as_tensor(x)
    _chw(x, "log_softmax_channels")
    if x.shape[0] < 2:
        raise ShapeError("log_softmax_channels needs at least 2 channels")
    z = x.data - x.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    out_data = z - lse
    out = Tensor(out_data)

    def backward(g):
        return (g - np.exp(out_data) * g.sum(axis=0, keepdims=True),)

    return record(out, (x,), backward)


def weighted_nll(logp, labels, class_weights=(0.25, 0.75, 0.0)):
    """Weighted mean negative log-likelihood over labelled pixels.

    ``labels`` uses 1 = cell (target channel 1), 2 = background (channel 0),
    3 = fuzzy boundary (never a target; its weight must be 0).
    """
    logp = as_tensor(logp)
    labels = np.asarray(labels)
    if logp.ndim != 3 or logp.shape[0] != 2:
        raise ShapeError(f"weighted_nll expects [2, H, W] log-probabilities, got {logp.shape}")
    if labels.shape != logp.shape[1:]:
        raise ShapeError(f"label extent {labels.shape} differs from prediction extent {logp.shape[1:]}")
    w_cell, w_bg, w_fuzzy = (float(w) for w in class_weights)
    if w_fuzzy != 0.0:
        raise ConfigError("the fuzzy-boundary weight must be 0")
    if min(w_cell, w_bg) < 0:
        raise ConfigError(f"class weights must be non-negative, got {class_weights}")
    if not np.isin(labels, (CELL, BACKGROUND, FUZZY)).all():
        raise ContractError("labels must only contain 1 (cell), 2 (background) or 3 (fuzzy)")
    cell = labels == CELL
    bg = labels == BACKGROUND
    weights = np.where(cell, w_cell, np.where(bg, w_bg, 0.0))
    total = weights.sum()
    if total <= 0:
        raise DegenerateError("no pixel carries a positive weight (all fuzzy?)")
    # one-hot target weights: channel 0 = background, channel 1 = cell
    tw = np.stack([np.where(bg, w_bg, 0.0), np.where(cell, w_cell, 0.0)]) / total
    out = Tensor(-(tw * logp.data).sum())
    return record(out, (logp,), lambda g: (-g * tw,))
