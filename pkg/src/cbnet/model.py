"""CB-Net and the U-Net baseline built on the tape primitives.

Both networks use valid 3x3 convolutions, so an ``N x N`` input yields an
``(N - 184) x (N - 184)`` output and only ``N = 12 (mod 16), N >= 188`` is
feasible. :func:`shape_trace` checks this before any compute happens.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import layers as L
from .errors import ConfigError, ShapeError
from .tensor import Tensor

MARGIN = 184
N_ENCODERS = 4


@dataclass
class ModelConfig:
    arch: str = "cbnet"
    in_channels: int = 2
    num_classes: int = 2
    base_width: Optional[int] = None  # 32 for CB-Net, 64 for U-Net
    scales: int = 5
    dropout_rate: float = 0.5
    seed: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.arch not in ("cbnet", "unet"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.base_width is None:
            self.base_width = 32 if self.arch == "cbnet" else 64
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.scales != 5:
            raise ConfigError(f"only the 5-scale layout is supported, got scales={self.scales}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("need at least one input channel and two classes")


@dataclass
class Block:
    name: str
    kind: str
    scale: int
    out_channels: int
    params: list = field(default_factory=list)
    inputs: list = field(default_factory=list)


class Network:
    """Ordered blocks plus a flat, hierarchically named parameter table."""

    def __init__(self, config):
        self.config = config
        self.arch = config.arch
        self.blocks = []
        self.params = {}
        self.bn = {}
        self.edges = []
        self._rng = np.random.default_rng(config.seed)

    # construction helpers -------------------------------------------------

    def _add_block(self, name, kind, scale, out_channels, inputs=()):
        block = Block(name, kind, scale, out_channels, inputs=list(inputs))
        self.blocks.append(block)
        for src in inputs:
            self.edges.append((src, name))
        return block

    def _param(self, block, name, data):
        full = f"{block.name}.{name}"
        if full in self.params:
            raise ConfigError(f"duplicate parameter name {full}")
        t = Tensor(data, requires_grad=True, name=full)
        self.params[full] = t
        block.params.append(full)
        return t

    def _conv(self, block, name, c_in, c_out, k, fan_in=None):
        fan_in = fan_in if fan_in is not None else c_in * k * k
        std = np.sqrt(2.0 / fan_in)
        self._param(block, f"{name}.weight", self._rng.standard_normal((c_out, c_in, k, k)) * std)
        self._param(block, f"{name}.bias", np.zeros(c_out))

    def _bn(self, block, name, channels):
        prefix = f"{block.name}.{name}"
        state = L.BatchNormState.create(channels, self.config.bn_momentum, self.config.bn_eps, prefix=prefix + ".")
        self.params[prefix + ".gamma"] = state.gamma
        self.params[prefix + ".beta"] = state.beta
        block.params += [prefix + ".gamma", prefix + ".beta"]
        self.bn[prefix] = state

    def _residual(self, block, prefix, c):
        self._bn(block, f"{prefix}.bn1", c)
        self._conv(block, f"{prefix}.conv1", c, c, 3)
        self._bn(block, f"{prefix}.bn2", c)
        self._conv(block, f"{prefix}.conv2", c, c, 3)

    # access ---------------------------------------------------------------

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def buffers(self):
        out = {}
        for prefix, state in self.bn.items():
            out[prefix + ".running_mean"] = state.running_mean
            out[prefix + ".running_var"] = state.running_var
        return out

    def state_dict(self):
        """Every stored array (parameters, then batch-norm buffers) by name."""
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.buffers())
        return out

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def shortcut_edges(self):
        return [(s, d) for s, d in self.edges
                if s.startswith("encoder") and d.startswith("decoder")]

    def widths(self):
        return {b.name: b.out_channels for b in self.blocks}


def build_cbnet(config=None):
    config = ModelConfig() if config is None else config
    if config.arch != "cbnet":
        raise ConfigError("build_cbnet needs arch='cbnet'")
    net = Network(config)
    w = config.base_width
    skip_total = sum(w * j for j in range(1, N_ENCODERS + 1))

    b = net._add_block("transition", "transition", 1, w, inputs=["input"])
    net._conv(b, "conv", config.in_channels, w, 7)
    prev = "transition"
    for k in range(1, N_ENCODERS + 1):
        b = net._add_block(f"encoder{k}", "encoder", k, w * k, inputs=[prev])
        net._residual(b, "res", w * k)
        net._conv(b, "down", w * k, w * (k + 1), 2)
        prev = f"encoder{k}"
    b = net._add_block("bridge", "bridge", 5, w * 5, inputs=[prev])
    net._residual(b, "res", w * 5)
    prev = "bridge"
    for k in range(N_ENCODERS, 0, -1):
        inputs = [prev] + [f"encoder{j}" for j in range(1, N_ENCODERS + 1)]
        b = net._add_block(f"decoder{k}", "decoder", k, w * k, inputs=inputs)
        # each output pixel of a stride-2 deconvolution sees c_in inputs
        net._conv(b, "deconv", w * (k + 1), w * k, 2, fan_in=w * (k + 1))
        net._conv(b, "cast", w * k + skip_total, w * k, 1)
        net._residual(b, "res", w * k)
        prev = f"decoder{k}"
    b = net._add_block("prediction", "prediction", 1, config.num_classes, inputs=[prev])
    net._conv(b, "conv", w, config.num_classes, 1)
    return net


def build_unet_baseline(config=None):
    config = ModelConfig(arch="unet") if config is None else config
    if config.arch != "unet":
        raise ConfigError("build_unet_baseline needs arch='unet'")
    net = Network(config)
    w = config.base_width
    widths = [w * 2 ** k for k in range(5)]
    c_in = config.in_channels
    prev = "input"
    for k in range(1, 5):
        b = net._add_block(f"encoder{k}", "encoder", k, widths[k - 1], inputs=[prev])
        net._conv(b, "conv1", c_in, widths[k - 1], 3)
        net._conv(b, "conv2", widths[k - 1], widths[k - 1], 3)
        c_in = widths[k - 1]
        prev = f"encoder{k}"
    b = net._add_block("bridge", "bridge", 5, widths[4], inputs=[prev])
    net._conv(b, "conv1", widths[3], widths[4], 3)
    net._conv(b, "conv2", widths[4], widths[4], 3)
    prev = "bridge"
    for k in range(4, 0, -1):
        b = net._add_block(f"decoder{k}", "decoder", k, widths[k - 1], inputs=[prev, f"encoder{k}"])
        net._conv(b, "deconv", widths[k], widths[k - 1], 2, fan_in=widths[k])
        net._conv(b, "conv1", 2 * widths[k - 1], widths[k - 1], 3)
        net._conv(b, "conv2", widths[k - 1], widths[k - 1], 3)
        prev = f"decoder{k}"
    b = net._add_block("prediction", "prediction", 1, config.num_classes, inputs=[prev])
    net._conv(b, "conv", widths[0], config.num_classes, 1)
    return net


def build_network(config):
    return build_cbnet(config) if config.arch == "cbnet" else build_unet_baseline(config)


def param_count(net):
    return int(sum(t.size for t in net.params.values()))


# shape calculus -------------------------------------------------------------

@dataclass
class BlockShape:
    name: str
    in_size: tuple
    out_size: tuple
    in_channels: int
    out_channels: int


@dataclass
class ShapeTrace:
    input_size: tuple
    output_size: tuple
    blocks: list
    encoder_outputs: list  # spatial size of each encoder's residual output (the shortcut source)

    @property
    def margin(self):
        return (self.input_size[0] - self.output_size[0], self.input_size[1] - self.output_size[1])

    def table(self):
        lines = [f"{'block':<12} {'in':>11} {'out':>11} {'ch_in':>6} {'ch_out':>6}"]
        for b in self.blocks:
            lines.append(f"{b.name:<12} {b.in_size[0]:>5}x{b.in_size[1]:<5} "
                         f"{b.out_size[0]:>5}x{b.out_size[1]:<5} {b.in_channels:>6} {b.out_channels:>6}")
        lines.append(f"output {self.output_size[0]}×{self.output_size[1]}")
        return "\n".join(lines)


_FEASIBLE_HINT = "input extent must satisfy N = 12 (mod 16) and N >= 188"


def _valid_pair(n, block, axis):
    """Two valid 3x3 convolutions."""
    if n < 5:
        raise ShapeError(f"{axis} {n} too small for block {block!r} (two valid 3x3 convolutions need >= 5); "
                         f"{_FEASIBLE_HINT}")
    return n - 4


def _halve(n, block, axis):
    if n % 2:
        raise ShapeError(f"{axis} {n} is odd at {block!r}; downsampling needs an even extent; {_FEASIBLE_HINT}")
    return n // 2


def _trace_1d(n, axis):
    """Per-block (in, out) extents along one axis; identical for both architectures."""
    sizes = {}
    sizes["transition"] = (n, n)
    cur = n
    enc = []
    for k in range(1, N_ENCODERS + 1):
        r = _valid_pair(cur, f"encoder{k} residual", axis)
        enc.append(r)
        d = _halve(r, f"encoder{k} Conv-Down", axis)
        sizes[f"encoder{k}"] = (cur, d)
        cur = d
    b = _valid_pair(cur, "bridge residual", axis)
    sizes["bridge"] = (cur, b)
    cur = b
    for k in range(N_ENCODERS, 0, -1):
        r = _valid_pair(2 * cur, f"decoder{k} residual", axis)
        sizes[f"decoder{k}"] = (cur, r)
        cur = r
    sizes["prediction"] = (cur, cur)
    return sizes, enc


def shape_trace(config, size):
    """Static sizes of every block for an ``(H, W)`` input, or a ShapeError."""
    if isinstance(size, int):
        size = (size, size)
    H, W = int(size[0]), int(size[1])
    if H < 1 or W < 1:
        raise ShapeError(f"input extent must be positive, got {H}x{W}")
    sh, eh = _trace_1d(H, "height")
    sw, ew = _trace_1d(W, "width")
    w = config.base_width
    if config.arch == "cbnet":
        ch = {"transition": (config.in_channels, w), "bridge": (5 * w, 5 * w),
              "prediction": (w, config.num_classes)}
        for k in range(1, N_ENCODERS + 1):
            ch[f"encoder{k}"] = (w * k, w * (k + 1))
            ch[f"decoder{k}"] = (w * (k + 1), w * k)
    else:
        widths = [w * 2 ** k for k in range(5)]
        ch = {"transition": (config.in_channels, config.in_channels), "bridge": (widths[3], widths[4]),
              "prediction": (widths[0], config.num_classes)}
        prev = config.in_channels
        for k in range(1, 5):
            ch[f"encoder{k}"] = (prev, widths[k - 1])
            prev = widths[k - 1]
            ch[f"decoder{k}"] = (widths[k], widths[k - 1])
    order = ["transition"] + [f"encoder{k}" for k in range(1, 5)] + ["bridge"] + \
            [f"decoder{k}" for k in range(4, 0, -1)] + ["prediction"]
    blocks = [BlockShape(name, (sh[name][0], sw[name][0]), (sh[name][1], sw[name][1]), *ch[name])
              for name in order]
    if config.arch == "unet":
        blocks = blocks[1:]
    return ShapeTrace((H, W), blocks[-1].out_size, blocks, list(zip(eh, ew)))


def is_feasible(n):
    return n >= 188 and n % 16 == 12


# forward ---------------------------------------------------------------------

def _residual(net, x, prefix, mode):
    p = net.params
    h = L.relu(L.batch_norm(x, net.bn[f"{prefix}.bn1"], mode))
    h = L.conv2d(h, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"], block=prefix)
    h = L.relu(L.batch_norm(h, net.bn[f"{prefix}.bn2"], mode))
    h = L.conv2d(h, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"], block=prefix)
    return h + L.center_crop(x, h.shape[1:])


def _conv(net, x, prefix, stride=1, padding="valid"):
    p = net.params
    return L.conv2d(x, p[f"{prefix}.weight"], p[f"{prefix}.bias"], stride=stride, padding=padding, block=prefix)


def rescale_shortcut(feat, src_scale, dst_scale, target):
    """Bring an encoder output to the decoder's scale and extent."""
    if dst_scale > src_scale:
        f = 2 ** (dst_scale - src_scale)
        _, H, W = feat.shape
        feat = L.center_crop(feat, (H - H % f, W - W % f))
        feat = L.maxpool(feat, f)
    elif dst_scale < src_scale:
        feat = L.upsample_bilinear(feat, 2 ** (src_scale - dst_scale), align_corners=False)
    return L.center_crop(feat, target)


def _dropout_seed(seed, k):
    return None if seed is None else [int(seed), int(k)]


def stem(net, image):
    """The size-preserving transition block (identity for the baseline).

    It is the only layer that pads, so tiled inference runs it once over the
    whole image and tiles its output instead of the raw pixels.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if net.arch != "cbnet":
        return x
    return L.relu(_conv(net, x, "transition.conv", padding="same"))


def _forward_cbnet(net, x, mode, seed):
    rate = net.config.dropout_rate
    skips = []
    for k in range(1, N_ENCODERS + 1):
        x = _residual(net, x, f"encoder{k}.res", mode)
        skips.append(x)
        x = _conv(net, x, f"encoder{k}.down", stride=2)
    x = _residual(net, x, "bridge.res", mode)
    for k in range(N_ENCODERS, 0, -1):
        up = L.deconv2x2(x, net.params[f"decoder{k}.deconv.weight"], net.params[f"decoder{k}.deconv.bias"],
                         block=f"decoder{k}.deconv")
        target = up.shape[1:]
        feats = [up] + [rescale_shortcut(skips[j - 1], j, k, target) for j in range(1, N_ENCODERS + 1)]
        cat = L.concat_channels(feats)
        cat = L.spatial_dropout(cat, rate, seed=_dropout_seed(seed, k), mode=mode)
        x = _conv(net, cat, f"decoder{k}.cast")
        x = _residual(net, x, f"decoder{k}.res", mode)
    return L.log_softmax_channels(_conv(net, x, "prediction.conv"))


def _forward_unet(net, x, mode, seed):
    skips = []
    for k in range(1, 5):
        x = L.relu(_conv(net, x, f"encoder{k}.conv1"))
        x = L.relu(_conv(net, x, f"encoder{k}.conv2"))
        skips.append(x)
        x = L.maxpool(x, 2)
    x = L.relu(_conv(net, x, "bridge.conv1"))
    x = L.relu(_conv(net, x, "bridge.conv2"))
    for k in range(4, 0, -1):
        up = L.deconv2x2(x, net.params[f"decoder{k}.deconv.weight"], net.params[f"decoder{k}.deconv.bias"],
                         block=f"decoder{k}.deconv")
        x = L.concat_channels([L.center_crop(skips[k - 1], up.shape[1:]), up])
        x = L.relu(_conv(net, x, f"decoder{k}.conv1"))
        x = L.relu(_conv(net, x, f"decoder{k}.conv2"))
    return L.log_softmax_channels(_conv(net, x, "prediction.conv"))


def forward(net, image, mode="eval", seed=None, features=False):
    """Per-pixel log-probabilities ``[num_classes, H - 184, W - 184]``.

    ``mode="train"`` uses batch statistics (updating running estimates) and
    seeded spatial dropout; ``mode="eval"`` leaves the network untouched.
    With ``features=True`` the input is already the output of :func:`stem`.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    channels = net.config.in_channels
    if features and net.arch == "cbnet":
        channels = net.config.base_width
    if x.ndim != 3 or x.shape[0] != channels:
        raise ShapeError(f"expected a [{channels}, H, W] input, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    trace = shape_trace(net.config, x.shape[1:])
    if not features:
        x = stem(net, x)
    if net.arch == "cbnet":
        out = _forward_cbnet(net, x, mode, seed)
    else:
        out = _forward_unet(net, x, mode, seed)
    assert out.shape[1:] == trace.output_size, (out.shape, trace.output_size)
    return out
