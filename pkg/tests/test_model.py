import numpy as np
import pytest

from cbnet.errors import ConfigError, ShapeError
from cbnet.model import ModelConfig, build_network, forward, is_feasible, param_count, shape_trace


def recurrence(n):
    """Independent size oracle: valid 3x3 pairs, 2x2 stride-2 downs, 2x2 deconvs."""
    enc = []
    for _ in range(4):
        n -= 4
        if n < 1 or n % 2:
            return None
        enc.append(n)
        n //= 2
    n -= 4
    if n < 1:
        return None
    dec = []
    for _ in range(4):
        n = 2 * n - 4
        dec.append(n)
    return enc, dec


def test_shape_trace_204_matches_recurrence():
    enc, dec = recurrence(204)
    assert enc == [200, 96, 44, 18] and dec == [6, 8, 12, 20]
    trace = shape_trace(ModelConfig(), 204)
    assert [s[0] for s in trace.encoder_outputs] == enc
    assert trace.output_size == (20, 20)
    assert trace.table().splitlines()[-1] == "output 20×20"


def test_feasible_set_is_12_mod_16():
    for n in range(150, 400):
        assert is_feasible(n) == (recurrence(n) is not None and n >= 188)
        assert is_feasible(n) == (n % 16 == 12 and n >= 188)


@pytest.mark.parametrize("n", [200, 203, 172])
def test_infeasible_names_block_and_hint(n):
    with pytest.raises(ShapeError, match="N = 12"):
        shape_trace(ModelConfig(), n)


def cbnet_params(w, cin=2, classes=2):
    res = lambda c: 18 * c * c + 6 * c
    total = 49 * cin * w + w
    for k in range(1, 5):
        c, c2 = w * k, w * (k + 1)
        total += res(c) + 4 * c * c2 + c2
    total += res(5 * w)
    for k in range(1, 5):
        c, c2 = w * k, w * (k + 1)
        total += 4 * c2 * c + c + (c + 10 * w) * c + c + res(c)
    return total + w * classes + classes


def unet_params(w, cin=2, classes=2):
    conv = lambda a, b, k=3: k * k * a * b + b
    widths = [w * 2 ** k for k in range(5)]
    total, prev = 0, cin
    for c in widths:
        total += conv(prev, c) + conv(c, c)
        prev = c
    for k in range(3, -1, -1):
        c = widths[k]
        total += conv(widths[k + 1], c, 2) + conv(2 * c, c) + conv(c, c)
    return total + conv(w, classes, 1)


@pytest.mark.parametrize("w", [4, 8, 32])
def test_cbnet_param_count_formula(w):
    assert param_count(build_network(ModelConfig(base_width=w))) == cbnet_params(w)


def test_unet_param_count_formula():
    net = build_network(ModelConfig(arch="unet"))
    assert param_count(net) == unet_params(64) == 31_031_234


def test_sixteen_shortcut_edges():
    net = build_network(ModelConfig(base_width=4))
    edges = net.shortcut_edges()
    assert len(edges) == 16
    assert {(s, d) for s, d in edges} == {(f"encoder{i}", f"decoder{j}") for i in range(1, 5) for j in range(1, 5)}


@pytest.mark.parametrize("arch", ["cbnet", "unet"])
def test_forward_extent_and_normalisation(arch):
    net = build_network(ModelConfig(arch=arch, base_width=4))
    x = np.random.default_rng(0).random((2, 204, 220))
    logp = forward(net, x).data
    assert logp.shape == (2, 20, 36)
    assert np.allclose(np.exp(logp).sum(axis=0), 1.0)


def test_forward_rejects_wrong_channels():
    net = build_network(ModelConfig(base_width=4))
    with pytest.raises(ShapeError):
        forward(net, np.zeros((3, 204, 204)))


def test_eval_forward_leaves_network_untouched():
    net = build_network(ModelConfig(base_width=4))
    before = {k: v.copy() for k, v in net.state_dict().items()}
    forward(net, np.random.default_rng(1).random((2, 204, 204)))
    assert all(np.array_equal(before[k], v) for k, v in net.state_dict().items())


def test_init_is_seeded():
    a = build_network(ModelConfig(base_width=4, seed=5)).state_dict()
    b = build_network(ModelConfig(base_width=4, seed=5)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_bad_configs():
    with pytest.raises(ConfigError):
        ModelConfig(arch="resnet")
    with pytest.raises(ConfigError):
        ModelConfig(base_width=0)
