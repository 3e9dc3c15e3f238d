"""Finite-difference checks for every differentiable primitive and the full loss."""
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .layers import BatchNormState
from .model import ModelConfig, build_network, forward
from .tensor import Tensor, dot, grad_check

LAYER_TOL = 1e-4
NETWORK_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def ok(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape))


def _projected(op, out_shape, rng):
    """Scalar ``<op(...), R>`` for a fixed random ``R``."""
    r = rng.normal(size=out_shape)
    return lambda *xs: dot(op(*xs), r)


def _relu_input(rng, shape):
    # keep values away from the kink so central differences stay one-sided-free
    x = rng.normal(size=shape)
    return Tensor(np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + x, x))


def _labels(rng, shape):
    lab = rng.integers(1, 4, size=shape).astype(np.uint8)
    lab.flat[0], lab.flat[1] = L.CELL, L.BACKGROUND
    return lab


def layer_cases(seed):
    """``(name, fn, inputs)`` triples for one seed."""
    rng = np.random.default_rng(seed)
    cases = []

    x, w, b = _t(rng, 3, 9, 8), _t(rng, 4, 3, 3, 3, scale=0.3), _t(rng, 4)
    cases.append(("conv2d valid", _projected(lambda x, w, b: L.conv2d(x, w, b), (4, 7, 6), rng), [x, w, b]))
    x, w, b = _t(rng, 2, 7, 6), _t(rng, 3, 2, 7, 7, scale=0.2), _t(rng, 3)
    cases.append(("conv2d same", _projected(lambda x, w, b: L.conv2d(x, w, b, padding="same"), (3, 7, 6), rng),
                  [x, w, b]))
    x, w, b = _t(rng, 3, 8, 10), _t(rng, 5, 3, 2, 2, scale=0.3), _t(rng, 5)
    cases.append(("conv2d stride 2", _projected(lambda x, w, b: L.conv2d(x, w, b, stride=2), (5, 4, 5), rng),
                  [x, w, b]))
    x, w, b = _t(rng, 4, 3, 5), _t(rng, 2, 4, 2, 2, scale=0.3), _t(rng, 2)
    cases.append(("deconv2x2", _projected(L.deconv2x2, (2, 6, 10), rng), [x, w, b]))

    state = BatchNormState.create(3)
    state.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    state.beta.data[:] = rng.normal(size=3)
    x = _t(rng, 3, 5, 4, scale=2.0)
    bn_train = _projected(lambda x, g, b: L.batch_norm(x, state, "train"), (3, 5, 4), rng)
    cases.append(("batch_norm train", bn_train, [x, state.gamma, state.beta]))
    state_e = BatchNormState.create(3)
    state_e.running_mean[:] = rng.normal(size=3)
    state_e.running_var[:] = rng.uniform(0.5, 2.0, 3)
    x = _t(rng, 3, 4, 4)
    bn_eval = _projected(lambda x, g, b: L.batch_norm(x, state_e, "eval"), (3, 4, 4), rng)
    cases.append(("batch_norm eval", bn_eval, [x, state_e.gamma, state_e.beta]))

    cases.append(("relu", _projected(L.relu, (2, 5, 5), rng), [_relu_input(rng, (2, 5, 5))]))
    for f in (2, 4):
        for ac in (False, True):
            x = _t(rng, 2, 3, 4)
            op = (lambda f, ac: lambda x: L.upsample_bilinear(x, f, align_corners=ac))(f, ac)
            cases.append((f"upsample x{f}{' corners' if ac else ''}", _projected(op, (2, 3 * f, 4 * f), rng), [x]))
    x = Tensor(rng.permutation(2 * 8 * 8).reshape(2, 8, 8) * 0.1)   # distinct values, no argmax ties
    cases.append(("maxpool x2", _projected(lambda x: L.maxpool(x, 2), (2, 4, 4), rng), [x]))
    cases.append(("center_crop", _projected(lambda x: L.center_crop(x, (5, 4)), (2, 5, 4), rng),
                  [_t(rng, 2, 8, 7)]))
    a, c = _t(rng, 2, 4, 4), _t(rng, 3, 4, 4)
    cases.append(("concat_channels", _projected(lambda a, c: L.concat_channels([a, c]), (5, 4, 4), rng), [a, c]))
    mask = np.array([True, False, True, True])
    drop = _projected(lambda x: L.spatial_dropout(x, 0.5, mode="train", mask=mask), (4, 3, 3), rng)
    cases.append(("spatial_dropout", drop, [_t(rng, 4, 3, 3)]))
    cases.append(("log_softmax", _projected(L.log_softmax_channels, (2, 4, 5), rng), [_t(rng, 2, 4, 5)]))
    labels = _labels(rng, (4, 5))
    logp = Tensor(L.log_softmax_channels(_t(rng, 2, 4, 5)).data)
    cases.append(("weighted_nll", lambda lp: L.weighted_nll(lp, labels), [logp]))
    return cases


def network_case(seed, width=4, size=204, samples=24):
    """Full CB-Net loss in train mode (fixed dropout seed) against sampled parameters."""
    rng = np.random.default_rng(seed)
    net = build_network(ModelConfig(base_width=width, seed=seed))
    image = Tensor(rng.random((2, size, size)))
    labels = _labels(rng, (size - 184, size - 184))
    names = sorted(net.params)
    chosen = [net.params[n] for n in names]

    def loss(*_):
        return L.weighted_nll(forward(net, image, mode="train", seed=seed), labels)

    return grad_check(loss, chosen + [image], samples=samples, seed=seed)


def run_suite(seeds=range(5), network=True, width=4):
    results = []
    for seed in seeds:
        for name, fn, inputs in layer_cases(seed):
            results.append(CheckResult(name, seed, grad_check(fn, inputs), LAYER_TOL))
        if network:
            results.append(CheckResult(f"cbnet width {width}", seed, network_case(seed, width), NETWORK_TOL))
    return results


def format_results(results):
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.ok else 'FAIL'} {r.name:<24} seed={r.seed} err={r.error:.3e} tol={r.tol:.0e}")
    return "\n".join(lines)
