"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape nothing is recorded, which
is how inference runs.
"""
import threading

import numpy as np

from .errors import ContractError, ShapeError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations run, so the list is already in
    topological order; :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.nodes = []
        self._outputs = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, inputs, output, backward):
        self.nodes.append(_Node(tuple(inputs), output, backward))
        self._outputs.add(id(output))

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise ContractError(f"backward() needs a scalar loss, got shape {shape}")
        if id(loss) not in self._outputs:
            if loss.requires_grad:
                loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
                return
            raise ContractError("loss was not produced on this tape")
        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in self._outputs:
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
                else:
                    t.grad = np.array(gi, dtype=np.float64) if t.grad is None else t.grad + gi


def record(output, inputs, backward):
    """Attach ``backward`` (``grad_out -> tuple of input grads``) to ``output``."""
    tape = active_tape()
    if tape is None:
        return output
    if not any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.record(inputs, output, backward)
    return output


def backward(loss, tape):
    tape.backward(loss)


def _wants(t):
    return isinstance(t, Tensor) and t.requires_grad


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_tensor(shape, fill="zeros", value=0.0, scale=1.0, seed=None, requires_grad=False, name=None):
    """Allocate a tensor.

    ``fill`` is ``"zeros"``, ``"constant"`` (uses ``value``) or ``"uniform"``
    (seeded, in ``[-scale, scale]``).
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if fill == "zeros":
        data = np.zeros(shape)
    elif fill == "constant":
        data = np.full(shape, float(value))
    elif fill == "uniform":
        if seed is None:
            raise ContractError("seeded-uniform fill needs a seed")
        data = np.random.default_rng(seed).uniform(-scale, scale, size=shape)
    else:
        raise ContractError(f"unknown fill {fill!r}")
    return Tensor(data, requires_grad=requires_grad, name=name)


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (g * b.data if _wants(a) else None,
                                          g * a.data if _wants(b) else None))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return record(out, (a,), lambda g: (g * c,))


def elementwise(op, a, b):
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "scale":
        return scale(a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def tsum(a):
    a = as_tensor(a)
    out = Tensor(np.sum(a.data))
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def dot(a, w):
    """Sum of ``a * w`` with ``w`` a constant array; handy for gradient tests."""
    a = as_tensor(a)
    w = np.asarray(w, dtype=np.float64)
    out = Tensor(np.sum(a.data * w))
    return record(out, (a,), lambda g: (g * w,))


def grad_check(fn, inputs, step=1e-5, samples=None, seed=0):
    """Largest relative disagreement between tape gradients and central differences.

    The error for one element is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``samples`` limits the check to that many randomly chosen elements in total
    (spread over all inputs); ``fn`` must be deterministic.
    """
    inputs = list(inputs)
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            out = fn(*inputs)
        if not isinstance(out, Tensor) or out.size != 1:
            raise ContractError(f"grad_check needs a scalar-valued fn, got shape {getattr(out, 'shape', None)}")
        tape.backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

        positions = [(k, i) for k, t in enumerate(inputs) for i in range(t.size)]
        if samples is not None and samples < len(positions):
            rng = np.random.default_rng(seed)
            pick = rng.choice(len(positions), size=samples, replace=False)
            positions = [positions[p] for p in sorted(pick)]

        worst = 0.0
        for k, i in positions:
            data = inputs[k].data
            idx = np.unravel_index(i, data.shape)
            orig = data[idx]
            data[idx] = orig + step
            f_plus = fn(*inputs).item()
            data[idx] = orig - step
            f_minus = fn(*inputs).item()
            data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[k].reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
        return worst
    finally:
        for t, (rg, g) in zip(inputs, saved):
            t.requires_grad = rg
            t.grad = g
