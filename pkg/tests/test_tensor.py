import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cbnet.errors import ContractError, ShapeError
from cbnet.tensor import Tape, Tensor, add, backward, dot, elementwise, grad_check, make_tensor, mul, scale, tsum

finite = st.floats(-100, 100, allow_nan=False)


def test_make_tensor_fills():
    assert np.all(make_tensor((2, 3)).data == 0)
    assert np.all(make_tensor((2, 3), fill="constant", value=1.5).data == 1.5)
    a = make_tensor((4, 5), fill="uniform", scale=0.1, seed=3).data
    b = make_tensor((4, 5), fill="uniform", scale=0.1, seed=3).data
    assert np.array_equal(a, b) and np.all(np.abs(a) <= 0.1)


def test_make_tensor_rejects_empty_extent():
    with pytest.raises(ShapeError):
        make_tensor((0, 3))


def test_add_and_sum_gradients_are_ones():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.full((3, 4), 2.0), requires_grad=True)
    with Tape() as tape:
        loss = tsum(add(a, b))
    backward(loss, tape)
    assert np.array_equal(a.grad, np.ones((3, 4)))
    assert np.array_equal(b.grad, np.ones((3, 4)))


def test_mul_gradient_is_other_operand():
    a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    b = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(a, b))
    tape.backward(loss)
    assert np.array_equal(a.grad, b.data)
    assert np.array_equal(b.grad, a.data)


def test_reused_leaf_accumulates():
    a = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(add(mul(a, a), scale(a, 3.0)))
    tape.backward(loss)
    assert np.allclose(a.grad, 2 * a.data + 3)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_no_recording_outside_tape():
    a = Tensor(np.ones(3), requires_grad=True)
    out = tsum(a)                      # no tape active: plain evaluation
    assert out.item() == 3.0
    with Tape() as tape:
        pass
    with pytest.raises(ContractError):
        tape.backward(out)


def test_backward_needs_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = scale(a, 2.0)
    with pytest.raises(ContractError):
        tape.backward(out)


def test_grad_check_flags_a_wrong_gradient():
    from cbnet.tensor import record

    def bad_square(x):
        out = Tensor(x.data ** 2)
        return record(out, (x,), lambda g: (g * x.data,))   # missing factor 2

    x = Tensor(np.array([1.0, 2.0]))
    assert grad_check(lambda x: tsum(bad_square(x)), [x]) > 0.1


@given(arrays(np.float64, st.integers(1, 6), elements=finite), arrays(np.float64, st.integers(1, 6), elements=finite))
def test_elementwise_binary_grads(a, b):
    n = min(a.size, b.size)
    a, b = Tensor(a[:n].copy()), Tensor(b[:n].copy())
    for op in ("add", "sub", "mul"):
        w = np.linspace(-1, 1, n)
        assert grad_check(lambda x, y: dot(elementwise(op, x, y), w), [a, b]) <= 1e-6


@given(arrays(np.float64, (3, 4), elements=finite))
def test_sum_is_linear(x):
    t = Tensor(x)
    assert np.isclose(tsum(scale(t, 2.0)).item(), 2 * tsum(t).item(), rtol=1e-12, atol=1e-9)
