import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbnet import layers as L
from cbnet.errors import ConfigError, DegenerateError, ShapeError
from cbnet.layers import BatchNormState
from cbnet.tensor import Tape, Tensor


def test_valid_conv_shrinks_by_kernel_minus_one():
    x = Tensor(np.ones((2, 10, 9)))
    w = Tensor(np.ones((3, 2, 3, 3)))
    assert L.conv2d(x, w, Tensor(np.zeros(3))).shape == (3, 8, 7)


def test_same_conv_keeps_extent():
    x = Tensor(np.ones((2, 10, 9)))
    w = Tensor(np.ones((3, 2, 7, 7)))
    assert L.conv2d(x, w, Tensor(np.zeros(3)), padding="same").shape == (3, 10, 9)


def test_conv_down_on_odd_extent_names_block():
    x = Tensor(np.ones((1, 9, 8)))
    w = Tensor(np.ones((1, 1, 2, 2)))
    with pytest.raises(ShapeError, match="encoder2"):
        L.conv2d(x, w, Tensor(np.zeros(1)), stride=2, block="encoder2")


def test_conv_down_and_deconv_are_adjoint():
    # <down(x), y> = <x, up(y)> when the deconv uses the same kernel with channels swapped
    rng = np.random.default_rng(7)
    k = rng.normal(size=(5, 3, 2, 2))
    x = rng.normal(size=(3, 8, 6))
    y = rng.normal(size=(5, 4, 3))
    down = L.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(5)), stride=2).data
    up = L.deconv2x2(Tensor(y), Tensor(k.transpose(1, 0, 2, 3)), Tensor(np.zeros(3))).data
    assert abs(np.sum(down * y) - np.sum(x * up)) <= 1e-10


def test_deconv_doubles_extent():
    out = L.deconv2x2(Tensor(np.ones((4, 3, 5))), Tensor(np.ones((2, 4, 2, 2))), Tensor(np.zeros(2)))
    assert out.shape == (2, 6, 10)


def test_bilinear_corner_aligned_values():
    out = L.resize(Tensor(np.array([[[0.0, 1.0]]])), "bilinear-up", 2)
    assert np.allclose(out.data[0, 0], [0, 1 / 3, 2 / 3, 1], atol=1e-12)


def test_bilinear_half_pixel_is_shift_equivariant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 12, 12))
    whole = L.upsample_bilinear(Tensor(x), 4).data
    part = L.upsample_bilinear(Tensor(x[:, 3:9, 2:10]), 4).data
    # away from the clamped borders the two agree exactly
    assert np.array_equal(whole[:, 3 * 4 + 2:9 * 4 - 2, 2 * 4 + 2:10 * 4 - 2], part[:, 2:-2, 2:-2])


def test_bilinear_preserves_constants():
    out = L.upsample_bilinear(Tensor(np.full((1, 3, 4), 2.5)), 8)
    assert np.allclose(out.data, 2.5)


def test_maxpool_needs_divisible_extent():
    with pytest.raises(ShapeError):
        L.resize(Tensor(np.ones((1, 5, 4))), "maxpool-down", 2)


def test_maxpool_and_resize_modes():
    x = Tensor(np.arange(16.0).reshape(1, 4, 4))
    assert np.array_equal(L.resize(x, "maxpool-down", 2).data[0], [[5, 7], [13, 15]])
    assert L.resize(x, "bilinear-up", 2).shape == (1, 8, 8)


def test_center_crop_floor_offsets():
    x = Tensor(np.arange(25.0).reshape(1, 5, 5))
    out = L.center_crop(x, (2, 2)).data[0]
    assert np.array_equal(out, [[6, 7], [11, 12]])
    assert L.crop_offsets(5, 2) == 1


def test_center_crop_rejects_growth():
    with pytest.raises(ShapeError):
        L.center_crop(Tensor(np.ones((1, 3, 3))), (4, 3))


def test_concat_shape_mismatch():
    with pytest.raises(ShapeError):
        L.concat_channels([Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 3, 4)))])


def test_batch_norm_train_statistics():
    rng = np.random.default_rng(0)
    sigma = 3.0
    state = BatchNormState.create(4)
    x = Tensor(rng.normal(2.0, sigma, size=(4, 64, 64)))
    out = L.batch_norm(x, state, "train").data
    var = x.data.var(axis=(1, 2))
    assert np.allclose(out.mean(axis=(1, 2)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(1, 2)), var / (var + 1e-5), atol=1e-6)
    # running estimates moved 10% of the way from (0, 1)
    assert np.allclose(state.running_mean, 0.1 * x.data.mean(axis=(1, 2)))


def test_batch_norm_eval_is_affine_and_leaves_state():
    state = BatchNormState.create(2)
    state.running_mean[:] = [1.0, -1.0]
    state.running_var[:] = [4.0, 0.25]
    x = Tensor(np.ones((2, 3, 3)))
    out = L.batch_norm(x, state, "eval").data
    assert np.allclose(out[0], 0.0)
    assert np.allclose(out[1], 2.0 / np.sqrt(0.25 + 1e-5))
    assert list(state.running_mean) == [1.0, -1.0]


def test_batch_norm_train_needs_two_pixels():
    with pytest.raises(DegenerateError):
        L.batch_norm(Tensor(np.ones((2, 1, 1))), BatchNormState.create(2), "train")


def test_relu_subgradient_zero_at_zero():
    x = Tensor(np.array([[[-1.0, 0.0, 2.0]]]), requires_grad=True)
    with Tape() as tape:
        loss = L.relu(x)
        from cbnet.tensor import tsum
        loss = tsum(loss)
    tape.backward(loss)
    assert np.array_equal(x.grad, [[[0.0, 0.0, 1.0]]])


def test_dropout_fraction_over_many_channels():
    keep = L.dropout_mask(10_000, 0.5, seed=0)
    assert abs(1 - keep.mean() - 0.5) <= 0.02


def test_dropout_zeroes_whole_channels_and_rescales():
    x = Tensor(np.ones((64, 4, 4)))
    out = L.spatial_dropout(x, 0.5, seed=3).data
    per_channel = out.reshape(64, -1)
    assert np.all((per_channel == 0).all(axis=1) | (per_channel == 2.0).all(axis=1))


def test_dropout_eval_is_identity_and_rate_checked():
    x = Tensor(np.ones((2, 2, 2)))
    assert L.spatial_dropout(x, 0.5, mode="eval") is x
    with pytest.raises(ConfigError):
        L.spatial_dropout(x, 1.0, seed=0)


@given(st.integers(0, 10_000))
def test_log_softmax_rows_normalise(seed):
    x = np.random.default_rng(seed).normal(scale=50, size=(2, 5, 5))
    lp = L.log_softmax_channels(Tensor(x)).data
    assert np.all(np.isfinite(lp))
    assert np.allclose(np.exp(lp).sum(axis=0), 1.0)


def test_log_softmax_is_stable_for_huge_logits():
    lp = L.log_softmax_channels(Tensor(np.array([[[1e4]], [[-1e4]]]))).data
    assert np.isfinite(lp).all() and lp[0, 0, 0] == 0.0


def test_weighted_nll_value_and_fuzzy_ignored():
    lp = np.log(np.array([[[0.2, 0.5, 0.9]], [[0.8, 0.5, 0.1]]]))
    labels = np.array([[1, 2, 3]])
    loss = L.weighted_nll(Tensor(lp), labels).item()
    expected = -(0.25 * np.log(0.8) + 0.75 * np.log(0.5)) / (0.25 + 0.75)
    assert np.isclose(loss, expected, rtol=1e-14)


def test_weighted_nll_errors():
    lp = Tensor(np.log(np.full((2, 2, 2), 0.5)))
    with pytest.raises(DegenerateError):
        L.weighted_nll(lp, np.full((2, 2), 3))
    with pytest.raises(ConfigError):
        L.weighted_nll(lp, np.ones((2, 2)), class_weights=(0.25, 0.75, 0.1))
    with pytest.raises(ShapeError):
        L.weighted_nll(lp, np.ones((3, 2)))
