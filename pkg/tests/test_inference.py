import numpy as np
import pytest

from cbnet.errors import ShapeError
from cbnet.inference import predict_logp, predict_mask, predict_probability, tile_plan
from cbnet.model import ModelConfig, build_network, forward


@pytest.fixture(scope="module")
def net():
    return build_network(ModelConfig(base_width=4, seed=3))


@pytest.mark.parametrize("tile", [204, 236, 444])
def test_tiles_equal_whole_forward(net, tile):
    img = np.random.default_rng(0).random((2, 204, 236))
    whole = forward(net, img).data
    tiled = predict_logp(net, img, tile)
    assert tiled.shape == (2, 204, 236)
    assert np.array_equal(tiled[:, 92:112, 92:144], whole)


def test_tile_plan_is_on_16_grid():
    ys, xs, (sy, sx) = tile_plan((300, 257), 236)
    assert sy == sx == 48
    assert all(y % 16 == 0 for y in ys) and all(x % 16 == 0 for x in xs)
    assert ys[0] + 92 <= 0 and ys[-1] + 92 + sy >= 300


def test_infeasible_tile_rejected(net):
    with pytest.raises(ShapeError):
        predict_logp(net, np.zeros((2, 50, 50)), 200)
    with pytest.raises(ShapeError):
        tile_plan((50, 50), 188)          # output window too small for a 16-pixel stride


def test_small_image_probability_and_mask(net):
    img = np.random.default_rng(1).random((2, 40, 30))
    p = predict_probability(net, img)
    assert p.shape == (40, 30) and np.all((p >= 0) & (p <= 1))
    assert predict_mask(net, img).dtype == bool
