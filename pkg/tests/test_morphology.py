import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbnet.errors import ConfigError
from cbnet.morphology import (connected_components, dilate, disk_element, erode, fill_holes, morphology, opening,
                              square_element)

from oracles import brute_components, brute_dilate, brute_erode

random_masks = st.tuples(st.integers(0, 2 ** 32 - 1), st.integers(4, 24), st.integers(4, 24),
                         st.floats(0.2, 0.8)).map(
    lambda t: np.random.default_rng(t[0]).random((t[1], t[2])) < t[3])


def lattice_count(r):
    return sum(1 for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r)


@pytest.mark.parametrize("r,n", [(1, 5), (2, 13), (4, 49), (5, 81)])
def test_disk_sizes(r, n):
    assert len(disk_element(r)) == n == lattice_count(r)


def test_disk_radius_zero_rejected():
    with pytest.raises(ConfigError):
        disk_element(0)


def test_erode_square_to_centre():
    m = np.zeros((9, 9), bool)
    m[2:7, 2:7] = True
    out = erode(m, disk_element(1))
    expected = np.zeros_like(m)
    expected[3:6, 3:6] = True
    assert np.array_equal(out, expected)


def test_dilate_point_is_cross():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    assert dilate(m, disk_element(1)).sum() == 5


def test_border_counts_as_background():
    assert not erode(np.ones((6, 6), bool), disk_element(1))[0].any()


@given(random_masks, st.integers(1, 3))
def test_erode_dilate_match_definition(mask, r):
    el = disk_element(r)
    assert np.array_equal(erode(mask, el), brute_erode(mask, el))
    assert np.array_equal(dilate(mask, el), brute_dilate(mask, el))


@given(random_masks, st.integers(1, 3))
def test_opening_idempotent_and_antiextensive(mask, r):
    el = disk_element(r)
    once = opening(mask, el)
    assert np.array_equal(opening(once, el), once)
    assert not (once & ~mask).any()
    assert np.array_equal(morphology(mask, el, "open"), once)


@given(random_masks, st.sampled_from([4, 8]))
def test_components_match_flood_fill(mask, conn):
    lab = connected_components(mask, conn)
    ref, n = brute_components(mask, conn)
    assert lab.count == n and np.array_equal(lab.labels, ref)


def test_fill_holes_fills_only_enclosed():
    m = np.zeros((9, 9), bool)
    m[1:6, 1:6] = True
    m[3, 3] = False               # enclosed hole
    m[1:6, 7] = True
    m[0:3, 8] = False
    out = fill_holes(m)
    assert out[3, 3] and not out[0, 0] and out.sum() == m.sum() + 1


def test_fill_holes_diagonal_leak_is_a_hole():
    # background connectivity is 4, so a diagonal gap does not connect to the outside
    m = np.zeros((5, 5), bool)
    m[1:4, 1:4] = True
    m[2, 2] = False
    m[1, 1] = False
    assert fill_holes(m)[2, 2]


def test_square_element_even_rejected():
    with pytest.raises(ConfigError):
        square_element(4)
