import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbnet.labelgen import generate_labels, outer_medial_axis, separation_rule
from cbnet.layers import BACKGROUND, CELL, FUZZY
from cbnet.morphology import connected_components, dilate, disk_element, erode

from oracles import brute_dilate, brute_erode, brute_skiz


def blob_annotation(seed, shape=(40, 40)):
    rng = np.random.default_rng(seed)
    A = np.zeros(shape, bool)
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    for _ in range(rng.integers(1, 6)):
        cy, cx = rng.uniform(0, shape[0]), rng.uniform(0, shape[1])
        r = rng.uniform(2.5, 6)
        A |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return A


def test_empty_annotation_is_all_background():
    labels, art = generate_labels(np.zeros((10, 12), bool))
    assert np.all(labels == BACKGROUND) and not art.axis.any()


def test_single_square():
    A = np.zeros((21, 21), bool)
    A[8:13, 8:13] = True
    labels, art = generate_labels(A)
    E = brute_erode(A, disk_element(1))
    D = brute_dilate(A, disk_element(4))
    assert np.array_equal(labels == CELL, E) and E.sum() == 9
    assert np.array_equal(labels == FUZZY, D & ~E)
    assert np.array_equal(labels == BACKGROUND, ~D)


def test_two_squares_axis_at_midline():
    E = np.zeros((9, 19), bool)
    E[3:6, 3:6] = True
    E[3:6, 13:16] = True
    M = outer_medial_axis(E)
    assert M[:, 9].all()
    assert np.array_equal(M, brute_skiz(E))


def test_single_component_no_axis():
    E = np.zeros((8, 8), bool)
    E[2:5, 2:5] = True
    assert not outer_medial_axis(E).any()
    assert not outer_medial_axis(np.zeros((8, 8), bool)).any()


def test_axis_beats_fuzzy_ring():
    A = np.zeros((15, 30), bool)
    A[4:11, 4:11] = True
    A[4:11, 17:24] = True          # 6 px gap: rings overlap
    labels, art = generate_labels(A)
    between = art.axis & art.dilated
    assert between.any() and np.all(labels[between] == BACKGROUND)


def test_vanishing_component_restored_with_warning():
    A = np.zeros((12, 12), bool)
    A[2, 2] = True
    A[5:10, 5:10] = True
    with pytest.warns(RuntimeWarning, match="vanish"):
        labels, _ = generate_labels(A)
    assert labels[2, 2] == CELL


def test_separation_rule_exact_boundary():
    # sqrt(8) - sqrt(2) == sqrt(2) exactly: on the band
    assert separation_rule(2, 8)
    assert not separation_rule(2, 9)
    assert separation_rule(5, 5)


@given(st.integers(0, 10 ** 6))
def test_invariants_and_oracle(seed):
    A = blob_annotation(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        labels, art = generate_labels(A)
    E, D, M = art.eroded, art.dilated, art.axis
    assert not (E & ~A).any() and not (A & ~D).any()
    assert not (M & E).any()
    assert set(np.unique(labels)) <= {CELL, BACKGROUND, FUZZY}
    assert np.array_equal(labels == CELL, E)
    assert np.array_equal(labels == BACKGROUND, (M | ~D) & ~E)
    assert np.array_equal(M, brute_skiz(E))


@given(st.integers(0, 10 ** 6))
def test_distinct_cells_never_touch_through_non_background(seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        labels, art = generate_labels(blob_annotation(seed))
    cells = connected_components(art.eroded)
    region = connected_components(labels != BACKGROUND)
    for r in range(1, region.count + 1):
        ids = np.unique(cells.labels[(region.labels == r) & (cells.labels > 0)])
        assert len(ids) <= 1


def test_independent_of_component_order():
    A = blob_annotation(3)
    flipped, _ = generate_labels(A[::-1, ::-1].copy())
    labels, _ = generate_labels(A)
    assert np.array_equal(labels, flipped[::-1, ::-1])
