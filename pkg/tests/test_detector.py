import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mtd2nn.detector import (DetectorLayout, LabelCodec, decide, default_codecs, default_layout,
                             encode_target, guess_task, ideal_reading, read, read_adjoint)


def test_default_layout_geometry():
    layout = default_layout(200, 200)
    assert layout.n_regions == 10
    assert all(r[2:] == (20, 20) for r in layout.regions)
    rows = sorted({r[0] for r in layout.regions})
    cols = sorted({r[1] for r in layout.regions})
    assert len(rows) == 2 and len(cols) == 5
    # centered: opposite margins differ by at most the one leftover pixel
    assert abs(cols[0] - (200 - (cols[-1] + 20))) <= 1
    assert abs(rows[0] - (200 - (rows[-1] + 20))) <= 1


def test_split_layout_cells():
    layout = default_layout(200, 200, sub_split=2)
    cells = layout.cells()
    assert len(cells) == 20
    assert all(c[2:] == (20, 10) for c in cells)


def test_layout_rejects_overlap_and_out_of_bounds():
    with pytest.raises(ValueError, match="overlap"):
        DetectorLayout(((0, 0, 4, 4), (2, 2, 4, 4)))
    layout = DetectorLayout(((0, 0, 4, 4), (10, 10, 4, 4)))
    with pytest.raises(ValueError, match="outside"):
        read(np.ones((12, 12)), layout)


def test_read_uniform_and_zero():
    layout = default_layout(200, 200)
    np.testing.assert_array_equal(read(np.ones((200, 200)), layout), np.full(10, 400.0))
    np.testing.assert_array_equal(read(np.zeros((200, 200)), layout), np.zeros(10))


def test_sub_split_partition_is_additive(rng):
    # dyadic values keep every partial sum exact in float64
    img = rng.integers(0, 2**20, (200, 200)) / 2**10
    whole = read(img, default_layout(200, 200))
    halves = read(img, default_layout(200, 200, sub_split=2))
    np.testing.assert_array_equal(halves.reshape(10, 2).sum(1), whole)
    img = rng.random((200, 200))
    halves = read(img, default_layout(200, 200, sub_split=2)).reshape(10, 2).sum(1)
    np.testing.assert_allclose(halves, read(img, default_layout(200, 200)), rtol=1e-13)


def test_read_adjoint_matches_dot_product(rng):
    layout = default_layout(40, 40, sub_split=2)
    img = rng.random((3, 40, 40))
    g = rng.normal(size=(3, layout.n_cells))
    lhs = np.sum(read(img, layout) * g)
    rhs = np.sum(img * read_adjoint(g, layout, (40, 40)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_decide_examples():
    two = default_codecs(2)
    reading = np.arange(10.0) + 5
    reading[6] = 0.0
    assert decide(reading, two[0]) == 6
    reading = np.ones(10)
    reading[7] = 3.0
    assert decide(reading, two[1]) == 7


def test_decide_ties_lowest_index():
    codec = default_codecs(2)[1]
    assert decide(np.array([0, 2, 2, 1, 0, 0, 0, 0, 0, 0.0]), codec) == 1
    assert decide(np.zeros(10), default_codecs(2)[0]) == 0


def test_decide_length_mismatch():
    with pytest.raises(ValueError):
        decide(np.zeros(20), default_codecs(2)[0])


@settings(max_examples=60, deadline=None)
@given(values=arrays(np.int64, 10, elements=st.integers(-1000, 1000)),
       c=st.integers(1, 1000), s=st.integers(1, 100))
def test_decide_invariant_to_increasing_maps(values, c, s):
    values = values.astype(np.float64)
    for codec in default_codecs(2):
        base = decide(values, codec)
        assert decide(values + c, codec) == base
        assert decide(values * s, codec) == base
        assert decide(np.exp(values / 1e3), codec) == base


def test_encode_targets_two_task():
    two = default_codecs(2)
    np.testing.assert_array_equal(encode_target(two[0], 9), [1] * 9 + [0])
    np.testing.assert_array_equal(encode_target(two[1], 9), [0] * 9 + [1])


def test_encode_targets_four_task():
    four = default_codecs(4)
    expected = {
        0: [0] * 18 + [1, 0],
        1: [0] * 19 + [1],
        2: [1] * 18 + [0, 1],
        3: [1] * 19 + [0],
    }
    for t, pattern in expected.items():
        np.testing.assert_array_equal(encode_target(four[t], 9), pattern)


def test_encode_target_rejects_out_of_range():
    with pytest.raises(ValueError):
        encode_target(default_codecs(2)[0], 10)


def test_codecs_are_distinguishable():
    for n in (2, 3, 4, 6):
        codecs = default_codecs(n)
        signatures = {(c.polarity, c.sub_index) for c in codecs}
        assert len(signatures) == n


@pytest.mark.parametrize("n_tasks", [1, 2, 3, 4])
def test_codec_round_trip_exhaustive(n_tasks):
    for codec, label in itertools.product(default_codecs(n_tasks), range(10)):
        assert decide(ideal_reading(codec, label), codec) == label


def test_batched_encode_and_decide():
    codec = default_codecs(4)[3]
    labels = np.arange(10)
    assert np.array_equal(decide(encode_target(codec, labels), codec), labels)


def test_invalid_codec():
    with pytest.raises(ValueError):
        LabelCodec(0, "median")


def test_guess_task_separates_ideal_patterns():
    codecs = default_codecs(2)
    for t, codec in enumerate(codecs):
        for label in range(10):
            reading = 5 + ideal_reading(codec, label)
            assert guess_task(reading, codecs) in range(2)
