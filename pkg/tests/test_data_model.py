import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geovis.data_model import (EntitySequence, EntityTrack, NormalizationSpec, Segment, derive_geometric_features,
                               extract_segments, rasterize)
from geovis.errors import DataError

HD = NormalizationSpec(1920, 1080)


def track(kp, mask=None, kind="human", eid="h0"):
    kp = np.asarray(kp, dtype=np.float32)
    T, K = kp.shape[:2]
    mask = np.ones((T, K), bool) if mask is None else mask
    return EntityTrack(eid, kind, kp, mask, np.zeros((T, 3)), np.zeros(T, int), np.ones(T, bool))


def seq(*tracks):
    return EntitySequence("v", list(tracks))


def test_stationary_keypoint():
    f = derive_geometric_features(seq(track(np.full((4, 1, 2), [960, 540]))), HD)
    np.testing.assert_array_equal(f.values[:, 0, 0], np.tile([0.5, 0.5, 0, 0], (4, 1)))


def test_moving_keypoint_velocity():
    # (0,0) -> (192,108) at 1920x1080: positions 0.1, backward difference 0.1
    f = derive_geometric_features(seq(track([[[0, 0]], [[192, 108]]])), HD)
    np.testing.assert_allclose(f.values[1, 0, 0], [0.1, 0.1, 0.1, 0.1], atol=1e-12)
    np.testing.assert_array_equal(f.values[0, 0, 0, 2:], [0, 0])


def test_masked_keypoint_is_zero():
    mask = np.array([[True, False]] * 3)
    f = derive_geometric_features(seq(track(np.full((3, 2, 2), 77.0), mask)), HD)
    assert not f.mask[:, 0, 1].any()
    np.testing.assert_array_equal(f.values[:, 0, 1], 0)


def test_velocity_needs_both_frames_valid():
    mask = np.array([[True], [False], [True]])
    f = derive_geometric_features(seq(track([[[0, 0]], [[10, 10]], [[192, 108]]], mask)), HD)
    np.testing.assert_array_equal(f.values[2, 0, 0, 2:], [0, 0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-500, 500), st.floats(-500, 500), st.integers(0, 2**31 - 1))
def test_translation_leaves_velocity_unchanged(dx, dy, seed):
    kp = np.random.default_rng(seed).uniform(0, 1000, (5, 3, 2))
    a = derive_geometric_features(seq(track(kp)), HD).values[..., 2:]
    b = derive_geometric_features(seq(track(kp + np.array([dx, dy]))), HD).values[..., 2:]
    np.testing.assert_allclose(a, b, atol=1e-6)


@pytest.mark.parametrize("labels,expected", [
    ([0, 0, 1, 1, 1], [(0, 1, 0), (2, 4, 1)]),
    ([0], [(0, 0, 0)]),
    ([0, 1, 0], [(0, 0, 0), (1, 1, 1), (2, 2, 0)]),
])
def test_extract_segments(labels, expected):
    assert extract_segments(labels) == [Segment(*s) for s in expected]


def test_masked_frames_split_runs():
    assert extract_segments([1, 1, 1, 1], [True, False, True, True]) == [Segment(0, 0, 1), Segment(2, 3, 1)]


def test_extract_segments_rejects_empty():
    with pytest.raises(DataError):
        extract_segments([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.data())
def test_segments_round_trip(labels, data):
    mask = data.draw(st.lists(st.booleans(), min_size=len(labels), max_size=len(labels)))
    labels, mask = np.array(labels), np.array(mask)
    back = rasterize(extract_segments(labels, mask), len(labels))
    np.testing.assert_array_equal(back[mask], labels[mask])
    assert (back[~mask] == -1).all()


def test_empty_sequence_rejected():
    with pytest.raises(DataError, match="empty"):
        derive_geometric_features(seq(track(np.zeros((0, 1, 2)))), HD)


def test_track_validation():
    with pytest.raises(DataError):
        EntityTrack("x", "robot", np.zeros((2, 1, 2)), np.ones((2, 1), bool), np.zeros((2, 1)), np.zeros(2),
                    np.ones(2, bool))
    with pytest.raises(DataError, match="frames"):
        EntityTrack("x", "human", np.zeros((2, 1, 2)), np.ones((2, 1), bool), np.zeros((3, 1)), np.zeros(2),
                    np.ones(2, bool))


def test_sequence_needs_a_human():
    with pytest.raises(DataError, match="human"):
        seq(track(np.zeros((2, 1, 2)), kind="object", eid="o0"))


def test_subsample_and_cap():
    s = seq(track(np.zeros((6, 1, 2))), track(np.zeros((6, 1, 2)), kind="object", eid="o0"),
            track(np.zeros((6, 1, 2)), kind="object", eid="o1"))
    assert s.subsample(2).T == 3
    assert [e.entity_id for e in s.cap_objects(1).entities] == ["h0", "o0"]
