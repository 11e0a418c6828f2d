import numpy as np
import pytest
from hypothesis import given, strategies as st

from refpcc.errors import ParameterError
from refpcc.geom import Aabb, PointCloud, Pose, bounding_box, squared_distance

coords = st.floats(-1e6, 1e6, allow_nan=False)
point = st.tuples(coords, coords, coords)


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 0), (0, 0, 0), 0.0),
    ((0, 0, 0), (0, 0, 0.4), 0.4 * 0.4),
    ((1, 2, 3), (4, 6, 3), 25.0),
])
def test_squared_distance_examples(a, b, expected):
    assert squared_distance(a, b) == expected


@given(point, point)
def test_squared_distance_symmetric_and_zero_iff_equal(a, b):
    assert squared_distance(a, b) == squared_distance(b, a)
    assert squared_distance(a, a) == 0.0
    if squared_distance(a, b) == 0.0:
        # underflow aside, zero distance means identical coordinates
        assert all(abs(x - y) < 1e-150 for x, y in zip(a, b))


def test_bounding_box_examples():
    assert bounding_box(PointCloud(np.zeros((0, 3)))).is_empty
    box = bounding_box(PointCloud([[0, 0, 0]]))
    assert box == Aabb([0, 0, 0], [0, 0, 0])
    box = bounding_box(PointCloud([[-1, 0, 2], [3, -2, 0]]))
    assert box == Aabb([-1, -2, 0], [3, 0, 2])


@given(st.lists(point, min_size=1, max_size=30), point)
def test_bounding_box_grows_monotonically(pts, p):
    before = bounding_box(PointCloud(pts))
    after = bounding_box(PointCloud(pts + [p]))
    assert after.contains(np.vstack([before.min, before.max, p]))


def test_empty_box_is_not_garbage():
    box = Aabb.empty()
    assert box.is_empty and box.diagonal == 0.0
    assert not box.contains([[0, 0, 0]])


def test_cloud_rejects_non_finite_points():
    with pytest.raises(ParameterError, match="point 1"):
        PointCloud([[0, 0, 0], [np.nan, 0, 0]])
    with pytest.raises(ParameterError):
        PointCloud([[np.inf, 0, 0]])


def test_cloud_is_immutable_and_allows_duplicates():
    cloud = PointCloud([[1, 2, 3], [1, 2, 3]])
    assert len(cloud) == 2
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 5


def test_pose_requires_unit_quaternion():
    Pose((0, 0, 0), (0, 0, 0, 1 + 5e-7))
    with pytest.raises(ParameterError):
        Pose((0, 0, 0), (0, 0, 0, 1.01))
    with pytest.raises(ParameterError):
        Pose((0, np.nan, 0))
