from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bscale_recog import rotations as rot

angles = st.floats(-60, 60)


def test_axis_rotations_are_right_handed():
    np.testing.assert_allclose(rot.rot_z(90) @ [1, 0, 0], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(rot.rot_x(90) @ [0, 1, 0], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(rot.rot_y(90) @ [0, 0, 1], [1, 0, 0], atol=1e-12)


def test_euler_composition_order():
    h, a, b = 10.0, -20.0, 30.0
    np.testing.assert_allclose(rot.from_euler((h, a, b)), rot.rot_x(h) @ rot.rot_y(a) @ rot.rot_z(b), atol=1e-12)


@given(angles, angles, angles)
def test_euler_round_trip(h, a, b):
    np.testing.assert_allclose(rot.to_euler(rot.from_euler((h, a, b))), (h, a, b), atol=1e-8)


def test_single_axis_decomposition():
    np.testing.assert_allclose(rot.to_euler(rot.rot_z(7)), (0, 0, 7), atol=1e-10)
    np.testing.assert_allclose(rot.to_euler(rot.rot_x(-4)), (-4, 0, 0), atol=1e-10)


def test_gimbal_flag():
    assert rot.near_gimbal(rot.rot_y(90))
    assert rot.near_gimbal(rot.rot_y(-89.95))
    assert not rot.near_gimbal(rot.rot_y(89.8))
    assert not rot.near_gimbal(np.eye(3))


def test_is_rotation():
    assert rot.is_rotation(rot.rot_z(33))
    assert not rot.is_rotation(np.diag([1.0, 1.0, -1.0]))
    assert not rot.is_rotation(2 * np.eye(3))


def test_mean_of_symmetric_pair_is_identity():
    np.testing.assert_allclose(rot.mean_rotation([rot.rot_z(10), rot.rot_z(-10)]), np.eye(3), atol=1e-12)


def test_mean_of_one_rotation_is_itself():
    R = rot.from_euler((3, 4, 5))
    assert np.array_equal(rot.mean_rotation([R]), R)


def test_mean_of_empty_set_rejected():
    with pytest.raises(ValueError):
        rot.mean_rotation([])


@settings(max_examples=40)
@given(st.lists(st.tuples(angles, angles, angles), min_size=2, max_size=6), st.randoms())
def test_mean_is_order_invariant(eulers, rnd):
    Rs = [rot.from_euler(e) for e in eulers]
    shuffled = list(Rs)
    rnd.shuffle(shuffled)
    M = rot.mean_rotation(Rs)
    assert rot.is_rotation(M)
    np.testing.assert_allclose(rot.mean_rotation(shuffled), M, atol=1e-12)


@settings(max_examples=40)
@given(st.tuples(angles, angles, angles), st.tuples(*[st.floats(-5, 5)] * 3))
def test_mean_of_symmetric_spread_about_center(center, delta):
    C = rot.from_euler(center)
    D = rot.from_euler(delta)
    np.testing.assert_allclose(rot.mean_rotation([D @ C, D.T @ C]), C, atol=1e-9)
