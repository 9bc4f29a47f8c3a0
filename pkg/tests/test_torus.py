from __future__ import annotations

import numpy as np
import pytest

from tools.errors import PreconditionError
from tools.torus import Stencils, TorusField, grid_points, neighbor_index


def test_grid_points_are_flattened_in_c_order() -> None:
    pts = grid_points(4, 2)

    assert pts.shape == (16, 2)
    assert np.allclose(pts[1], [0.0, 0.25])
    assert np.allclose(pts[4], [0.25, 0.0])


def test_neighbor_index_wraps_around() -> None:
    idx = neighbor_index(4, 1, axis=0)

    assert idx.tolist() == [1, 2, 3, 0]


def test_backward_difference_is_minus_transpose_of_forward() -> None:
    st = Stencils.build(8, 2)

    for axis in range(2):
        diff = st.backward[axis] + st.forward[axis].T
        assert abs(diff).max() < 1e-12


def test_centered_difference_of_sine_is_second_order() -> None:
    errors = []
    for n in (16, 32):
        st = Stencils.build(n, 2)
        pts = grid_points(n, 2)
        u = np.sin(2.0 * np.pi * pts[:, 0])
        exact = 2.0 * np.pi * np.cos(2.0 * np.pi * pts[:, 0])
        errors.append(np.max(np.abs(st.centered[0] @ u - exact)))

    assert errors[0] / errors[1] > 3.5


def test_interpolate_reproduces_nodes_and_is_periodic() -> None:
    n = 8
    pts = grid_points(n, 2)
    field = TorusField(n, 2, np.cos(2.0 * np.pi * pts[:, 0]) + pts[:, 1])

    assert np.allclose(field.interpolate(pts), field.values)
    assert np.allclose(field.interpolate(pts + 3.0), field.values)


def test_interpolate_is_multilinear_and_wraps() -> None:
    n = 8

    def f(p):
        return np.cos(2.0 * np.pi * p[:, 0]) + np.sin(2.0 * np.pi * p[:, 1]) ** 2

    field = TorusField(n, 2, f(grid_points(n, 2)))
    left = np.array([[3 / n, 2 / n], [7 / n, 5 / n]])
    right = np.array([[4 / n, 2 / n], [1.0, 5 / n]])
    rng = np.random.default_rng(0)

    assert np.allclose(field.interpolate(0.5 * (left + right)), 0.5 * (f(left) + f(right)))
    inside = field.interpolate(rng.uniform(-2.0, 2.0, (500, 2)))
    assert inside.min() >= field.values.min() - 1e-12
    assert inside.max() <= field.values.max() + 1e-12


def test_interpolate_keeps_component_shape() -> None:
    n = 4
    values = np.broadcast_to(np.eye(2), (n * n, 2, 2)).copy()
    field = TorusField(n, 2, values)

    out = field.interpolate(np.array([[0.1, 0.7], [0.33, 0.5]]))

    assert out.shape == (2, 2, 2)
    assert np.allclose(out, np.eye(2))


def test_weighted_mean() -> None:
    n = 4
    field = TorusField(n, 2, np.arange(16, dtype=float))
    weight = TorusField(n, 2, np.full(16, 2.0))

    assert field.mean() == pytest.approx(7.5)
    assert field.mean(weight) == pytest.approx(15.0)


def test_field_rejects_wrong_size_and_non_finite_values() -> None:
    with pytest.raises(PreconditionError):
        TorusField(4, 2, np.zeros(15))
    with pytest.raises(PreconditionError):
        TorusField(2, 2, np.array([0.0, np.nan, 0.0, 0.0]))
