"""Uniform periodic grids on the unit torus and the sparse stencils built on them.

Nodes are x_k = k/n per axis, flattened in C order of the multi-index
(k_1, ..., k_d). Every difference operator is periodic, so summation by parts
holds exactly on the grid and the transpose of a stencil is its discrete
adjoint for the plain nodal inner product.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from tools.errors import PreconditionError


def grid_points(n: int, dim: int) -> np.ndarray:
    """Return the n**dim nodes of the periodic grid as an (N, dim) array."""
    axes = [np.arange(n) / n] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def neighbor_index(n: int, dim: int, axis: int, shift: int = 1) -> np.ndarray:
    """Flat index of the node at k + shift*e_axis for every node k."""
    idx = np.arange(n ** dim).reshape((n,) * dim)
    return np.roll(idx, -shift, axis=axis).ravel()


def shift_operator(n: int, dim: int, axis: int) -> sp.csr_matrix:
    """Sparse P with (P u)_k = u_{k+e_axis}."""
    size = n ** dim
    cols = neighbor_index(n, dim, axis)
    return sp.csr_matrix((np.ones(size), (np.arange(size), cols)), shape=(size, size))


@dataclass(frozen=True)
class Stencils:
    """Forward, backward and centered periodic differences along each axis."""

    n: int
    dim: int
    forward: Tuple[sp.csr_matrix, ...]
    backward: Tuple[sp.csr_matrix, ...]
    centered: Tuple[sp.csr_matrix, ...]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @classmethod
    def build(cls, n: int, dim: int) -> "Stencils":
        size = n ** dim
        eye = sp.identity(size, format="csr")
        fwd, bwd, ctr = [], [], []
        for axis in range(dim):
            shift = shift_operator(n, dim, axis)
            fwd.append(((shift - eye) * n).tocsr())
            bwd.append(((eye - shift.T) * n).tocsr())
            ctr.append(((shift - shift.T) * (0.5 * n)).tocsr())
        return cls(n=n, dim=dim, forward=tuple(fwd), backward=tuple(bwd), centered=tuple(ctr))

    def face_average(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Average of a nodal field onto the faces k + e_axis/2."""
        return 0.5 * (values + values[neighbor_index(self.n, self.dim, axis)])


@dataclass(frozen=True)
class TorusField:
    """Grid-sampled periodic field; values has shape (n**dim, *components)."""

    n: int
    dim: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.n ** self.dim:
            raise PreconditionError(
                f"field has {self.values.shape[0]} nodes, expected {self.n ** self.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise PreconditionError("torus field contains non-finite values")

    @property
    def size(self) -> int:
        return self.n ** self.dim

    def mean(self, weight: Optional["TorusField"] = None) -> np.ndarray:
        """Quadrature mean (nodal arithmetic mean), optionally weighted by a density."""
        if weight is None:
            return self.values.mean(axis=0)
        w = weight.values.reshape((-1,) + (1,) * (self.values.ndim - 1))
        return (self.values * w).mean(axis=0)

    def as_grid(self) -> np.ndarray:
        return self.values.reshape((self.n,) * self.dim + self.values.shape[1:])

    def interpolate(self, points: np.ndarray) -> np.ndarray:
        """Periodic multilinear interpolation at arbitrary points of R^d.

        Args:
            points: (N, dim) array; coordinates are reduced modulo 1

        Returns:
            (N, *components) array
        """
        coords = (np.mod(points, 1.0) * self.n).T
        grid = self.as_grid()
        comp_shape = self.values.shape[1:]
        if not comp_shape:
            return map_coordinates(grid, coords, order=1, mode="grid-wrap")
        flat = grid.reshape((self.n,) * self.dim + (-1,))
        out = np.empty((points.shape[0], flat.shape[-1]))
        for j in range(flat.shape[-1]):
            out[:, j] = map_coordinates(flat[..., j], coords, order=1, mode="grid-wrap")
        return out.reshape((points.shape[0],) + comp_shape)
