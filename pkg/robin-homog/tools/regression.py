"""Least-squares regression on a small function basis, the conditional expectation of the BSDE scheme."""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from sklearn.preprocessing import PolynomialFeatures

from tools.errors import PreconditionError, RankDeficientDesign

logger = logging.getLogger(__name__)

RIDGE_CONDITION = 1e10
RANK_TOL = 1e-13
MIN_PATHS_PER_DOF = 10


@dataclass(frozen=True)
class RegressionBasis:
    """polynomial(total degree) or radial(centers, width) functions of x/scale.

    scale is the bounding radius of the domain so that every basis function is
    bounded on the closure.
    """

    kind: str = "polynomial"
    degree: int = 2
    centers: int = 9
    width: float = 0.5
    scale: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("polynomial", "radial"):
            raise PreconditionError(f"unknown basis kind '{self.kind}'")
        if self.kind == "polynomial" and self.degree < 0:
            raise PreconditionError("polynomial degree must be nonnegative")
        if self.kind == "radial" and (self.centers < 1 or self.width <= 0):
            raise PreconditionError("radial basis needs at least one center and a positive width")

    @property
    def n_features(self) -> int:
        if self.kind == "polynomial":
            return int(PolynomialFeatures(self.degree).fit(np.zeros((1, self.dim))).n_output_features_)
        return 1 + self._center_points().shape[0]

    def _center_points(self) -> np.ndarray:
        per_axis = max(1, int(round(self.centers ** (1.0 / self.dim))))
        axis = np.linspace(-1.0, 1.0, per_axis) if per_axis > 1 else np.zeros(1)
        mesh = np.meshgrid(*[axis] * self.dim, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def design(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states, dtype=float) / self.scale
        if self.kind == "polynomial":
            return PolynomialFeatures(self.degree).fit_transform(x)
        c = self._center_points()
        d2 = np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        return np.hstack([np.ones((x.shape[0], 1)), np.exp(-0.5 * d2 / self.width ** 2)])

    def reduced(self) -> Optional["RegressionBasis"]:
        """Next smaller basis, or None when already minimal."""
        if self.kind == "polynomial":
            return replace(self, degree=self.degree - 1) if self.degree > 0 else None
        fewer = int(round(max(1, int(round(self.centers ** (1.0 / self.dim))) - 1) ** self.dim))
        if fewer < 4:
            return RegressionBasis(kind="polynomial", degree=1, scale=self.scale, dim=self.dim)
        return replace(self, centers=fewer)

    def describe(self) -> str:
        if self.kind == "polynomial":
            return f"polynomial(deg={self.degree})"
        return f"radial(centers={self._center_points().shape[0]}, width={self.width:g})"


@dataclass(frozen=True)
class RegressionResult:
    coef: np.ndarray
    fitted: np.ndarray
    condition: float
    ridge: bool
    basis: RegressionBasis


def regress(values: np.ndarray, states: np.ndarray, basis: RegressionBasis) -> RegressionResult:
    """Ordinary least squares of values on basis(states), ridge when badly conditioned.

    Args:
        values: (N,) or (N, m) regressands
        states: (N, d) regressors
        basis: function basis

    Returns:
        RegressionResult with coefficients (K,) or (K, m) and fitted values

    Raises:
        PreconditionError: fewer than 10 paths per basis function
        RankDeficientDesign: numerically singular design
    """
    values = np.asarray(values, dtype=float)
    design = basis.design(states)
    n, k = design.shape
    if n < MIN_PATHS_PER_DOF * k:
        raise PreconditionError(
            f"{n} samples cannot support {k} basis functions; need at least {MIN_PATHS_PER_DOF * k}"
        )

    s = np.linalg.svd(design, compute_uv=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficientDesign(f"design matrix of {basis.describe()} is rank deficient")
    condition = float(s[0] / s[-1])

    if values.ndim == 1 and np.ptp(values) == 0.0:
        coef = np.zeros(k)
        coef[0] = values[0]
        return RegressionResult(coef=coef, fitted=values.copy(), condition=condition, ridge=False, basis=basis)

    ridge = condition > RIDGE_CONDITION
    if ridge:
        gram = design.T @ design
        lam = 1e-10 * np.trace(gram)
        coef = np.linalg.solve(gram + lam * np.eye(k), design.T @ values)
    else:
        coef = np.linalg.lstsq(design, values, rcond=None)[0]
    return RegressionResult(coef=coef, fitted=design @ coef, condition=condition, ridge=ridge, basis=basis)


def regress_adaptive(values: np.ndarray, states: np.ndarray, basis: RegressionBasis) -> RegressionResult:
    """regress() with automatic basis reduction on rank deficiency."""
    current = basis
    while True:
        try:
            return regress(values, states, current)
        except RankDeficientDesign:
            smaller = current.reduced()
            if smaller is None:
                raise
            logger.warning("rank-deficient design for %s, reducing to %s", current.describe(), smaller.describe())
            current = smaller
