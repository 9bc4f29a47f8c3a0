from __future__ import annotations

import numpy as np
import pytest

from tools.errors import PreconditionError, RankDeficientDesign
from tools.regression import RegressionBasis, regress, regress_adaptive


def _states(n: int = 400, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (n, 2))


def test_feature_counts() -> None:
    assert RegressionBasis(degree=2).n_features == 6
    assert RegressionBasis(degree=3).n_features == 10
    assert RegressionBasis(kind="radial", centers=9).n_features == 10


def test_quadratic_is_recovered_exactly() -> None:
    x = _states()
    values = 1.0 + 2.0 * x[:, 0] - x[:, 1] ** 2

    result = regress(values, x, RegressionBasis(degree=2))

    assert np.allclose(result.fitted, values, atol=1e-10)
    assert not result.ridge
    assert result.condition >= 1.0


def test_vector_regressands() -> None:
    x = _states()
    values = np.stack([x[:, 0], x[:, 0] * x[:, 1]], axis=1)

    result = regress(values, x, RegressionBasis(degree=2))

    assert result.coef.shape == (6, 2)
    assert np.allclose(result.fitted, values, atol=1e-10)


def test_constant_values_short_circuit() -> None:
    x = _states()

    result = regress(np.full(400, 3.5), x, RegressionBasis(degree=2))

    assert result.coef[0] == 3.5
    assert np.all(result.coef[1:] == 0.0)
    assert np.all(result.fitted == 3.5)


def test_too_few_samples() -> None:
    with pytest.raises(PreconditionError):
        regress(np.ones(50), _states(50), RegressionBasis(degree=2))


def test_degenerate_states_reduce_the_basis() -> None:
    x = np.zeros((100, 2))
    values = np.random.default_rng(1).normal(size=100)

    with pytest.raises(RankDeficientDesign):
        regress(values, x, RegressionBasis(degree=2))
    result = regress_adaptive(values, x, RegressionBasis(degree=2))

    assert result.basis.degree == 0
    assert result.fitted == pytest.approx(np.full(100, values.mean()))


def test_radial_basis_reduction_chain() -> None:
    basis = RegressionBasis(kind="radial", centers=9)

    smaller = basis.reduced()
    smallest = smaller.reduced()

    assert smaller.kind == "radial" and smaller.centers == 4
    assert smallest.kind == "polynomial" and smallest.degree == 1
    assert RegressionBasis(degree=0).reduced() is None


def test_invalid_basis() -> None:
    with pytest.raises(PreconditionError):
        RegressionBasis(kind="fourier")
    with pytest.raises(PreconditionError):
        RegressionBasis(kind="radial", width=0.0)
