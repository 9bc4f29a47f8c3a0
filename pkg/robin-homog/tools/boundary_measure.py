"""Boundary averages against the invariant boundary measure, estimated by local-time weighting.

For a torus function h the estimator is the ratio

    sum_paths sum_steps h(X_{k+1}/eps) dK_k  /  sum_paths sum_steps dK_k

over the contact steps of an ensemble, with a delete-one-path jackknife error.
The boundary measure itself is never built as a density.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from tools.cell_solver import CorrectorSet
from tools.coefficients import PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import NoBoundaryContactError, PreconditionError
from tools.reflected_sde import ReflectedPathEnsemble
from tools.torus import TorusField, grid_points

logger = logging.getLogger(__name__)

TorusFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class BoundaryAverage:
    value: float
    std_error: float
    total_local_time: float
    n_paths_used: int
    flagged: bool = False

    def to_dict(self) -> Dict[str, float]:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "total_local_time": self.total_local_time,
            "n_paths_used": self.n_paths_used,
            "flagged": self.flagged,
        }


@dataclass(frozen=True)
class _Contacts:
    points: np.ndarray
    d_k: np.ndarray
    path: np.ndarray
    n_paths: int


def _contacts(ensemble: ReflectedPathEnsemble) -> _Contacts:
    ens = ensemble.kept()
    mask = ens.d_k > 0
    total = float(ens.d_k[mask].sum())
    if total <= 0.0:
        raise NoBoundaryContactError(
            "no boundary contact in the ensemble; use a longer horizon or start on the boundary"
        )
    path_idx, step_idx = np.nonzero(mask)
    return _Contacts(
        points=ens.states[path_idx, step_idx + 1],
        d_k=ens.d_k[path_idx, step_idx],
        path=path_idx,
        n_paths=ens.n_paths,
    )


def _ratio(values: np.ndarray, contacts: _Contacts):
    """Ratio estimate and jackknife standard error for scalar values at the contacts."""
    num = np.bincount(contacts.path, weights=values * contacts.d_k, minlength=contacts.n_paths)
    den = np.bincount(contacts.path, weights=contacts.d_k, minlength=contacts.n_paths)
    total_num, total_den = num.sum(), den.sum()
    ratio = float(total_num / total_den)
    used = den > 0
    n_used = int(used.sum())

    if np.ptp(values) == 0.0:
        return float(values[0]), 0.0, n_used
    if n_used < 2:
        return ratio, float("inf"), n_used

    # paths without contact leave the ratio unchanged and drop out of the sum
    loo = (total_num - num[used]) / (total_den - den[used])
    n = contacts.n_paths
    loo_all = np.concatenate([loo, np.full(n - n_used, ratio)])
    se = float(np.sqrt((n - 1) / n * np.sum((loo_all - loo_all.mean()) ** 2)))
    return ratio, se, n_used


def local_time_average(
    h: TorusFunction,
    ensemble: ReflectedPathEnsemble,
    epsilon: Optional[float] = None,
) -> BoundaryAverage:
    """Local-time weighted average of h(X/eps) over the contact steps.

    Raises:
        NoBoundaryContactError: the ensemble never touched the boundary
    """
    eps = ensemble.epsilon if epsilon is None else epsilon
    contacts = _contacts(ensemble)
    values = np.asarray(h(contacts.points / eps), dtype=float)
    value, se, used = _ratio(values, contacts)
    return BoundaryAverage(
        value=value,
        std_error=se,
        total_local_time=float(contacts.d_k.sum()),
        n_paths_used=used,
    )


def effective_robin(
    c: TorusFunction,
    ensemble: ReflectedPathEnsemble,
    alpha: float,
    epsilon: Optional[float] = None,
) -> BoundaryAverage:
    """C_bar as the local-time average of c; flagged when it leaves [-alpha, 0] by more than 2 stderr."""
    eps = ensemble.epsilon if epsilon is None else epsilon
    contacts = _contacts(ensemble)
    values = np.asarray(c(contacts.points / eps), dtype=float)
    if values.min() < -alpha - 1e-12 or values.max() > 1e-12:
        raise PreconditionError(
            f"Robin coefficient leaves [-alpha, 0]: range [{values.min():.3f}, {values.max():.3f}], alpha={alpha}"
        )
    value, se, used = _ratio(values, contacts)
    flagged = value < -alpha - 2.0 * se or value > 2.0 * se
    if flagged:
        logger.warning("effective Robin coefficient %.4f +/- %.4f outside [-%g, 0]", value, se, alpha)
    return BoundaryAverage(
        value=value,
        std_error=se,
        total_local_time=float(contacts.d_k.sum()),
        n_paths_used=used,
        flagged=bool(flagged),
    )


@dataclass(frozen=True)
class ConditionNReport:
    """Boundary-averaged matrix of A grad omega~ and the quadratic form minimum over the boundary."""

    matrix: np.ndarray
    matrix_stderr: np.ndarray
    min_value: float
    argmin: np.ndarray

    @property
    def satisfied(self) -> bool:
        return self.min_value > 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "matrix": self.matrix.tolist(),
            "matrix_stderr": self.matrix_stderr.tolist(),
            "min_value": self.min_value,
            "argmin": self.argmin.tolist(),
            "satisfied": self.satisfied,
        }


def flux_matrix_field(coeffs: PeriodicCoefficients, correctors: CorrectorSet) -> TorusField:
    """Nodal field A grad omega~ with entries sum_l a_il (delta_lj + d_l omega_j)."""
    points = grid_points(correctors.n, correctors.dim)
    values = np.einsum("nil,nlj->nij", coeffs.a(points), correctors.grad_omega_tilde.values)
    return TorusField(correctors.n, correctors.dim, values)


def check_condition_n(
    correctors: CorrectorSet,
    coeffs: PeriodicCoefficients,
    ensemble: ReflectedPathEnsemble,
    domain: ConvexDomain,
    epsilon: Optional[float] = None,
    samples: int = 64,
) -> ConditionNReport:
    """Estimate M = int A grad omega~ dm~ entrywise and report min_x <M grad Psi(x), grad Psi(x)>."""
    eps = ensemble.epsilon if epsilon is None else epsilon
    contacts = _contacts(ensemble)
    field = flux_matrix_field(coeffs, correctors)
    values = field.interpolate(contacts.points / eps)
    dim = correctors.dim
    matrix = np.empty((dim, dim))
    stderr = np.empty((dim, dim))
    for i in range(dim):
        for j in range(dim):
            matrix[i, j], stderr[i, j], _ = _ratio(values[:, i, j], contacts)

    boundary = domain.sample_boundary(samples)
    grads = domain.grad_psi(boundary)
    forms = np.einsum("ni,ij,nj->n", grads, matrix, grads)
    k = int(np.argmin(forms))
    return ConditionNReport(matrix=matrix, matrix_stderr=stderr, min_value=float(forms[k]), argmin=boundary[k])
