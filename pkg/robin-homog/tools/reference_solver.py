"""Radial Crank-Nicolson solver for the constant-coefficient Robin problem on a disk.

In tau = T - t the problem reads

    u_tau = sigma2/2 (u_rr + (d-1)/r u_r) + f(r, u, u_r),    u(tau=0) = g
    u_r(0) = 0,   u_r(R) = (2 C / sigma2) u(R)

The Robin row uses a ghost node, the center row the limit d * u_rr. The first
step is split into two backward-Euler half steps to damp startup oscillations.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from tools.errors import ConvergenceError, OracleInapplicableError, PreconditionError

logger = logging.getLogger(__name__)

FIXED_POINT_SWEEPS = 2
MAX_DT_HALVINGS = 6


def _zero_driver(r, y, z):
    return np.zeros_like(y)


@dataclass(frozen=True)
class RadialProblem:
    a_bar_scalar: float
    C_bar: float
    radius: float
    horizon: float
    g_radial: Callable[[np.ndarray], np.ndarray]
    f_bar_radial: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] = _zero_driver
    nr: int = 400
    nt: int = 400
    dim: int = 2

    def __post_init__(self):
        if self.a_bar_scalar <= 0:
            raise PreconditionError(f"sigma^2 must be positive, got {self.a_bar_scalar}")
        if self.C_bar > 0:
            raise PreconditionError(f"Robin coefficient must be nonpositive, got {self.C_bar}")
        if self.nr < 4 or self.nt < 2:
            raise PreconditionError("need nr >= 4 and nt >= 2")


@dataclass(frozen=True)
class RadialSolution:
    r: np.ndarray
    u0: np.ndarray
    dt_halvings: int

    @property
    def u_center(self) -> float:
        return float(self.u0[0])

    def at(self, radius: float) -> float:
        return float(np.interp(radius, self.r, self.u0))


def isotropic_scalar(a_bar: np.ndarray, rel_tol: float = 0.01) -> float:
    """sigma^2 with a_bar = sigma^2 I within rel_tol, else OracleInapplicableError."""
    a_bar = np.asarray(a_bar, dtype=float)
    sigma2 = float(np.trace(a_bar) / a_bar.shape[0])
    if sigma2 <= 0 or np.max(np.abs(a_bar - sigma2 * np.eye(a_bar.shape[0]))) > rel_tol * sigma2:
        raise OracleInapplicableError(
            f"radial oracle needs an isotropic effective tensor; got {np.round(a_bar, 6).tolist()}"
        )
    return sigma2


def _operator_bands(p: RadialProblem, h: float) -> np.ndarray:
    """Tridiagonal L_h in solve_banded layout (upper, diagonal, lower)."""
    n = p.nr + 1
    r = np.arange(n) * h
    k = 0.5 * p.a_bar_scalar
    beta = 2.0 * p.C_bar / p.a_bar_scalar
    upper = np.zeros(n)
    diag = np.zeros(n)
    lower = np.zeros(n)

    diag[0] = -2.0 * p.dim * k / h ** 2
    upper[1] = 2.0 * p.dim * k / h ** 2

    j = np.arange(1, n - 1)
    drift = (p.dim - 1) / r[j] / (2.0 * h)
    diag[j] = -2.0 * k / h ** 2
    upper[j + 1] = k * (1.0 / h ** 2 + drift)
    lower[j - 1] = k * (1.0 / h ** 2 - drift)

    last = n - 1
    diag[last] = k * (-2.0 / h ** 2 + 2.0 * beta / h + (p.dim - 1) * beta / r[last])
    lower[last - 1] = 2.0 * k / h ** 2
    return np.vstack([upper, diag, lower])


def _apply(bands: np.ndarray, u: np.ndarray) -> np.ndarray:
    upper, diag, lower = bands
    out = diag * u
    out[:-1] += upper[1:] * u[1:]
    out[1:] += lower[:-1] * u[:-1]
    return out


def _radial_gradient(u: np.ndarray, h: float, beta: float) -> np.ndarray:
    z = np.empty_like(u)
    z[0] = 0.0
    z[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    z[-1] = beta * u[-1]
    return z


def _step(p: RadialProblem, bands: np.ndarray, r: np.ndarray, u: np.ndarray, dt: float, theta: float, h: float):
    """One theta-step with fixed-point sweeps on the source; returns (u_new, sweep changes)."""
    beta = 2.0 * p.C_bar / p.a_bar_scalar
    lhs = -theta * dt * bands
    lhs[1] += 1.0
    explicit = u + (1.0 - theta) * dt * _apply(bands, u)
    f_old = p.f_bar_radial(r, u, _radial_gradient(u, h, beta))

    guess = u
    changes = []
    for _ in range(FIXED_POINT_SWEEPS):
        f_new = p.f_bar_radial(r, guess, _radial_gradient(guess, h, beta))
        source = (1.0 - theta) * f_old + theta * f_new
        nxt = solve_banded((1, 1), lhs, explicit + dt * source)
        changes.append(float(np.max(np.abs(nxt - guess))))
        guess = nxt
    return guess, changes


def solve_radial(problem: RadialProblem, steps: Optional[int] = None) -> RadialSolution:
    """u(0, r) on the radial grid r_j = j R / nr.

    Raises:
        ConvergenceError: the source iteration keeps growing after repeated dt halving
    """
    p = problem
    h = p.radius / p.nr
    r = np.arange(p.nr + 1) * h
    bands = _operator_bands(p, h)
    nt = p.nt if steps is None else steps
    dt = p.horizon / nt

    u = np.asarray(p.g_radial(r), dtype=float).copy()
    halvings = 0
    for n in range(nt):
        if n == 0:
            for _ in range(2):
                u, _ = _step(p, bands, r, u, 0.5 * dt, 1.0, h)
            continue
        u, halvings = _advance_cn(p, bands, r, u, dt, h, halvings)
    return RadialSolution(r=r, u0=u, dt_halvings=halvings)


def _advance_cn(p, bands, r, u, dt, h, halvings, depth: int = 0):
    new, changes = _step(p, bands, r, u, dt, 0.5, h)
    if len(changes) < 2 or changes[-1] <= changes[0] or changes[-1] <= 1e-14:
        return new, halvings
    if depth >= MAX_DT_HALVINGS:
        raise ConvergenceError(
            f"fixed-point sweeps do not contract after {MAX_DT_HALVINGS} dt halvings", changes[-1]
        )
    logger.info("radial source iteration grew (%.2e -> %.2e); halving dt", changes[0], changes[-1])
    mid, halvings = _advance_cn(p, bands, r, u, 0.5 * dt, h, halvings + 1, depth + 1)
    return _advance_cn(p, bands, r, mid, 0.5 * dt, h, halvings, depth + 1)
