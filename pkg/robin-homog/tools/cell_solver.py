"""Torus problems of the cell step: invariant measure, correctors and effective coefficients.

The generator L = 1/2 div(A grad .) + b.grad is discretized by

    L_h = sum_l 1/2 D_l^- diag(a_ll at faces) D_l^+
        + sum_{l != q} 1/2 D_l^c diag(a_lq) D_q^c
        + sum_l diag(b_l) D_l^c

on the periodic grid. The transpose of L_h is the discrete adjoint, so the
Fredholm condition for L_h w = -r is exactly <r, m_h> = 0 with m_h the discrete
invariant measure. Both the adjoint and the corrector solves reuse one sparse LU
of the slightly shifted matrix L_h - s I.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tools.coefficients import (
    DEFAULT_MEMORY_CAP_BYTES,
    Driver,
    GridCoefficients,
    PeriodicCoefficients,
    sample_on_grid,
)
from tools.errors import (
    CenteringError,
    ConvergenceError,
    MeasurePositivityError,
    NumericalError,
    PreconditionError,
)
from tools.torus import Stencils, TorusField

logger = logging.getLogger(__name__)

SOLVER_METHODS = ("direct", "krylov")
MAX_REFINEMENTS = 8


@dataclass(frozen=True)
class CellOperator:
    """Assembled L_h on one grid together with its shifted factorization."""

    grid: GridCoefficients
    stencils: Stencils
    matrix: sp.csr_matrix
    b_tilde_h: np.ndarray
    shift: float
    lu: Any

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def size(self) -> int:
        return self.grid.n ** self.grid.dim


def _assemble_matrix(grid: GridCoefficients, st: Stencils) -> sp.csr_matrix:
    dim = grid.dim
    op = sp.csr_matrix((st.n ** dim, st.n ** dim))
    for l in range(dim):
        flux = sp.diags(grid.a_faces[l][:, l, l])
        op = op + 0.5 * (st.backward[l] @ flux @ st.forward[l])
        op = op + sp.diags(grid.b[:, l]) @ st.centered[l]
        for q in range(dim):
            if q != l:
                op = op + 0.5 * (st.centered[l] @ sp.diags(grid.a[:, l, q]) @ st.centered[q])
    return op.tocsr()


def _discrete_drift(grid: GridCoefficients, st: Stencils) -> np.ndarray:
    """L_h applied to the coordinate functions x_i (their jumps across the period removed)."""
    dim = grid.dim
    out = np.empty((grid.points.shape[0], dim))
    for i in range(dim):
        col = 0.5 * (st.backward[i] @ grid.a_faces[i][:, i, i]) + grid.b[:, i]
        for l in range(dim):
            if l != i:
                col = col + 0.5 * (st.centered[l] @ grid.a[:, l, i])
        out[:, i] = col
    return out


@lru_cache(maxsize=4)
def assemble_operator(
    coeffs: PeriodicCoefficients,
    n: int,
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES,
) -> CellOperator:
    """Tabulate the coefficients, assemble L_h and factorize L_h - s I.

    Args:
        coeffs: periodic coefficients
        n: nodes per axis, a power of two in [16, 1024]
        memory_cap_bytes: cap passed to sample_on_grid

    Returns:
        CellOperator shared by all solves on this grid
    """
    if n < 16 or n > 1024 or n & (n - 1):
        raise PreconditionError(f"cell grid must be a power of two in [16, 1024], got {n}")
    grid = sample_on_grid(coeffs, n, memory_cap_bytes)
    st = Stencils.build(n, coeffs.dim)
    matrix = _assemble_matrix(grid, st)
    scale = float(abs(matrix).sum(axis=1).max())
    shift = 1e-12 * max(scale, 1.0)
    size = n ** coeffs.dim
    lu = spla.splu((matrix - shift * sp.identity(size, format="csr")).tocsc())
    logger.debug("assembled cell operator n=%d d=%d nnz=%d", n, coeffs.dim, matrix.nnz)
    return CellOperator(
        grid=grid,
        stencils=st,
        matrix=matrix,
        b_tilde_h=_discrete_drift(grid, st),
        shift=shift,
        lu=lu,
    )


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v ** 2)))


def _operator_for(coeffs: PeriodicCoefficients, field_: TorusField) -> CellOperator:
    if field_.dim != coeffs.dim:
        raise PreconditionError(
            f"grid mismatch: field is {field_.dim}-dimensional, coefficients are {coeffs.dim}-dimensional"
        )
    return assemble_operator(coeffs, field_.n)


def solve_invariant_measure(
    coeffs: PeriodicCoefficients,
    n: int,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> TorusField:
    """Solve L_h^T m = 0 with mean(m) = 1 by shifted inverse iteration.

    Raises:
        ConvergenceError: residual above tol after max_iter sweeps
        MeasurePositivityError: some node below -1e-8
    """
    op = assemble_operator(coeffs, n)
    adjoint = op.matrix.T.tocsr()
    m = np.ones(op.size)
    residual = np.inf
    for sweep in range(max_iter):
        x = op.lu.solve(m, trans="T")
        mean = float(np.mean(x))
        if not np.isfinite(mean) or mean == 0.0:
            raise ConvergenceError("inverse iteration collapsed", residual)
        m = x / mean
        residual = _rms(adjoint @ m)
        if residual <= tol:
            logger.debug("invariant measure converged after %d sweeps, residual %.2e", sweep + 1, residual)
            break
    else:
        raise ConvergenceError(
            f"inverse iteration did not reach tol={tol:.1e} in {max_iter} sweeps", residual
        )

    if float(np.min(m)) < -1e-8:
        raise MeasurePositivityError(
            f"measure positivity violated (min {np.min(m):.3e}), refine grid"
        )
    return TorusField(n=n, dim=coeffs.dim, values=m)


def centering_residual(coeffs: PeriodicCoefficients, m: TorusField) -> np.ndarray:
    """Quadrature of -1/2 sum_j a_ij d_j m + b_i m, in the stencil's own differences.

    Summation by parts makes this equal to the m-weighted mean of the discrete
    drift L_h x_i, which is the Fredholm condition of the i-th corrector problem.
    """
    op = _operator_for(coeffs, m)
    grid, st = op.grid, op.stencils
    res = np.empty(coeffs.dim)
    for i in range(coeffs.dim):
        total = -0.5 * np.mean(grid.a_faces[i][:, i, i] * (st.forward[i] @ m.values))
        for j in range(coeffs.dim):
            if j != i:
                total -= 0.5 * np.mean(grid.a[:, i, j] * (st.centered[j] @ m.values))
        res[i] = total + np.mean(grid.b[:, i] * m.values)
    return res


def centering_tolerance(op: CellOperator, tol: float = 1e-6) -> float:
    """Solvability threshold: tol plus the stencil's second-order truncation allowance."""
    scale = max(1.0, float(np.max(np.abs(op.b_tilde_h))))
    return max(tol, 64.0 * scale / op.n ** 2)


def _solve_range(
    op: CellOperator,
    m: np.ndarray,
    rhs: np.ndarray,
    method: str,
    tol: float,
) -> np.ndarray:
    """Solve L_h w = rhs for rhs orthogonal to m, returning the representative with <w, m> = 0."""
    if method not in SOLVER_METHODS:
        raise PreconditionError(f"unknown cell solver '{method}', expected one of {SOLVER_METHODS}")
    target = max(tol * max(_rms(rhs), 1.0), 1e-14)

    if method == "krylov":
        shifted = (op.matrix - op.shift * sp.identity(op.size, format="csr")).tocsc()
        ilu = spla.spilu(shifted, drop_tol=1e-5, fill_factor=20)
        precond = spla.LinearOperator(shifted.shape, ilu.solve)
        w, info = spla.gmres(shifted, rhs, M=precond, rtol=tol, restart=100, maxiter=50)
        if info != 0:
            raise ConvergenceError(f"gmres stopped with info={info}", _rms(op.matrix @ w - rhs))
    else:
        w = op.lu.solve(rhs)

    residual = _rms(op.matrix @ w - rhs)
    for _ in range(MAX_REFINEMENTS):
        if residual <= target:
            break
        w = w + op.lu.solve(rhs - op.matrix @ w)
        w = w - np.mean(w * m)
        residual = _rms(op.matrix @ w - rhs)
    if residual > target:
        raise ConvergenceError(f"corrector residual {residual:.2e} above {target:.2e}", residual)
    return w - np.mean(w * m)


@dataclass(frozen=True)
class CorrectorSet:
    """Correctors omega_i with nodal and face gradients of omega~_i = x_i + omega_i.

    face_grad_tilde[l][:, i] is D_l^+ omega~_i on the faces k + e_l/2;
    grad_omega_tilde holds the nodal centered matrix with column i = e_i + grad omega_i.
    """

    n: int
    dim: int
    omega: Tuple[TorusField, ...]
    grad_omega: Tuple[TorusField, ...]
    grad_omega_tilde: TorusField
    face_grad_tilde: np.ndarray
    centering: np.ndarray
    residuals: np.ndarray


def _gradients(op: CellOperator, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nodal centered (N, d, d) and face forward (d, N, d) gradient matrices of omega~."""
    st, dim = op.stencils, op.dim
    eye = np.eye(dim)
    nodal = np.empty((op.size, dim, dim))
    faces = np.empty((dim, op.size, dim))
    for i in range(dim):
        for l in range(dim):
            nodal[:, l, i] = eye[l, i] + st.centered[l] @ omega[:, i]
            faces[l][:, i] = eye[l, i] + st.forward[l] @ omega[:, i]
    return nodal, faces


def _build_corrector_set(op: CellOperator, omega: np.ndarray, centering: np.ndarray, residuals: np.ndarray) -> CorrectorSet:
    nodal, faces = _gradients(op, omega)
    n, dim = op.n, op.dim
    return CorrectorSet(
        n=n,
        dim=dim,
        omega=tuple(TorusField(n, dim, omega[:, i].copy()) for i in range(dim)),
        grad_omega=tuple(
            TorusField(n, dim, nodal[:, :, i] - np.eye(dim)[:, i]) for i in range(dim)
        ),
        grad_omega_tilde=TorusField(n, dim, nodal),
        face_grad_tilde=faces,
        centering=centering,
        residuals=residuals,
    )


def solve_correctors(
    coeffs: PeriodicCoefficients,
    m: TorusField,
    n: Optional[int] = None,
    method: str = "direct",
    tol: float = 1e-10,
    centering_tol: float = 1e-6,
) -> CorrectorSet:
    """Solve L_h omega_i = -b~_i with the m-weighted mean of omega_i fixed at zero.

    Args:
        coeffs: periodic coefficients
        m: invariant measure from solve_invariant_measure on the same grid
        n: optional resolution, must match m
        method: "direct" (sparse LU) or "krylov" (ILU-preconditioned GMRES)
        tol: relative residual target
        centering_tol: base Fredholm tolerance, widened by the truncation allowance

    Returns:
        CorrectorSet
    """
    if n is not None and n != m.n:
        raise PreconditionError(f"grid mismatch: n={n} but measure has n={m.n}")
    op = _operator_for(coeffs, m)
    centering = centering_residual(coeffs, m)
    allowed = centering_tolerance(op, centering_tol)
    worst = float(np.max(np.abs(centering)))
    if worst > allowed:
        raise CenteringError(
            f"centering condition fails: residual {worst:.3e} exceeds {allowed:.3e}; "
            "the drift is not centered with respect to the invariant measure"
        )

    omega = np.empty((op.size, coeffs.dim))
    residuals = np.empty(coeffs.dim)
    for i in range(coeffs.dim):
        rhs = -op.b_tilde_h[:, i]
        rhs = rhs - np.mean(rhs * m.values) / np.mean(m.values)
        omega[:, i] = _solve_range(op, m.values, rhs, method, tol)
        residuals[i] = _rms(op.matrix @ omega[:, i] - rhs)
    return _build_corrector_set(op, omega, centering, residuals)


def solve_cell_poisson(
    coeffs: PeriodicCoefficients,
    m: TorusField,
    psi: np.ndarray,
    method: str = "direct",
    tol: float = 1e-10,
    centering_tol: float = 1e-6,
) -> TorusField:
    """Solve L_h phi = -psi with int phi m = 0; psi must satisfy int psi m = 0."""
    op = _operator_for(coeffs, m)
    psi = np.asarray(psi, dtype=float)
    mean = float(np.mean(psi * m.values))
    if abs(mean) > centering_tol:
        raise CenteringError(f"right-hand side is not m-centered: int psi m = {mean:.3e}")
    rhs = -(psi - mean)
    return TorusField(m.n, m.dim, _solve_range(op, m.values, rhs, method, tol))


def _m_faces(op: CellOperator, m: TorusField) -> np.ndarray:
    return np.stack([op.stencils.face_average(m.values, l) for l in range(op.dim)])


def effective_diffusion(coeffs: PeriodicCoefficients, correctors: CorrectorSet, m: TorusField) -> np.ndarray:
    """a_bar_ij = int <A grad omega~_i, grad omega~_j> m, symmetrized.

    Diagonal flux terms use face values, cross terms nodal centered values,
    matching the stencil of L_h.
    """
    if correctors.n != m.n:
        raise PreconditionError("grid mismatch between correctors and measure")
    op = _operator_for(coeffs, m)
    grid, dim = op.grid, op.dim
    m_faces = _m_faces(op, m)
    nodal = correctors.grad_omega_tilde.values
    a_bar = np.zeros((dim, dim))
    for l in range(dim):
        g = correctors.face_grad_tilde[l]
        w = m_faces[l] * grid.a_faces[l][:, l, l]
        a_bar += np.einsum("n,ni,nj->ij", w, g, g) / op.size
        for q in range(dim):
            if q != l:
                w = m.values * grid.a[:, l, q]
                a_bar += np.einsum("n,ni,nj->ij", w, nodal[:, l, :], nodal[:, q, :]) / op.size

    asym = float(np.max(np.abs(a_bar - a_bar.T)))
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(a_bar)))):
        logger.warning("effective diffusion asymmetry %.2e before symmetrization", asym)
    a_bar = 0.5 * (a_bar + a_bar.T)
    if float(np.linalg.eigvalsh(a_bar).min()) <= 0.0:
        raise NumericalError(
            "effective diffusion is not positive definite; correctors and measure are inconsistent"
        )
    return a_bar


def voigt_reuss_bounds(coeffs: PeriodicCoefficients, m: TorusField) -> Tuple[np.ndarray, np.ndarray]:
    """(Reuss, Voigt): the m-weighted harmonic and arithmetic means of A."""
    op = _operator_for(coeffs, m)
    a = op.grid.a
    w = m.values[:, None, None]
    voigt = np.mean(w * a, axis=0)
    reuss = np.linalg.inv(np.mean(w * np.linalg.inv(a), axis=0))
    return reuss, voigt


def effective_nonlinearity(
    driver: Driver,
    correctors: CorrectorSet,
    m: TorusField,
    batch_size: int = 1 << 18,
) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """f_bar(x, y, z) = int f(x, y, (I + grad omega(eta)) z) m(eta) d eta.

    z-affine drivers reduce exactly to f(x, y, G_bar z) with G_bar the m-mean of
    the gradient matrix. Otherwise the m-weighted sum runs over every cell node;
    nodes sharing a gradient matrix are merged with their weights added. The
    driver is called on batches of at most batch_size (point, matrix) pairs.
    """
    if batch_size < 1:
        raise PreconditionError(f"batch_size must be positive, got {batch_size}")
    g_nodes = correctors.grad_omega_tilde.values
    weights = m.values / np.sum(m.values)

    if driver.z_affine:
        g_bar = np.einsum("n,nij->ij", weights, g_nodes)

        def f_bar_affine(x, y, z):
            return driver.f(x, y, z @ g_bar.T)

        return f_bar_affine

    keys = g_nodes.reshape(g_nodes.shape[0], -1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    q_weights = np.bincount(inverse, weights=weights, minlength=unique.shape[0])
    matrices = unique.reshape((-1,) + g_nodes.shape[1:])

    def f_bar(x, y, z):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        n_points = z.shape[0]
        per_call = max(1, batch_size // max(n_points, 1))
        total = np.zeros(n_points)
        for start in range(0, matrices.shape[0], per_call):
            mats = matrices[start:start + per_call]
            k = mats.shape[0]
            zz = np.einsum("kij,nj->kni", mats, z).reshape(k * n_points, -1)
            xx = np.broadcast_to(x, (k,) + x.shape).reshape(k * n_points, -1)
            yy = np.broadcast_to(y, (k, n_points)).reshape(-1)
            values = np.asarray(driver.f(xx, yy, zz), dtype=float).reshape(k, n_points)
            total += q_weights[start:start + per_call] @ values
        return total

    return f_bar


def corrector_gradient_lp(
    correctors: CorrectorSet,
    p: float,
    m: Optional[TorusField] = None,
) -> np.ndarray:
    """||e_i + grad omega_i||_{L^p} for each i, Lebesgue by default or m-weighted.

    Component l of the gradient is taken on the forward face along l.
    """
    if not 1.0 <= p <= 16.0:
        raise PreconditionError(f"p must lie in [1, 16], got {p}")
    faces = correctors.face_grad_tilde
    norms = np.sqrt(np.sum(faces ** 2, axis=0))
    weight = np.ones(norms.shape[0]) if m is None else m.values
    return np.mean(weight[:, None] * norms ** p, axis=0) ** (1.0 / p)


def effective_z_lipschitz(driver: Driver, correctors: CorrectorSet, m: TorusField) -> float:
    """z-Lipschitz constant of f_bar: c2 times the m-mean operator norm of I + grad omega."""
    g = correctors.grad_omega_tilde.values
    norms = np.linalg.norm(g, ord=2, axis=(1, 2))
    return float(driver.c2 * np.mean(norms * m.values))


@dataclass(frozen=True)
class EffectiveModel:
    """Constant data of the homogenized problem and the cell-step diagnostics."""

    a_bar: np.ndarray
    f_bar: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    a_hat: TorusField
    m: TorusField
    correctors: CorrectorSet
    C_bar: Optional[float] = None
    C_bar_stderr: Optional[float] = None
    reuss: Optional[np.ndarray] = None
    voigt: Optional[np.ndarray] = None
    report: Dict[str, Any] = field(default_factory=dict)

    def with_robin(self, C_bar: float, stderr: float) -> "EffectiveModel":
        return replace(self, C_bar=float(C_bar), C_bar_stderr=float(stderr))

    @property
    def isotropic_sigma2(self) -> Optional[float]:
        """Scalar sigma**2 when a_bar is sigma**2 I within 1%, else None."""
        eig = np.linalg.eigvalsh(self.a_bar)
        mean = float(np.mean(eig))
        offdiag = self.a_bar - np.diag(np.diag(self.a_bar))
        if np.max(np.abs(eig - mean)) <= 0.01 * mean and np.max(np.abs(offdiag)) <= 0.01 * mean:
            return mean
        return None


def effective_model(
    coeffs: PeriodicCoefficients,
    driver: Driver,
    n: int,
    p_list: Sequence[float] = (2.0, 4.0),
    tol: float = 1e-8,
    method: str = "direct",
    fbar_batch: int = 1 << 18,
) -> EffectiveModel:
    """Run the whole cell step: m, correctors, a_bar, a_hat, f_bar and the report."""
    m = solve_invariant_measure(coeffs, n, tol=tol)
    op = assemble_operator(coeffs, n)
    correctors = solve_correctors(coeffs, m, n, method=method)
    a_bar = effective_diffusion(coeffs, correctors, m)
    g = correctors.grad_omega_tilde.values
    a_hat = np.einsum("nli,nlq,nqj->nij", g, op.grid.a, g)
    reuss, voigt = voigt_reuss_bounds(coeffs, m)

    lp = {f"lp_{p:g}": corrector_gradient_lp(correctors, p).tolist() for p in p_list}
    report = {
        "family": coeffs.name,
        "grid_n": n,
        "m_min": float(m.values.min()),
        "m_max": float(m.values.max()),
        "m_mean": float(m.values.mean()),
        "adjoint_residual": _rms(op.matrix.T @ m.values),
        "centering_residual": correctors.centering.tolist(),
        "corrector_residual": correctors.residuals.tolist(),
        "div_a_consistency": float(np.max(np.abs(op.b_tilde_h - op.grid.b_tilde))),
        "a_bar": a_bar.tolist(),
        "reuss": reuss.tolist(),
        "voigt": voigt.tolist(),
        "z_lipschitz": effective_z_lipschitz(driver, correctors, m),
        **lp,
    }
    return EffectiveModel(
        a_bar=a_bar,
        f_bar=effective_nonlinearity(driver, correctors, m, batch_size=fbar_batch),
        a_hat=TorusField(n, coeffs.dim, a_hat),
        m=m,
        correctors=correctors,
        reuss=reuss,
        voigt=voigt,
        report=report,
    )


def adjoint_pairing(coeffs: PeriodicCoefficients, n: int, u: np.ndarray, v: np.ndarray) -> Tuple[float, float]:
    """(<L_h u, v>, <u, L_h^T v>) on the grid, for adjointness checks."""
    op = assemble_operator(coeffs, n)
    return float(np.dot(op.matrix @ u, v)), float(np.dot(u, op.matrix.T @ v))
