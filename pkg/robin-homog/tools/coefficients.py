"""Periodic coefficient fields A, b, c of the divergence-form operator and the driver data.

All callables are vectorized over torus points: they take an (N, d) array and
return (N, d, d) for A, (N, d) for divA and b, and (N,) for c. Periodicity is
the caller's contract; validate() checks it on samples.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from tools.errors import InadmissibleMeasureError, PreconditionError, ResolutionCapError
from tools.torus import grid_points

logger = logging.getLogger(__name__)

TensorField = Callable[[np.ndarray], np.ndarray]
DEFAULT_MEMORY_CAP_BYTES = 4096 * 1024 ** 2


@dataclass(frozen=True)
class PeriodicCoefficients:
    """Coefficients A, divA, b, c on the unit torus with their bounds alpha and lambda."""

    dim: int
    a: TensorField
    div_a: TensorField
    b: TensorField
    c: TensorField
    alpha: float
    lam: float
    name: str = "custom"
    constant_a: bool = False

    def __post_init__(self):
        if self.dim < 2:
            raise PreconditionError(f"dimension must be at least 2, got {self.dim}")
        if self.alpha < 0:
            raise PreconditionError(f"alpha must be nonnegative, got {self.alpha}")
        if self.lam < 1:
            raise PreconditionError(f"ellipticity constant must be >= 1, got {self.lam}")

    def b_tilde(self, y: np.ndarray) -> np.ndarray:
        """Effective drift b~ = divA/2 + b."""
        return 0.5 * self.div_a(y) + self.b(y)

    def sqrt_a(self, y: np.ndarray) -> np.ndarray:
        """Symmetric square root of A at each point, (N, d, d)."""
        w, v = np.linalg.eigh(self.a(y))
        w = np.sqrt(np.clip(w, 0.0, None))
        return np.einsum("nij,nj,nkj->nik", v, w, v)

    @classmethod
    def constant(cls, a_matrix: np.ndarray, c_value: float, name: str = "homogenized") -> "PeriodicCoefficients":
        """Constant coefficients A = a_matrix, b = 0, c = c_value."""
        a_matrix = np.asarray(a_matrix, dtype=float)
        dim = a_matrix.shape[0]
        eig = np.linalg.eigvalsh(0.5 * (a_matrix + a_matrix.T))
        lam = float(max(1.0, eig.max(), 1.0 / eig.min())) if eig.min() > 0 else 1.0

        def a(y):
            return np.broadcast_to(a_matrix, (y.shape[0], dim, dim)).copy()

        def zeros(y):
            return np.zeros((y.shape[0], dim))

        def c(y):
            return np.full(y.shape[0], float(c_value))

        return cls(
            dim=dim, a=a, div_a=zeros, b=zeros, c=c,
            alpha=max(0.0, -float(c_value)), lam=lam, name=name, constant_a=True,
        )


@dataclass(frozen=True)
class Driver:
    """Nonlinearity f(x, y, z), terminal value g(x) and their structural constants.

    f_sup is the bound on |f| over the range the solution can visit; it feeds the
    comparison bound of the BSDE. z_affine marks drivers that are affine in z,
    which lets the effective nonlinearity be averaged exactly in closed form.
    """

    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    c1_bound: float
    c2: float
    f_sup: float
    g_sup: float
    z_affine: bool = False
    name: str = "custom"
    f_radial: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    g_radial: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.c2 < 0:
            raise PreconditionError(f"z-Lipschitz constant must be nonnegative, got {self.c2}")
        if not np.isfinite(self.c1_bound):
            raise PreconditionError("c1 must be bounded")

    @property
    def is_radial(self) -> bool:
        return self.f_radial is not None and self.g_radial is not None

    def check(self, dim: int, n_probes: int = 512, seed: int = 0, y_scale: float = 2.0) -> Dict[str, Any]:
        """Spot-check the monotonicity (c1) and z-Lipschitz (c2) hypotheses on random probes."""
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, (n_probes, dim))
        z = rng.normal(size=(n_probes, dim))
        y1 = rng.uniform(-y_scale, y_scale, n_probes)
        y2 = rng.uniform(-y_scale, y_scale, n_probes)
        dy = y1 - y2
        lhs = dy * (self.f(x, y1, z) - self.f(x, y2, z))
        monotone_excess = float(np.max(lhs - self.c1_bound * dy ** 2))

        z2 = z + rng.normal(scale=0.5, size=z.shape)
        diff = np.abs(self.f(x, y1, z) - self.f(x, y1, z2))
        dz = np.linalg.norm(z - z2, axis=1)
        lipschitz_excess = float(np.max(diff - self.c2 * dz))

        tol = 1e-12
        return {
            "monotone": monotone_excess <= tol,
            "monotone_excess": monotone_excess,
            "z_lipschitz": lipschitz_excess <= tol,
            "z_lipschitz_excess": lipschitz_excess,
        }


@dataclass(frozen=True)
class GridCoefficients:
    """Coefficients tabulated at the nodes k/n (and A at the faces k/n + e_l/(2n))."""

    coeffs: PeriodicCoefficients
    n: int
    points: np.ndarray
    a: np.ndarray
    a_faces: np.ndarray
    div_a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    b_tilde: np.ndarray

    @property
    def dim(self) -> int:
        return self.coeffs.dim

    @property
    def h(self) -> float:
        return 1.0 / self.n


def grid_bytes(n: int, dim: int) -> int:
    """Bytes needed by sample_on_grid at resolution n."""
    nodes = n ** dim
    per_node = dim + dim * dim + dim * dim * dim + 3 * dim + 1
    return 8 * nodes * per_node


def sample_on_grid(
    coeffs: PeriodicCoefficients,
    n: int,
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES,
) -> GridCoefficients:
    """Tabulate A, b, c and b~ at the n**d nodes of the periodic grid.

    Args:
        coeffs: validated coefficients
        n: nodes per axis (>= 4)
        memory_cap_bytes: refuse resolutions whose tables exceed this size

    Returns:
        GridCoefficients with node and face tabulations
    """
    if n < 4:
        raise PreconditionError(f"grid resolution must be at least 4, got {n}")
    needed = grid_bytes(n, coeffs.dim)
    if needed > memory_cap_bytes:
        raise ResolutionCapError(
            f"grid n={n} in d={coeffs.dim} needs {needed / 1024 ** 2:.1f} MiB, "
            f"over the configured cap of {memory_cap_bytes / 1024 ** 2:.1f} MiB"
        )

    points = grid_points(n, coeffs.dim)
    a = coeffs.a(points)
    faces = []
    for axis in range(coeffs.dim):
        offset = np.zeros(coeffs.dim)
        offset[axis] = 0.5 / n
        faces.append(coeffs.a(points + offset))
    div_a = coeffs.div_a(points)
    b = coeffs.b(points)
    return GridCoefficients(
        coeffs=coeffs,
        n=n,
        points=points,
        a=a,
        a_faces=np.stack(faces),
        div_a=div_a,
        b=b,
        c=coeffs.c(points),
        b_tilde=0.5 * div_a + b,
    )


def make_admissible_drift(
    a: TensorField,
    m_target: Callable[[np.ndarray], np.ndarray],
    grad_m: TensorField,
    dim: int,
    n_check: int = 128,
) -> TensorField:
    """Drift b = A grad(m)/(2m) for which m_target is invariant and the centering holds.

    With this b the adjoint operator gives L*m = div(A grad m)/2 - div(b m) = 0 and
    every centering integral -1/2 sum_j int a_ij d_j m + int b_i m vanishes.

    Args:
        a: diffusion tensor field
        m_target: strictly positive periodic density with unit mean
        grad_m: analytic gradient of m_target
        dim: torus dimension
        n_check: grid used for the positivity and unit-mean checks

    Returns:
        the drift as a vectorized callable
    """
    points = grid_points(n_check, dim)
    values = m_target(points)
    if np.min(values) <= 0.0:
        raise InadmissibleMeasureError(
            f"target density must be strictly positive, minimum is {np.min(values):.3e}"
        )
    mean = float(np.mean(values))
    if abs(mean - 1.0) > 1e-8:
        raise InadmissibleMeasureError(f"target density must have unit mean, got {mean:.12f}")

    def b(y):
        return 0.5 * np.einsum("nij,nj->ni", a(y), grad_m(y)) / m_target(y)[:, None]

    return b


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate(): measured bounds and a pass/fail flag per invariant."""

    rayleigh_min: float
    rayleigh_max: float
    eigen_min: float
    eigen_max: float
    c_min: float
    c_max: float
    symmetry_residual: float
    periodicity_residual: float
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rayleigh_min": self.rayleigh_min,
            "rayleigh_max": self.rayleigh_max,
            "eigen_min": self.eigen_min,
            "eigen_max": self.eigen_max,
            "c_min": self.c_min,
            "c_max": self.c_max,
            "symmetry_residual": self.symmetry_residual,
            "periodicity_residual": self.periodicity_residual,
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def _test_directions(dim: int, count: int) -> np.ndarray:
    if dim == 2:
        angles = np.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    rng = np.random.default_rng(0)
    extra = rng.normal(size=(count, dim))
    dirs = np.vstack([np.eye(dim), extra])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def validate(coeffs: PeriodicCoefficients, n: int = 32, n_directions: int = 16) -> ValidationReport:
    """Report ellipticity, symmetry, c-range and periodicity of the coefficients on samples."""
    points = grid_points(n, coeffs.dim)
    a = coeffs.a(points)
    c = coeffs.c(points)

    xi = _test_directions(coeffs.dim, n_directions)
    rayleigh = np.einsum("kj,nji,ki->nk", xi, a, xi)
    eig = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))
    symmetry = float(np.max(np.abs(a - np.swapaxes(a, 1, 2))))

    periodicity = 0.0
    for axis in range(coeffs.dim):
        shifted = points.copy()
        shifted[:, axis] += 1.0
        for fn in (coeffs.a, coeffs.div_a, coeffs.b, coeffs.c):
            periodicity = max(periodicity, float(np.max(np.abs(fn(points) - fn(shifted)))))

    rq_min, rq_max = float(rayleigh.min()), float(rayleigh.max())
    slack = 1e-12
    checks = {
        "symmetric": symmetry <= 1e-12,
        "elliptic": rq_min >= 1.0 / coeffs.lam - slack and rq_max <= coeffs.lam + slack,
        "c_range": float(c.min()) >= -coeffs.alpha - slack and float(c.max()) <= slack,
        "periodic": periodicity <= 1e-10,
    }
    return ValidationReport(
        rayleigh_min=rq_min,
        rayleigh_max=rq_max,
        eigen_min=float(eig.min()),
        eigen_max=float(eig.max()),
        c_min=float(c.min()),
        c_max=float(c.max()),
        symmetry_residual=symmetry,
        periodicity_residual=periodicity,
        checks=checks,
    )
