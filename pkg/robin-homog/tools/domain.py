"""Bounded convex C^1 domains given by a level set Psi (Psi > 0 inside) and their reflection geometry.

All queries accept a single point of shape (d,) or a batch of shape (N, d) and
answer in the same shape.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from tools.errors import (
    DegenerateBoundaryError,
    DegenerateReflectionError,
    PreconditionError,
    StepRejection,
)

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]
GEOM_TOL = 1e-12
DIRECTION_TOL = 1e-10


class Location(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    EXTERIOR = "exterior"


def _batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


@dataclass(frozen=True)
class ConvexDomain:
    """Level-set description of a convex domain.

    kind is "disk", "ellipse" or "generic"; disks and ellipses carry their
    semi-axes and get closed-form line intersections and projections, generic
    closures fall back to bisection and an iterative normal-line projector.
    """

    kind: str
    psi_fn: ScalarField
    grad_psi_fn: ScalarField
    bounding_radius: float
    dim: int = 2
    semi_axes: Optional[Tuple[float, ...]] = None
    params: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def disk(cls, radius: float = 1.0, dim: int = 2) -> "ConvexDomain":
        if radius <= 0:
            raise PreconditionError(f"disk radius must be positive, got {radius}")
        r2 = radius * radius

        def psi(x):
            return 1.0 - np.sum(x * x, axis=-1) / r2

        def grad(x):
            return -2.0 * x / r2

        return cls(
            kind="disk", psi_fn=psi, grad_psi_fn=grad, bounding_radius=float(radius),
            dim=dim, semi_axes=(float(radius),) * dim, params={"radius": float(radius)},
        )

    @classmethod
    def ellipse(cls, semi_axes: Sequence[float]) -> "ConvexDomain":
        axes = np.asarray(semi_axes, dtype=float)
        if axes.ndim != 1 or axes.size < 2 or np.any(axes <= 0):
            raise PreconditionError(f"ellipse semi-axes must be positive, got {list(semi_axes)}")
        inv2 = 1.0 / axes ** 2

        def psi(x):
            return 1.0 - np.sum(x * x * inv2, axis=-1)

        def grad(x):
            return -2.0 * x * inv2

        return cls(
            kind="ellipse", psi_fn=psi, grad_psi_fn=grad, bounding_radius=float(axes.max()),
            dim=axes.size, semi_axes=tuple(axes.tolist()),
        )

    @classmethod
    def generic(cls, psi: ScalarField, grad_psi: ScalarField, bounding_radius: float, dim: int = 2) -> "ConvexDomain":
        """Any convex level set containing the origin inside the ball of bounding_radius."""
        if float(psi(np.zeros((1, dim)))[0]) <= 0:
            raise PreconditionError("generic domains must contain the origin")
        return cls(kind="generic", psi_fn=psi, grad_psi_fn=grad_psi, bounding_radius=float(bounding_radius), dim=dim)

    @property
    def tol_geom(self) -> float:
        return GEOM_TOL * self.bounding_radius

    @property
    def is_quadric(self) -> bool:
        return self.semi_axes is not None

    def psi(self, x: np.ndarray) -> np.ndarray:
        xb, single = _batch(x)
        out = self.psi_fn(xb)
        return out[0] if single else out

    def grad_psi(self, x: np.ndarray) -> np.ndarray:
        xb, single = _batch(x)
        out = self.grad_psi_fn(xb)
        return out[0] if single else out

    def contains(self, x: np.ndarray) -> np.ndarray:
        """True for points of the closure (Psi >= -tol_geom)."""
        return self.psi(x) >= -self.tol_geom

    def in_band(self, x: np.ndarray) -> np.ndarray:
        return np.abs(self.psi(x)) <= self.tol_geom

    def classify(self, x: np.ndarray):
        """Location label(s) and the signed value Psi(x)."""
        values = self.psi(x)
        labels = np.where(
            np.abs(values) <= self.tol_geom,
            Location.BOUNDARY.value,
            np.where(values > 0, Location.INTERIOR.value, Location.EXTERIOR.value),
        )
        if np.ndim(values) == 0:
            return Location(str(labels)), float(values)
        return labels, values

    def inward_normal(self, x: np.ndarray) -> np.ndarray:
        """Unit inward normal grad Psi / |grad Psi|."""
        xb, single = _batch(x)
        g = self.grad_psi_fn(xb)
        norm = np.linalg.norm(g, axis=-1)
        if np.any(norm < DIRECTION_TOL):
            raise DegenerateBoundaryError(
                f"|grad Psi| = {norm.min():.3e} on the boundary; the level set is degenerate"
            )
        out = g / norm[:, None]
        return out[0] if single else out

    def closest_point(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the boundary, for points outside or near it."""
        xb, single = _batch(x)
        if self.kind == "disk":
            r = np.linalg.norm(xb, axis=-1, keepdims=True)
            if np.any(r == 0):
                raise DegenerateBoundaryError("the disk center has no unique closest boundary point")
            out = xb * (self.bounding_radius / r)
        elif self.kind == "ellipse":
            out = self._ellipse_projection(xb)
        else:
            out = self._iterative_projection(xb)
        return out[0] if single else out

    def _ellipse_projection(self, p: np.ndarray, max_iter: int = 100) -> np.ndarray:
        a2 = np.asarray(self.semi_axes) ** 2
        t = np.zeros(p.shape[0])
        floor = -a2.min()
        for _ in range(max_iter):
            denom = a2 + t[:, None]
            terms = (p ** 2) * a2 / denom ** 2
            f = terms.sum(axis=1) - 1.0
            df = -2.0 * (terms / denom).sum(axis=1)
            step = f / df
            t = np.maximum(t - step, 0.5 * (t + floor))
            if np.max(np.abs(step)) <= 1e-15 * (1.0 + np.max(np.abs(t))):
                break
        y = p * a2 / (a2 + t[:, None])
        # final radial snap onto Psi = 0
        scale = np.sqrt(np.sum(y ** 2 / a2, axis=1))
        return y / scale[:, None]

    def _iterative_projection(self, p: np.ndarray, max_iter: int = 200) -> np.ndarray:
        """Fixed point y = boundary point of the line p + s n(y)."""
        r = np.linalg.norm(p, axis=-1, keepdims=True)
        anchor_dir = -p / np.where(r > 0, r, 1.0)
        y = p + self._first_entry(p, anchor_dir, 2.0 * self.bounding_radius + r[:, 0])[:, None] * anchor_dir
        for _ in range(max_iter):
            n = self.inward_normal(y)
            s = self._first_entry(p, n, 2.0 * self.bounding_radius * np.ones(p.shape[0]))
            y_new = p + s[:, None] * n
            if np.max(np.linalg.norm(y_new - y, axis=-1)) <= 1e-14 * self.bounding_radius:
                return y_new
            y = y_new
        return y

    def _first_entry(self, x: np.ndarray, u: np.ndarray, t_max: np.ndarray) -> np.ndarray:
        """Smallest t in [0, t_max] with Psi(x + t u) >= 0; NaN where none exists."""
        t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (x.shape[0],))
        if self.is_quadric:
            return self._quadric_entry(x, u, t_max)

        speed = np.linalg.norm(u, axis=-1)
        t_max = np.where(np.isfinite(t_max), t_max, 4.0 * self.bounding_radius / np.where(speed > 0, speed, 1.0))
        out = np.full(x.shape[0], np.nan)
        inside0 = self.psi_fn(x) >= 0
        out[inside0] = 0.0
        todo = np.flatnonzero(~inside0)
        if todo.size == 0:
            return out
        grid = np.linspace(0.0, 1.0, 65)
        for k in todo:
            ts = grid * t_max[k]
            vals = self.psi_fn(x[k] + ts[:, None] * u[k])
            hit = np.flatnonzero(vals >= 0)
            if hit.size == 0:
                continue
            lo, hi = ts[hit[0] - 1], ts[hit[0]]
            while hi - lo > 1e-15 * self.bounding_radius:
                mid = 0.5 * (lo + hi)
                if self.psi_fn((x[k] + mid * u[k])[None, :])[0] >= 0:
                    hi = mid
                else:
                    lo = mid
            out[k] = hi
        return out

    def _quadric_entry(self, x: np.ndarray, u: np.ndarray, t_max: np.ndarray) -> np.ndarray:
        inv2 = 1.0 / np.asarray(self.semi_axes) ** 2
        qa = np.sum(u * u * inv2, axis=1)
        qb = 2.0 * np.sum(x * u * inv2, axis=1)
        qc = np.sum(x * x * inv2, axis=1) - 1.0
        disc = qb * qb - 4.0 * qa * qc
        out = np.full(x.shape[0], np.nan)
        inside = qc <= 0
        out[inside] = 0.0
        ok = ~inside & (disc >= 0) & (qa > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        # stable smaller root: 2c / (-b + sqrt(disc)) with -b > 0 when heading inward
        denom = -qb + sq
        root = np.where(denom > 0, 2.0 * qc / np.where(denom > 0, denom, 1.0), np.nan)
        valid = ok & np.isfinite(root) & (root >= 0) & (root <= t_max)
        out[valid] = root[valid]
        return out

    def project_and_reflect(
        self,
        x: np.ndarray,
        direction,
        dk_max: float = np.inf,
        strict: bool = True,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One oblique Skorokhod correction along direction.

        Args:
            x: point(s) outside or on the closure
            direction: correction direction(s) with a positive inward component, or a
                callable mapping closest boundary points to directions
            dk_max: largest admissible multiplier
            strict: raise StepRejection on a missing entry point; otherwise mark it NaN

        Returns:
            (x_boundary, x_corrected, dk): closest boundary point, the first point of
            the closure on the ray x + t*direction, and the multiplier t (0 inside)

        Raises:
            DegenerateReflectionError: direction tangential or outward at x_boundary
            StepRejection: no entry point within dk_max
        """
        xb, single = _batch(x)
        values = self.psi_fn(xb)
        outside = values < -self.tol_geom

        x_boundary = xb.copy()
        x_corrected = xb.copy()
        dk = np.zeros(xb.shape[0])
        if np.any(outside):
            xo = xb[outside]
            proj = self.closest_point(xo)
            if callable(direction):
                uo = np.atleast_2d(direction(proj))
            else:
                ub = np.broadcast_to(np.atleast_2d(np.asarray(direction, dtype=float)), xb.shape)
                uo = ub[outside]
            normal = self.inward_normal(proj)
            speed = np.linalg.norm(uo, axis=-1)
            inward = np.sum(uo * normal, axis=-1) / np.where(speed > 0, speed, 1.0)
            if np.any(inward <= DIRECTION_TOL) or np.any(speed == 0):
                raise DegenerateReflectionError(
                    f"reflection direction degenerate: inward component {inward.min():.3e}"
                )
            t = self._first_entry(xo, uo, np.full(xo.shape[0], dk_max))
            missing = ~np.isfinite(t)
            if strict and np.any(missing):
                raise StepRejection(
                    f"{int(np.sum(missing))} corrections need more than dk_max={dk_max:g}; halve dt"
                )
            x_boundary[outside] = proj
            x_corrected[outside] = xo + t[:, None] * uo
            dk[outside] = t

        if single:
            return x_boundary[0], x_corrected[0], dk[0]
        return x_boundary, x_corrected, dk

    def sample_boundary(self, count: int) -> np.ndarray:
        """count boundary points, evenly spaced in angle for d = 2."""
        if self.dim != 2:
            rng = np.random.default_rng(0)
            dirs = rng.normal(size=(count, self.dim))
        else:
            theta = 2.0 * np.pi * np.arange(count) / count
            dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        t = self._first_entry(dirs * 2.0 * self.bounding_radius, -dirs, np.full(count, 2.0 * self.bounding_radius))
        return dirs * 2.0 * self.bounding_radius - t[:, None] * dirs

    def check(self, samples: int = 64, chords: int = 256) -> Dict[str, float]:
        """inf |grad Psi| on the boundary and the convexity midpoint spot-check."""
        pts = self.sample_boundary(samples)
        min_grad = float(np.min(np.linalg.norm(self.grad_psi_fn(pts), axis=-1)))
        rng = np.random.default_rng(1)
        i, j = rng.integers(0, samples, size=(2, chords))
        mids = 0.5 * (pts[i] + pts[j])
        midpoint_min = float(np.min(self.psi_fn(mids)))
        return {
            "min_grad_psi": min_grad,
            "midpoint_psi_min": midpoint_min,
            "nondegenerate": float(min_grad > 0),
            "convex": float(midpoint_min >= -self.tol_geom),
        }
