"""Euler scheme with oblique Skorokhod correction for the eps-scaled reflecting diffusion.

Per step, with y = X/eps,

    X* = X + b~(y)/eps dt + sigma(y) dW,        sigma = A(y)**(1/2)
    X' = X* + t * gamma(x_b),                    gamma = A(x_b/eps) n(x_b)

where x_b is the closest boundary point of X* and t the smallest multiplier
bringing X* back into the closure. The recorded local-time increment is dK = 2t,
so that X = x0 + M + (1/eps) int b~ dt + 1/2 int gamma dK and the Robin term
int c Y dK of the backward equation carries the boundary operator
1/2 d/d(conormal) + c.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np

from tools.coefficients import PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import NumericalError, PreconditionError, ResolutionCapError, StepRejection

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
MAX_HALVINGS = 8


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    dt: float
    horizon: float
    n_paths: int
    x0: Tuple[float, ...]
    seed: int = 12345
    dk_max: float = 0.5
    dt_cell: float = 0.05
    workers: int = 1
    block_offset: int = 0
    memory_cap_bytes: int = 4096 * 1024 ** 2

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def validate(self, domain: ConvexDomain) -> None:
        """Raise PreconditionError unless eps, dt, horizon, paths and x0 are admissible."""
        if self.epsilon <= 0:
            raise PreconditionError(f"epsilon must be positive, got {self.epsilon}")
        if self.dt <= 0 or self.horizon <= 0:
            raise PreconditionError("dt and horizon must be positive")
        if abs(self.steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise PreconditionError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        limit = self.dt_cell * self.epsilon ** 2
        if self.dt > limit * (1.0 + 1e-9):
            raise PreconditionError(
                f"dt={self.dt:g} does not resolve the fast variable; need dt <= {limit:g} (dt_cell * eps^2)"
            )
        if self.n_paths < 1:
            raise PreconditionError("n_paths must be at least 1")
        if len(self.x0) != domain.dim:
            raise PreconditionError(f"x0 has {len(self.x0)} coordinates, domain has {domain.dim}")
        if not bool(domain.contains(np.asarray(self.x0, dtype=float))):
            raise PreconditionError(f"x0={self.x0} lies outside the domain")
        needed = ensemble_bytes(self.n_paths, self.steps, domain.dim)
        if needed > self.memory_cap_bytes:
            raise ResolutionCapError(
                f"ensemble of {self.n_paths} paths x {self.steps} steps needs {needed / 1024 ** 2:.0f} MiB, "
                f"over the cap of {self.memory_cap_bytes / 1024 ** 2:.0f} MiB; lower the path count per chunk"
            )


def ensemble_bytes(n_paths: int, steps: int, dim: int) -> int:
    return n_paths * (8 * (steps + 1) * dim + 8 * steps * dim + 9 * steps + 1)


@dataclass(frozen=True)
class ReflectedPathEnsemble:
    """Simulated paths: states (P, S+1, d), dM (P, S, d), dK (P, S), flags (P, S), aborted (P,)."""

    times: np.ndarray
    states: np.ndarray
    d_m: np.ndarray
    d_k: np.ndarray
    boundary_flags: np.ndarray
    aborted: np.ndarray
    epsilon: float
    dt: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.d_k.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def local_time(self) -> np.ndarray:
        """Cumulative K_t along each path, (P, S+1)."""
        k = np.zeros((self.n_paths, self.steps + 1))
        np.cumsum(self.d_k, axis=1, out=k[:, 1:])
        return k

    @property
    def k_terminal(self) -> np.ndarray:
        return self.d_k.sum(axis=1)

    def kept(self) -> "ReflectedPathEnsemble":
        """The ensemble without aborted paths."""
        if not np.any(self.aborted):
            return self
        keep = ~self.aborted
        return replace(
            self,
            states=self.states[keep],
            d_m=self.d_m[keep],
            d_k=self.d_k[keep],
            boundary_flags=self.boundary_flags[keep],
            aborted=self.aborted[keep],
        )


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return np.einsum("nij,nj,nkj->nik", v, np.sqrt(np.clip(w, 0.0, None)), v)


def _kernel(
    coeffs: PeriodicCoefficients,
    domain: ConvexDomain,
    state: np.ndarray,
    d_w: np.ndarray,
    dt: float,
    eps: float,
    dk_max: float,
):
    """One Euler step with correction; rejected entries carry NaN."""
    y = state / eps
    d_m = np.einsum("nij,nj->ni", _sqrt_psd(coeffs.a(y)), d_w)
    trial = state + coeffs.b_tilde(y) * (dt / eps) + d_m

    def conormal(x_b):
        return np.einsum("nij,nj->ni", coeffs.a(x_b / eps), domain.inward_normal(x_b))

    _, corrected, t = domain.project_and_reflect(trial, conormal, dk_max=dk_max, strict=False)
    rejected = ~np.isfinite(t)
    d_k = 2.0 * np.where(rejected, 0.0, t)
    return corrected, d_m, d_k, d_k > 0, rejected


def _advance(
    coeffs: PeriodicCoefficients,
    domain: ConvexDomain,
    state: np.ndarray,
    d_w: np.ndarray,
    dt: float,
    eps: float,
    dk_max: float,
    rng: np.random.Generator,
    level: int,
):
    new, d_m, d_k, flags, rejected = _kernel(coeffs, domain, state, d_w, dt, eps, dk_max)
    aborted = np.zeros(state.shape[0], dtype=bool)
    if not np.any(rejected):
        return new, d_m, d_k, flags, aborted

    idx = np.flatnonzero(rejected)
    if level >= MAX_HALVINGS:
        new[idx] = state[idx]
        d_m[idx] = 0.0
        d_k[idx] = 0.0
        flags[idx] = False
        aborted[idx] = True
        return new, d_m, d_k, flags, aborted

    # Brownian bridge: split dW into two conditionally exact halves
    bridge = 0.5 * np.sqrt(dt) * rng.standard_normal((idx.size, state.shape[1]))
    first = 0.5 * d_w[idx] + bridge
    mid, m1, k1, f1, a1 = _advance(coeffs, domain, state[idx], first, 0.5 * dt, eps, dk_max, rng, level + 1)
    end, m2, k2, f2, a2 = _advance(coeffs, domain, mid, d_w[idx] - first, 0.5 * dt, eps, dk_max, rng, level + 1)
    new[idx] = end
    d_m[idx] = m1 + m2
    d_k[idx] = k1 + k2
    flags[idx] = f1 | f2
    aborted[idx] = a1 | a2
    return new, d_m, d_k, flags, aborted


def step_oblique(
    coeffs: PeriodicCoefficients,
    domain: ConvexDomain,
    state: np.ndarray,
    dt: float,
    eps: float,
    noise: np.ndarray,
    dk_max: float = np.inf,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single step of the scheme for standard normal noise; deterministic.

    Returns:
        (new state, dM, dK), shaped like the input batch
    """
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    x = np.atleast_2d(state)
    d_w = np.sqrt(dt) * np.atleast_2d(np.asarray(noise, dtype=float))
    new, d_m, d_k, _, rejected = _kernel(coeffs, domain, x, d_w, dt, eps, dk_max)
    if np.any(rejected):
        raise StepRejection(f"{int(rejected.sum())} states need a correction beyond dk_max={dk_max:g}")
    if single:
        return new[0], d_m[0], d_k[0]
    return new, d_m, d_k


def _simulate_block(
    coeffs: PeriodicCoefficients,
    domain: ConvexDomain,
    cfg: SimConfig,
    block: int,
    size: int,
) -> Dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, cfg.block_offset + block])))
    steps, dim = cfg.steps, len(cfg.x0)
    sqrt_dt = np.sqrt(cfg.dt)
    states = np.empty((size, steps + 1, dim))
    d_m = np.empty((size, steps, dim))
    d_k = np.empty((size, steps))
    flags = np.empty((size, steps), dtype=bool)
    aborted = np.zeros(size, dtype=bool)

    x = np.tile(np.asarray(cfg.x0, dtype=float), (size, 1))
    states[:, 0] = x
    for k in range(steps):
        d_w = sqrt_dt * rng.standard_normal((size, dim))
        live = ~aborted
        new = x.copy()
        dm_k = np.zeros((size, dim))
        dk_k = np.zeros(size)
        fl_k = np.zeros(size, dtype=bool)
        if np.any(live):
            nl, ml, kl, fl, al = _advance(
                coeffs, domain, x[live], d_w[live], cfg.dt, cfg.epsilon, cfg.dk_max, rng, 0
            )
            new[live], dm_k[live], dk_k[live], fl_k[live] = nl, ml, kl, fl
            newly = np.flatnonzero(live)[al]
            aborted[newly] = True
        if not np.all(np.isfinite(new)):
            raise NumericalError(f"non-finite state at step {k} of block {block}; aborting run")
        x = new
        states[:, k + 1] = x
        d_m[:, k] = dm_k
        d_k[:, k] = dk_k
        flags[:, k] = fl_k
    return {"states": states, "d_m": d_m, "d_k": d_k, "flags": flags, "aborted": aborted}


def simulate_paths(coeffs: PeriodicCoefficients, domain: ConvexDomain, cfg: SimConfig) -> ReflectedPathEnsemble:
    """Simulate cfg.n_paths independent paths in blocks of BLOCK_SIZE.

    Block j draws from Philox(SeedSequence([seed, block_offset + j])) and blocks are
    concatenated by index, so the ensemble does not depend on cfg.workers.
    """
    cfg.validate(domain)
    if coeffs.dim != domain.dim:
        raise PreconditionError(f"coefficients are {coeffs.dim}-dimensional, domain is {domain.dim}-dimensional")

    sizes = [BLOCK_SIZE] * (cfg.n_paths // BLOCK_SIZE)
    if cfg.n_paths % BLOCK_SIZE:
        sizes.append(cfg.n_paths % BLOCK_SIZE)

    def run(block: int):
        return _simulate_block(coeffs, domain, cfg, block, sizes[block])

    workers = max(1, min(cfg.workers, len(sizes)))
    if workers == 1:
        parts = [run(j) for j in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))

    aborted = np.concatenate([p["aborted"] for p in parts])
    if np.any(aborted):
        logger.warning(
            "%d of %d paths aborted after %d step halvings", int(aborted.sum()), cfg.n_paths, MAX_HALVINGS
        )
    return ReflectedPathEnsemble(
        times=np.arange(cfg.steps + 1) * cfg.dt,
        states=np.concatenate([p["states"] for p in parts]),
        d_m=np.concatenate([p["d_m"] for p in parts]),
        d_k=np.concatenate([p["d_k"] for p in parts]),
        boundary_flags=np.concatenate([p["flags"] for p in parts]),
        aborted=aborted,
        epsilon=cfg.epsilon,
        dt=cfg.dt,
    )


def local_time_stats(ensemble: ReflectedPathEnsemble) -> Dict[str, float]:
    """Mean, variance and second moment of K_T and the fraction of steps with a correction."""
    k_t = ensemble.k_terminal
    return {
        "k_mean": float(np.mean(k_t)),
        "k_var": float(np.var(k_t, ddof=1)) if k_t.size > 1 else 0.0,
        "k_second_moment": float(np.mean(k_t ** 2)),
        "k_mean_stderr": float(np.std(k_t, ddof=1) / np.sqrt(k_t.size)) if k_t.size > 1 else 0.0,
        "boundary_fraction": float(np.mean(ensemble.boundary_flags)),
        "hit_fraction": float(np.mean(k_t > 0)),
    }


def occupation_histogram(ensemble: ReflectedPathEnsemble, bins: int, radius: float, burn_in: float = 0.0) -> np.ndarray:
    """Counts of visited states in `bins` equal-area cells of a disk (rings x sectors)."""
    start = int(np.ceil(burn_in / ensemble.dt))
    pts = ensemble.states[:, start:].reshape(-1, ensemble.dim)
    rings = int(np.sqrt(bins))
    while bins % rings:
        rings -= 1
    sectors = bins // rings
    r = np.linalg.norm(pts[:, :2], axis=1) / radius
    ring = np.minimum((r ** 2 * rings).astype(int), rings - 1)
    theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
    sector = np.minimum((theta / (2.0 * np.pi) * sectors).astype(int), sectors - 1)
    return np.bincount(ring * sectors + sector, minlength=bins)
