"""End-to-end experiments: epsilon problems, the homogenized problem and the diagnostics built on them.

Every ensemble is simulated in chunks of at most chunk_paths paths. Each chunk
is solved by the backward scheme separately and the chunk estimates are
combined with path-count weights. Seeds derive from the master seed through
SeedSequence([master, stream tag, index]), so runs are reproducible for any
worker count.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import Config
from orchestrator import PipelineOrchestrator
from stages import BoundaryStage, BsdeStage, CellStage, ReferenceStage, SimulationStage
from tools import catalog
from tools.boundary_measure import local_time_average
from tools.cell_solver import EffectiveModel, assemble_operator, solve_cell_poisson
from tools.coefficients import DEFAULT_MEMORY_CAP_BYTES, Driver, PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import (
    CenteringError,
    NoBoundaryContactError,
    OracleInapplicableError,
    PreconditionError,
)
from tools.reference_solver import RadialProblem
from tools.reflected_sde import BLOCK_SIZE, ReflectedPathEnsemble, SimConfig
from tools.regression import RegressionBasis
from tools.storage_tools import StorageManager
from tools.torus import grid_points

logger = logging.getLogger(__name__)

# stream tags for SeedSequence([master, tag, index])
EPSILON_STREAM = 1
HOMOGENIZED_STREAM = 2
DIAGNOSE_STREAM = 3
VARIATION_STREAM = 4
ALTERNATE_MASTER = 0xA17E


def derive_seed(master: int, tag: int, index: int = 0) -> int:
    return int(np.random.SeedSequence([master, tag, index]).generate_state(1, dtype=np.uint64)[0])


def resolving_dt(horizon: float, limit: float) -> float:
    """Largest dt <= limit that divides the horizon."""
    steps = max(1, math.ceil(horizon / limit - 1e-9))
    return horizon / steps


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "identity"
    robin: str = "const(-1)"
    domain: str = "disk(1)"
    driver_f: str = "zero"
    driver_g: str = "one"
    x0: Tuple[float, ...] = (0.0, 0.0)
    horizon: float = 0.5
    epsilons: Tuple[float, ...] = (0.5, 0.25, 0.125)
    dt_cell: float = 0.05
    paths: int = 200000
    chunk_paths: int = 50000
    sim_overrides: Mapping[float, Mapping[str, Any]] = field(default_factory=dict)
    homogenized_dt: Optional[float] = None
    basis_kind: str = "polynomial"
    basis_degree: int = 2
    basis_centers: int = 9
    basis_width: float = 0.5
    grid_n: int = 128
    p_list: Tuple[float, ...] = (2.0, 4.0)
    cell_tol: float = 1e-8
    cell_solver: str = "direct"
    seed: int = 12345
    dk_max: float = 0.5
    memory_cap_bytes: int = DEFAULT_MEMORY_CAP_BYTES
    boundary_samples: int = 64
    psi: str = "sin(1)"
    diagnose_horizon: float = 1.0
    fbar_batch: int = 1 << 18
    reference_nr: int = 400
    reference_nt: int = 400
    workers: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise PreconditionError("epsilon list is empty")
        if any(e <= 0 for e in eps):
            raise PreconditionError(f"epsilons must be positive, got {list(eps)}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise PreconditionError(f"epsilons must be strictly decreasing, got {list(eps)}")
        if self.horizon <= 0 or self.diagnose_horizon <= 0:
            raise PreconditionError("horizons must be positive")
        if self.paths < 1 or self.chunk_paths < 1:
            raise PreconditionError("paths and chunk_paths must be positive")
        domain = self.build_domain()
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (domain.dim,) or not bool(domain.contains(x0)):
            raise PreconditionError(f"x0={list(self.x0)} is not a point of the closed domain {self.domain}")

    @classmethod
    def from_config(cls, config: Config) -> "ExperimentConfig":
        if config["domain.kind"] == "disk":
            domain = f"disk({config['domain.radius']})"
        elif config["domain.kind"] == "ellipse":
            a, b = config["domain.semi_axes"]
            domain = f"ellipse({a},{b})"
        else:
            raise PreconditionError(f"unknown domain kind '{config['domain.kind']}'")
        return cls(
            family=config["family"],
            robin=config["robin"],
            domain=domain,
            driver_f=config["driver.f"],
            driver_g=config["driver.g"],
            x0=tuple(config["x0"]),
            horizon=config["horizon"],
            epsilons=tuple(config["epsilons"]),
            dt_cell=config["dt_cell"],
            paths=config["paths"],
            chunk_paths=config["chunk_paths"],
            sim_overrides={eps: dict(v) for eps, v in config.sim_overrides.items()},
            homogenized_dt=config["homogenized.dt"],
            basis_kind=config["basis.kind"],
            basis_degree=config["basis.degree"],
            basis_centers=config["basis.centers"],
            basis_width=config["basis.width"],
            grid_n=config["grid_n"],
            p_list=tuple(config["p_list"]),
            cell_tol=config["cell.tol"],
            cell_solver=config["cell.solver"],
            seed=config["seed"],
            dk_max=config["dk_max"],
            memory_cap_bytes=config.memory_cap_bytes,
            boundary_samples=config["boundary_samples"],
            psi=config["psi"],
            diagnose_horizon=config["diagnose.horizon"],
            fbar_batch=config["fbar.batch"],
            reference_nr=config["reference.nr"],
            reference_nt=config["reference.nt"],
            workers=config.threads,
        )

    def build_domain(self) -> ConvexDomain:
        return catalog.domain(self.domain)

    def build_coefficients(self) -> PeriodicCoefficients:
        return catalog.coefficient_family(self.family, robin=self.robin, dim=len(self.x0))

    def build_driver(self) -> Driver:
        return catalog.driver(self.driver_f, self.driver_g, radius=self.build_domain().bounding_radius)

    def build_basis(self) -> RegressionBasis:
        return RegressionBasis(
            kind=self.basis_kind,
            degree=self.basis_degree,
            centers=self.basis_centers,
            width=self.basis_width,
            scale=self.build_domain().bounding_radius,
            dim=len(self.x0),
        )

    def epsilon_schedule(self, eps: float, horizon: Optional[float] = None) -> Tuple[float, float, int]:
        """(dt, horizon, paths) for one epsilon after per-epsilon overrides."""
        override = self.sim_overrides.get(eps, {})
        t = float(override.get("horizon", self.horizon if horizon is None else horizon))
        dt = override.get("dt") or resolving_dt(t, self.dt_cell * eps ** 2)
        return float(dt), t, int(override.get("paths", self.paths))


@dataclass(frozen=True)
class EpsilonResult:
    epsilon: float
    y0: float
    stderr: float
    n_paths: int
    dt: float
    steps: int
    k_mean: float
    k_second_moment: float
    C_bar: Optional[float] = None
    C_bar_stderr: Optional[float] = None
    cond_n_min: Optional[float] = None
    max_condition: float = 1.0


@dataclass(frozen=True)
class HomogenizedResult:
    y0: float
    stderr: float
    n_paths: int
    dt: float
    a_bar: np.ndarray
    C_bar: float
    C_bar_stderr: float
    oracle: Optional[float] = None


def combine_chunks(values: Sequence[float], errors: Sequence[float], sizes: Sequence[int]) -> Tuple[float, float]:
    """Path-count weighted mean of chunk estimates and its standard error."""
    w = np.asarray(sizes, dtype=float)
    w = w / w.sum()
    value = float(np.dot(w, values))
    err = float(np.sqrt(np.dot(w ** 2, np.asarray(errors, dtype=float) ** 2)))
    return value, err


def chunk_sizes(paths: int, chunk_paths: int) -> List[int]:
    """Split paths into near-equal chunks of at most chunk_paths."""
    count = max(1, math.ceil(paths / chunk_paths))
    base, extra = divmod(paths, count)
    return [base + (1 if i < extra else 0) for i in range(count)]


class HomogenizationHarness:
    """Runs the cell step, the epsilon problems and the homogenized problem for one ExperimentConfig."""

    def __init__(self, cfg: ExperimentConfig, storage_manager: StorageManager):
        self.cfg = cfg
        self.storage = storage_manager
        self.cell = CellStage(storage_manager)
        self.simulation = SimulationStage(storage_manager)
        self.boundary = BoundaryStage(storage_manager)
        self.bsde = BsdeStage(storage_manager)
        self.reference = ReferenceStage(storage_manager)

        self.domain = cfg.build_domain()
        self.coeffs = cfg.build_coefficients()
        self.driver = cfg.build_driver()
        self.basis = cfg.build_basis()

        self.model: Optional[EffectiveModel] = None
        self.eps_results: Dict[float, EpsilonResult] = {}
        self.homogenized: Optional[HomogenizedResult] = None

    # ------------------------------------------------------------------ cell

    def cell_model(self) -> EffectiveModel:
        if self.model is None:
            self.model = self.cell.run(
                self.coeffs,
                self.driver,
                self.cfg.grid_n,
                p_list=self.cfg.p_list,
                tol=self.cfg.cell_tol,
                method=self.cfg.cell_solver,
                fbar_batch=self.cfg.fbar_batch,
            )
        return self.model

    # ------------------------------------------------------------ simulation

    def _chunks(
        self,
        coeffs: PeriodicCoefficients,
        eps: float,
        dt: float,
        horizon: float,
        paths: int,
        seed: int,
    ) -> Iterator[ReflectedPathEnsemble]:
        sizes = chunk_sizes(paths, self.cfg.chunk_paths)
        offset = 0
        for size in sizes:
            sim = SimConfig(
                epsilon=eps,
                dt=dt,
                horizon=horizon,
                n_paths=size,
                x0=tuple(self.cfg.x0),
                seed=seed,
                dk_max=self.cfg.dk_max,
                dt_cell=max(self.cfg.dt_cell, dt / eps ** 2),
                workers=self.cfg.workers,
                block_offset=offset,
                memory_cap_bytes=self.cfg.memory_cap_bytes,
            )
            offset += math.ceil(size / BLOCK_SIZE)
            yield self.simulation.run(coeffs, self.domain, sim)

    def solve_epsilon_problem(self, eps: float, seed: Optional[int] = None) -> EpsilonResult:
        """u^eps(0, x0) +/- stderr from paths at eps and the backward scheme with c(X/eps)."""
        if eps <= 0:
            raise PreconditionError(f"epsilon must be positive, got {eps}")
        dt, horizon, paths = self.cfg.epsilon_schedule(eps)
        if seed is None:
            seed = derive_seed(self.cfg.seed, EPSILON_STREAM, int(round(eps * 1e9)))
        # the user-facing dt_cell bound applies to the epsilon problem
        if dt > self.cfg.dt_cell * eps ** 2 * (1.0 + 1e-9):
            raise PreconditionError(
                f"dt={dt:g} at eps={eps:g} does not resolve the fast variable; need dt <= {self.cfg.dt_cell * eps ** 2:g}"
            )

        y0s, errs, sizes, conds = [], [], [], []
        k_sum = k2_sum = 0.0
        c_bar = c_bar_se = cond_min = None
        steps = 0
        for index, ens in enumerate(self._chunks(self.coeffs, eps, dt, horizon, paths, seed)):
            sol = self.bsde.run(ens, self.driver, self.coeffs.c, self.basis, self.coeffs)
            y0s.append(sol.y0)
            errs.append(sol.y0_stderr)
            sizes.append(sol.n_paths)
            conds.append(sol.to_row()["max_condition"])
            k_t = ens.kept().k_terminal
            k_sum += float(k_t.sum())
            k2_sum += float((k_t ** 2).sum())
            steps = ens.steps
            if index == 0:
                c_bar, c_bar_se, cond_min = self._boundary_estimate(ens)

        y0, se = combine_chunks(y0s, errs, sizes)
        n = int(sum(sizes))
        result = EpsilonResult(
            epsilon=eps,
            y0=y0,
            stderr=se,
            n_paths=n,
            dt=dt,
            steps=steps,
            k_mean=k_sum / n,
            k_second_moment=k2_sum / n,
            C_bar=c_bar,
            C_bar_stderr=c_bar_se,
            cond_n_min=cond_min,
            max_condition=float(max(conds)),
        )
        self.eps_results[eps] = result
        logger.info("eps=%g: y0=%.6f +/- %.6f over %d paths", eps, y0, se, n)
        return result

    def _boundary_estimate(self, ens: ReflectedPathEnsemble):
        correctors = self.model.correctors if self.model is not None else None
        try:
            avg, cond = self.boundary.run(self.coeffs, ens, self.domain, correctors, self.cfg.boundary_samples)
        except NoBoundaryContactError:
            logger.warning("no boundary contact at eps=%g; C_bar and the conormal flux condition unavailable", ens.epsilon)
            return None, None, None
        return avg.value, avg.std_error, (cond.min_value if cond is not None else None)

    # -------------------------------------------------------------- boundary

    def constant_robin(self) -> Optional[float]:
        name, _ = catalog.parse_spec(self.cfg.robin)
        if name != "const":
            return None
        return float(self.coeffs.c(np.zeros((1, self.coeffs.dim)))[0])

    def estimate_boundary(self) -> EffectiveModel:
        """Attach C_bar from the finest epsilon run (exact for a constant Robin field)."""
        model = self.cell_model()
        constant = self.constant_robin()
        if constant is not None:
            self.model = model.with_robin(constant, 0.0)
            return self.model
        finest = min(self.cfg.epsilons)
        if finest not in self.eps_results:
            self.solve_epsilon_problem(finest)
        result = self.eps_results[finest]
        if result.C_bar is None:
            raise NoBoundaryContactError(
                f"no boundary contact at eps={finest:g}; C_bar cannot be estimated. Use a longer horizon"
            )
        self.model = model.with_robin(result.C_bar, result.C_bar_stderr)
        return self.model

    # ----------------------------------------------------------- homogenized

    def solve_homogenized(self, seed: Optional[int] = None) -> HomogenizedResult:
        """u0(0, x0) for A = a_bar, c = C_bar, f = f_bar, plus the radial oracle when it applies."""
        model = self.model if self.model is not None and self.model.C_bar is not None else self.estimate_boundary()
        coeffs0 = PeriodicCoefficients.constant(model.a_bar, model.C_bar, name="homogenized")
        finest = min(self.cfg.epsilons)
        dt = self.cfg.homogenized_dt or self.cfg.epsilon_schedule(finest)[0]
        dt = resolving_dt(self.cfg.horizon, dt)
        if seed is None:
            seed = derive_seed(self.cfg.seed, HOMOGENIZED_STREAM)

        y0s, errs, sizes = [], [], []
        for ens in self._chunks(coeffs0, 1.0, dt, self.cfg.horizon, self.cfg.paths, seed):
            sol = self.bsde.run(ens, self.driver, model.C_bar, self.basis, coeffs0, f=model.f_bar)
            y0s.append(sol.y0)
            errs.append(sol.y0_stderr)
            sizes.append(sol.n_paths)
        y0, se = combine_chunks(y0s, errs, sizes)

        self.homogenized = HomogenizedResult(
            y0=y0,
            stderr=se,
            n_paths=int(sum(sizes)),
            dt=dt,
            a_bar=model.a_bar,
            C_bar=model.C_bar,
            C_bar_stderr=model.C_bar_stderr or 0.0,
            oracle=self._radial_oracle(model),
        )
        return self.homogenized

    def _radial_oracle(self, model: EffectiveModel) -> Optional[float]:
        sigma2 = model.isotropic_sigma2
        if self.domain.kind != "disk" or sigma2 is None or not self.driver.is_radial:
            return None
        trivial = max(float(np.max(np.abs(g.values))) for g in model.correctors.grad_omega) <= 1e-10
        if not (self.driver.z_affine or trivial):
            return None
        try:
            problem = RadialProblem(
                a_bar_scalar=sigma2,
                C_bar=min(0.0, model.C_bar),
                radius=self.domain.bounding_radius,
                horizon=self.cfg.horizon,
                g_radial=self.driver.g_radial,
                f_bar_radial=self.driver.f_radial,
                nr=self.cfg.reference_nr,
                nt=self.cfg.reference_nt,
                dim=self.coeffs.dim,
            )
        except OracleInapplicableError:
            return None
        solution = self.reference.run(problem)
        return solution.at(float(np.linalg.norm(self.cfg.x0)))

    # ----------------------------------------------------------- convergence

    def convergence_sweep(self) -> pd.DataFrame:
        """Run the whole pipeline under the orchestrator and write convergence.csv."""
        if len(self.cfg.epsilons) < 3:
            raise PreconditionError(f"a convergence sweep needs at least 3 epsilon values, got {len(self.cfg.epsilons)}")
        orchestrator = PipelineOrchestrator(self.storage, self.cfg.epsilons)
        pipeline_state: Dict[str, Any] = {
            'cell_done': False,
            'eps_done': [],
            'boundary_done': False,
            'homogenized_done': False,
            'report_written': False
        }
        table = None
        while True:
            task = orchestrator.decide_next_task(pipeline_state)
            if task == 'complete':
                break
            if task == 'run_cell':
                self.cell_model()
                pipeline_state['cell_done'] = True
            elif task == 'run_epsilon':
                eps = orchestrator.next_epsilon(pipeline_state)
                self.solve_epsilon_problem(eps)
                pipeline_state['eps_done'] = pipeline_state['eps_done'] + [eps]
            elif task == 'estimate_boundary':
                self.estimate_boundary()
                pipeline_state['boundary_done'] = True
            elif task == 'run_homogenized':
                self.solve_homogenized()
                pipeline_state['homogenized_done'] = True
            elif task == 'write_report':
                table = self.convergence_table()
                self.storage.save_table("convergence", table)
                self.storage.save_json("convergence_summary", self.convergence_summary(table))
                pipeline_state['report_written'] = True
        return table

    def convergence_table(self) -> pd.DataFrame:
        u0 = self.homogenized
        rows: List[Dict[str, Any]] = []
        previous = None
        for eps in self.cfg.epsilons:
            r = self.eps_results[eps]
            gap = abs(r.y0 - u0.y0)
            combined = math.sqrt(r.stderr ** 2 + u0.stderr ** 2)
            non_monotone = False
            if previous is not None:
                non_monotone = gap - previous[0] > combined + previous[1]
            rows.append({
                "epsilon": eps,
                "y0": r.y0,
                "stderr": r.stderr,
                "gap": gap,
                "combined_stderr": combined,
                "log_epsilon": math.log(eps),
                "log_gap": math.log(gap) if gap > 0 else float("nan"),
                "K_mean": r.k_mean,
                "K_second_moment": r.k_second_moment,
                "cond_n_min": float("nan") if r.cond_n_min is None else r.cond_n_min,
                "non_monotone": non_monotone,
                "n_paths": r.n_paths,
                "dt": r.dt,
            })
            previous = (gap, combined)
        rows.append({
            "epsilon": 0.0,
            "y0": u0.y0,
            "stderr": u0.stderr,
            "gap": 0.0,
            "combined_stderr": u0.stderr,
            "log_epsilon": float("nan"),
            "log_gap": float("nan"),
            "K_mean": float("nan"),
            "K_second_moment": float("nan"),
            "cond_n_min": float("nan"),
            "non_monotone": False,
            "n_paths": u0.n_paths,
            "dt": u0.dt,
        })
        frame = pd.DataFrame(rows)
        frame["u0_oracle"] = float("nan") if u0.oracle is None else u0.oracle
        return frame

    @staticmethod
    def convergence_summary(table: pd.DataFrame) -> Dict[str, Any]:
        eps_rows = table[table["epsilon"] > 0]
        finite = eps_rows[np.isfinite(eps_rows["log_gap"])]
        slope = float("nan")
        if len(finite) >= 2:
            slope = float(np.polyfit(finite["log_epsilon"], finite["log_gap"], 1)[0])
        return {
            "log_log_slope": slope,
            "final_gap": float(eps_rows["gap"].iloc[-1]),
            "final_combined_stderr": float(eps_rows["combined_stderr"].iloc[-1]),
            "non_monotone": bool(eps_rows["non_monotone"].any()),
        }

    # ----------------------------------------------------------- diagnostics

    def averaging_diagnostic(self, psi_spec: Optional[str] = None, kind: str = "volume") -> pd.DataFrame:
        """Second moment of int psi(X/eps) dr (volume) or int psi(X/eps) dK (boundary) over epsilon."""
        if kind not in ("volume", "boundary"):
            raise PreconditionError(f"averaging kind must be volume or boundary, got '{kind}'")
        spec = psi_spec or self.cfg.psi
        psi = catalog.torus_function(spec)
        energy = None
        if kind == "volume":
            energy = self._volume_energy(psi)

        order = sorted(self.cfg.epsilons)
        computed: Dict[float, Dict[str, Any]] = {}
        boundary_mean = None
        for eps in order:
            dt, horizon, paths = self.cfg.epsilon_schedule(eps, horizon=self.cfg.diagnose_horizon)
            seed = derive_seed(self.cfg.seed, DIAGNOSE_STREAM, int(round(eps * 1e9)))
            s2 = s4 = k1 = k2 = 0.0
            n = 0
            for index, ens in enumerate(self._chunks(self.coeffs, eps, dt, horizon, paths, seed)):
                ens = ens.kept()
                if kind == "volume":
                    vals = psi(ens.states[:, :-1].reshape(-1, ens.dim) / eps).reshape(ens.n_paths, ens.steps)
                    integral = vals.sum(axis=1) * ens.dt
                else:
                    vals = psi(ens.states[:, 1:].reshape(-1, ens.dim) / eps).reshape(ens.n_paths, ens.steps)
                    integral = np.sum(vals * ens.d_k, axis=1)
                    if eps == order[0] and index == 0:
                        boundary_mean = self._boundary_centering(psi, ens, spec)
                s2 += float(np.sum(integral ** 2))
                s4 += float(np.sum(integral ** 4))
                k_t = ens.k_terminal
                k1 += float(k_t.sum())
                k2 += float((k_t ** 2).sum())
                n += ens.n_paths
            moment = s2 / n
            var = max(s4 / n - moment ** 2, 0.0)
            computed[eps] = {
                "epsilon": eps,
                "second_moment": moment,
                "stderr": math.sqrt(var / (n - 1)) if n > 1 else 0.0,
                "prediction": eps ** 2 * horizon * energy if energy is not None else float("nan"),
                "K_mean": k1 / n,
                "K_second_moment": k2 / n,
                "n_paths": n,
            }

        rows = [computed[eps] for eps in self.cfg.epsilons]
        first = rows[0]["second_moment"]
        for row in rows:
            row["ratio_to_first"] = row["second_moment"] / first if first > 0 else float("nan")
        table = pd.DataFrame(rows)
        positive = table[table["second_moment"] > 0]
        slope = float("nan")
        if len(positive) >= 2:
            slope = float(np.polyfit(np.log(positive["epsilon"]), np.log(positive["second_moment"]), 1)[0])
        self.storage.save_table(f"averaging_{kind}", table)
        self.storage.save_json(f"averaging_{kind}_summary", {
            "psi": spec,
            "kind": kind,
            "log_log_slope": slope,
            "cell_energy": energy,
            "boundary_mean": boundary_mean,
        })
        return table

    def _volume_energy(self, psi) -> float:
        """int <A grad phi, grad phi> m for L phi = -psi; refuses psi with int psi m != 0."""
        model = self.cell_model()
        m = model.m
        values = np.asarray(psi(grid_points(m.n, m.dim)), dtype=float)
        mean = float(np.mean(values * m.values))
        if abs(mean) > 1e-6:
            raise CenteringError(f"averaging needs int psi m = 0; got {mean:.3e}")
        phi = solve_cell_poisson(self.coeffs, m, values, method=self.cfg.cell_solver)
        op = assemble_operator(self.coeffs, m.n)
        grad = np.stack([op.stencils.centered[l] @ phi.values for l in range(m.dim)], axis=-1)
        dens = np.einsum("ni,nij,nj->n", grad, op.grid.a, grad)
        return float(np.mean(dens * m.values))

    def _boundary_centering(self, psi, ens: ReflectedPathEnsemble, spec: str) -> Dict[str, float]:
        avg = local_time_average(psi, ens)
        if abs(avg.value) > 4.0 * avg.std_error + 1e-6:
            raise CenteringError(
                f"boundary average of {spec} is {avg.value:.4f} +/- {avg.std_error:.4f}; "
                "the function is not centered for the boundary measure"
            )
        return avg.to_dict()

    def quadratic_variation_diagnostic(self) -> pd.DataFrame:
        """Time-averaged quadratic variation of grad omega~(X/eps)^T dM against a_bar."""
        model = self.cell_model()
        field_ = model.correctors.grad_omega_tilde
        dim = self.coeffs.dim
        rows = []
        for eps in self.cfg.epsilons:
            dt, horizon, paths = self.cfg.epsilon_schedule(eps)
            seed = derive_seed(self.cfg.seed, VARIATION_STREAM, int(round(eps * 1e9)))
            acc = np.zeros((dim, dim))
            n = 0
            for ens in self._chunks(self.coeffs, eps, dt, horizon, paths, seed):
                ens = ens.kept()
                for start in range(0, ens.steps, 32):
                    stop = min(start + 32, ens.steps)
                    pts = ens.states[:, start:stop].reshape(-1, dim) / eps
                    g = field_.interpolate(pts)
                    dm = ens.d_m[:, start:stop].reshape(-1, dim)
                    mt = np.einsum("nli,nl->ni", g, dm)
                    acc += mt.T @ mt
                n += ens.n_paths
            qv = acc / (n * horizon)
            row: Dict[str, Any] = {"epsilon": eps}
            for i in range(dim):
                for j in range(dim):
                    row[f"qv_{i}{j}"] = float(qv[i, j])
            row["gap"] = float(np.max(np.abs(qv - model.a_bar)))
            row["n_paths"] = n
            rows.append(row)
        table = pd.DataFrame(rows)
        self.storage.save_table("quadratic_variation", table)
        return table

    def seed_sensitivity(self, eps: Optional[float] = None) -> Dict[str, Any]:
        """Rerun one epsilon problem from a disjoint master seed; agreement within 3 combined stderr."""
        eps = min(self.cfg.epsilons) if eps is None else eps
        first = self.eps_results.get(eps) or self.solve_epsilon_problem(eps)
        alt_master = derive_seed(self.cfg.seed, ALTERNATE_MASTER)
        other = HomogenizationHarness(replace(self.cfg, seed=alt_master % 2 ** 63), self.storage)
        second = other.solve_epsilon_problem(eps)
        combined = math.sqrt(first.stderr ** 2 + second.stderr ** 2)
        diff = abs(first.y0 - second.y0)
        result = {
            "epsilon": eps,
            "y0_a": first.y0,
            "stderr_a": first.stderr,
            "y0_b": second.y0,
            "stderr_b": second.stderr,
            "difference": diff,
            "combined_stderr": combined,
            "agree": bool(diff <= 3.0 * combined + 1e-12),
        }
        self.storage.save_table("seed_sensitivity", [result])
        return result
