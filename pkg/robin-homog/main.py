#!/usr/bin/env python3
"""
robin-homog: probabilistic periodic homogenization with an oscillating Robin boundary.

Subcommands:
  cell       invariant measure, correctors, effective coefficients
  simulate   reflected path ensemble at one epsilon (optional binary dump)
  bsde       backward scheme on a dumped or freshly simulated ensemble
  reference  radial Crank-Nicolson oracle on a disk
  converge   full pipeline: epsilon runs, homogenized run, convergence table
  diagnose   averaging, quadratic-variation and seed-sensitivity diagnostics
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from config import Config
from harness import ExperimentConfig, HomogenizationHarness
from tools import StorageManager, read_ensemble
from tools import catalog
from tools.errors import NumericalError, PreconditionError
from tools.reference_solver import RadialProblem
from tools.reflected_sde import SimConfig
from tools.regression import RegressionBasis


class RobinHomogApp:
    """Main application class: one subcommand per run folder."""

    def __init__(self, config: Config):
        self.config = config
        self.run_folder: Optional[Path] = None
        self.storage: Optional[StorageManager] = None
        self.harness: Optional[HomogenizationHarness] = None

    def initialize_run(self, command: str):
        """Initialize a new run with timestamped folder."""
        self.run_folder = self.config.create_run_folder(command)
        self.storage = StorageManager(self.run_folder)
        self.harness = HomogenizationHarness(ExperimentConfig.from_config(self.config), self.storage)

        print(f"\n✓ Initialized run folder: {self.run_folder}")
        print(f"  Threads: {self.config.threads}")

        self.storage.log_trace("system_init", {
            "run_folder": str(self.run_folder),
            "command": command,
            "config": self.config.to_dict()
        })

    # ------------------------------------------------------------------ cell

    def run_cell(self, args: argparse.Namespace) -> int:
        cfg = self.harness.cfg
        print(f"\n[1/1] Cell step: {cfg.family} on a {cfg.grid_n}^{len(cfg.x0)} grid")
        model = self.harness.cell_model()
        rows = self.harness.cell.report_rows(model, cfg.p_list)
        self.storage.save_table("cell_report", rows)
        self.storage.save_json("cell_report", model.report)
        print(f"  ✓ a_bar = {np.round(model.a_bar, 6).tolist()}")
        print(f"  ✓ m in [{model.report['m_min']:.6f}, {model.report['m_max']:.6f}]")
        for p in cfg.p_list:
            print(f"  ✓ ||e_i + grad omega_i||_{p:g} = {np.round(model.report[f'lp_{p:g}'], 6).tolist()}")
        return 0

    # ------------------------------------------------------------ simulation

    def _sim_config(self, args: argparse.Namespace) -> SimConfig:
        cfg = self.harness.cfg
        eps = args.epsilon if args.epsilon is not None else min(cfg.epsilons)
        dt, horizon, paths = cfg.epsilon_schedule(eps)
        return SimConfig(
            epsilon=eps,
            dt=args.dt or dt,
            horizon=args.horizon or horizon,
            n_paths=args.paths or paths,
            x0=tuple(cfg.x0),
            seed=cfg.seed,
            dk_max=cfg.dk_max,
            dt_cell=cfg.dt_cell,
            workers=cfg.workers,
            memory_cap_bytes=cfg.memory_cap_bytes,
        )

    def run_simulate(self, args: argparse.Namespace) -> int:
        sim = self._sim_config(args)
        print(f"\n[1/1] Simulating {sim.n_paths} paths at eps={sim.epsilon:g}, dt={sim.dt:g}, T={sim.horizon:g}")
        ensemble = self.harness.simulation.run(self.harness.coeffs, self.harness.domain, sim)
        summary = self.harness.simulation.summary(ensemble)
        self.storage.save_table("simulation", [summary])
        print(f"  ✓ E K_T = {summary['k_mean']:.6f} +/- {summary['k_mean_stderr']:.6f}")
        print(f"  ✓ boundary fraction {summary['boundary_fraction']:.4f}, aborted {summary['aborted']}")
        if args.dump:
            path = self.storage.save_ensemble(ensemble)
            print(f"  ✓ Ensemble written to {path}")
        return 0

    # ------------------------------------------------------------------ bsde

    def run_bsde(self, args: argparse.Namespace) -> int:
        h = self.harness
        if args.ensemble:
            ensemble = read_ensemble(Path(args.ensemble))
            print(f"\n[1/2] Loaded {ensemble.n_paths} paths from {args.ensemble}")
        else:
            sim = self._sim_config(args)
            print(f"\n[1/2] Simulating {sim.n_paths} paths at eps={sim.epsilon:g}")
            ensemble = h.simulation.run(h.coeffs, h.domain, sim)
        basis = _parse_basis(args.basis, h.basis) if args.basis else h.basis

        print(f"\n[2/2] Backward scheme with {basis.describe()}")
        solution = h.bsde.run(ensemble, h.driver, h.coeffs.c, basis, h.coeffs)
        row = {"epsilon": ensemble.epsilon, **solution.to_row()}
        self.storage.save_table("bsde", [row])
        print(f"  ✓ y0 = {solution.y0:.6f} +/- {solution.y0_stderr:.6f}")
        return 0

    # ------------------------------------------------------------- reference

    def run_reference(self, args: argparse.Namespace) -> int:
        h = self.harness
        if h.domain.kind != "disk":
            raise PreconditionError("the radial reference solver needs a disk domain")
        if not h.driver.is_radial:
            raise PreconditionError(f"driver {h.driver.name} has no radial form")
        c_bar = args.c_bar if args.c_bar is not None else h.constant_robin()
        if c_bar is None:
            raise PreconditionError("reference needs a constant Robin coefficient; pass --c-bar")
        problem = RadialProblem(
            a_bar_scalar=args.sigma2,
            C_bar=c_bar,
            radius=h.domain.bounding_radius,
            horizon=h.cfg.horizon,
            g_radial=h.driver.g_radial,
            f_bar_radial=h.driver.f_radial,
            nr=h.cfg.reference_nr,
            nt=h.cfg.reference_nt,
            dim=h.coeffs.dim,
        )
        print(f"\n[1/1] Radial reference: sigma2={args.sigma2:g}, C={c_bar:g}, nr={problem.nr}, nt={problem.nt}")
        solution = h.reference.run(problem)
        self.storage.save_table("reference", h.reference.profile_rows(solution))
        print(f"  ✓ u(0, 0) = {solution.u_center:.8f}")
        return 0

    # -------------------------------------------------------------- converge

    def run_converge(self, args: argparse.Namespace) -> int:
        print("\n" + "=" * 60)
        print("Convergence sweep u^eps -> u0")
        print("=" * 60)
        table = self.harness.convergence_sweep()
        for row in table.to_dict("records"):
            label = "u0" if row["epsilon"] == 0 else f"eps={row['epsilon']:g}"
            mark = "✗" if row["non_monotone"] else "✓"
            print(f"  {mark} {label}: y0={row['y0']:.6f} +/- {row['stderr']:.6f}  gap={row['gap']:.6f}")
        summary = self.harness.convergence_summary(table)
        print(f"  log-log slope: {summary['log_log_slope']:.3f}")
        return 0

    # -------------------------------------------------------------- diagnose

    def run_diagnose(self, args: argparse.Namespace) -> int:
        kind = args.kind or self.config["diagnose.kind"]
        print(f"\n[1/1] Diagnostic: {kind}")
        if kind in ("volume", "boundary"):
            table = self.harness.averaging_diagnostic(args.psi, kind)
            for row in table.to_dict("records"):
                print(f"  ✓ eps={row['epsilon']:g}: E[I^2]={row['second_moment']:.3e} +/- {row['stderr']:.1e}")
        elif kind == "qv":
            table = self.harness.quadratic_variation_diagnostic()
            for row in table.to_dict("records"):
                print(f"  ✓ eps={row['epsilon']:g}: max |QV - a_bar| = {row['gap']:.4f}")
        elif kind == "seed":
            result = self.harness.seed_sensitivity()
            mark = "✓" if result["agree"] else "✗"
            print(f"  {mark} |y0_a - y0_b| = {result['difference']:.6f} vs combined stderr {result['combined_stderr']:.6f}")
        else:
            raise PreconditionError(f"unknown diagnostic '{kind}'")
        return 0


def _parse_basis(text: str, default: RegressionBasis) -> RegressionBasis:
    """'deg=K', 'polynomial(K)' or 'radial(centers, width)'."""
    if text.startswith("deg="):
        try:
            return RegressionBasis(kind="polynomial", degree=int(text[4:]), scale=default.scale, dim=default.dim)
        except ValueError as exc:
            raise PreconditionError(f"cannot read basis '{text}'") from exc
    name, args = catalog.parse_spec(text)
    if name == "polynomial":
        degree = int(args[0]) if args else default.degree
        return RegressionBasis(kind="polynomial", degree=degree, scale=default.scale, dim=default.dim)
    if name == "radial":
        centers = int(args[0]) if args else default.centers
        width = float(args[1]) if len(args) > 1 else default.width
        return RegressionBasis(kind="radial", centers=centers, width=width, scale=default.scale, dim=default.dim)
    raise PreconditionError(f"unknown basis '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robin-homog", description=__doc__.splitlines()[1])
    parser.add_argument("--verbose", "-v", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--family", help="coefficient family, e.g. layered(0.5)")
        p.add_argument("--robin", help="Robin field, e.g. oscillating(-1,0.5)")
        p.add_argument("--domain", help="disk(R) or ellipse(a,b)")
        p.add_argument("--driver", help="driver f, e.g. decay-tilt(0.1)")
        p.add_argument("--terminal", help="terminal value g, e.g. paraboloid(0.5)")

    def sim_flags(p: argparse.ArgumentParser):
        p.add_argument("--epsilon", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--horizon", type=float)
        p.add_argument("--paths", type=int)

    p = sub.add_parser("cell", help="solve the cell problems")
    common(p)
    p.add_argument("--grid-n", type=int)
    p.add_argument("--p-list", help="comma-separated exponents")

    p = sub.add_parser("simulate", help="simulate a reflected path ensemble")
    common(p)
    sim_flags(p)
    p.add_argument("--dump", action="store_true", help="write the ensemble as ensemble.bin")

    p = sub.add_parser("bsde", help="solve the backward equation on an ensemble")
    common(p)
    sim_flags(p)
    p.add_argument("--ensemble", help="ensemble dump written by simulate --dump")
    p.add_argument("--basis", help="deg=K, polynomial(K) or radial(centers,width)")

    p = sub.add_parser("reference", help="radial Crank-Nicolson oracle")
    common(p)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--c-bar", type=float)
    p.add_argument("--nr", type=int)
    p.add_argument("--nt", type=int)

    p = sub.add_parser("converge", help="convergence sweep over the epsilon list")
    common(p)

    p = sub.add_parser("diagnose", help="averaging and martingale diagnostics")
    common(p)
    p.add_argument("--kind", choices=("volume", "boundary", "qv", "seed"))
    p.add_argument("--psi", help="torus function, e.g. sin(1)")
    return parser


FLAG_KEYS = {
    "seed": "seed",
    "family": "family",
    "robin": "robin",
    "driver": "driver.f",
    "terminal": "driver.g",
    "grid_n": "grid_n",
    "p_list": "p_list",
    "nr": "reference.nr",
    "nt": "reference.nt",
}


def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "domain", None):
        name, values = catalog.parse_spec(args.domain)
        overrides["domain.kind"] = name
        if name == "disk" and values:
            overrides["domain.radius"] = str(values[0])
        elif name == "ellipse" and values:
            overrides["domain.semi_axes"] = ",".join(str(v) for v in values)
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns 0, 2 on precondition rejection, 1 on numerical failure."""
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    app = None
    try:
        config = Config(args.config)
        config.apply(args.set)
        for key, value in _flag_overrides(args).items():
            config.set(key, value)
        app = RobinHomogApp(config)
        app.initialize_run(args.command)
        code = getattr(app, f"run_{args.command}")(args)
    except PreconditionError as e:
        print(f"\n✗ Rejected: {e}")
        return 2
    except NumericalError as e:
        print(f"\n✗ Numerical failure: {e}")
        return 1

    print("\n" + "=" * 60)
    print(f"✓ {args.command} completed")
    print(f"  Outputs saved to: {app.run_folder}")
    print("=" * 60)
    return code


if __name__ == "__main__":
    sys.exit(main())
