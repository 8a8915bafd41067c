"""Scenario configuration, the built-in experiments, runs and convergence studies."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from . import io
from .basis import ConfigurationError, gauss_rule
from .catalog import CatalogFunction
from .limiter import LimiterConfig
from .mesh import DGField, Mesh1D, l1_error, project
from .poisson import ChargeDensity, DirichletPotential, NeumannPinned, compatibility_residual
from .stepper import (EnergyTrace, SemiDiscreteSystem, SolverFailure, State, StepperConfig, integrate,
                      inverse_constant, linear_mu_limit)
from .transport import DirichletConcentration, FluxParams, default_p_flux

log = logging.getLogger(__name__)

OUT_DIR_ENV = "PNPDG_OUT_DIR"
DEFAULT_OUT_DIR = "pnpdg-out"
COMPATIBILITY_TOL = 1e-8
MASS_TOL = 1e-10
DEFAULT_MU = 0.05
MU_SAFETY = 0.6

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


@dataclass
class ScenarioConfig:
    """Flat, JSON-compatible description of one simulation.

    Functions are catalog references (see :mod:`pnpdg.catalog`).  ``None``
    for ``beta0``/``beta1``, ``beta0_psi``, ``delta`` or ``mu`` selects the
    documented default for the chosen degree.
    """

    name: str = "custom"
    a: float = 0.0
    b: float = 1.0
    N: int = 100
    k: int = 2
    charges: list = field(default_factory=lambda: [1.0])
    initial: list = field(default_factory=lambda: [1.0])
    species_bc: str = "zero-flux"
    c_left: Optional[list] = None
    c_right: Optional[list] = None
    rho0: Any = None
    psi_bc: str = "neumann"
    sigma_a: Any = 0.0
    sigma_b: Any = 0.0
    psi_a: float = 0.0
    psi_l: Optional[float] = None
    psi_r: Optional[float] = None
    beta0: Optional[float] = None
    beta1: Optional[float] = None
    beta0_psi: Optional[float] = None
    delta: Optional[float] = None
    scheme: str = "rk2"
    mu: Optional[float] = None
    T: float = 1.0
    stride: int = 1
    quadrature: Optional[int] = None
    sources: Optional[list] = None
    exact: Optional[list] = None
    snapshot_every: int = 0
    samples_per_cell: int = 5
    strict: bool = False
    jit: bool = True

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Union[str, Path], base: Optional[str] = None) -> "ScenarioConfig":
        """Read a JSON object; a ``scenario`` key (or ``base``) names a built-in to start from."""
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
        base = doc.pop("scenario", base)
        if base is not None:
            merged = builtin_scenario(base).to_dict()
            merged.update(doc)
            doc = merged
        return cls.from_dict(doc)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    def replace(self, **changes) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    # -- derived quantities ----------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.charges)

    def validate(self) -> None:
        if not (isinstance(self.N, int) and self.N >= 1):
            raise ConfigurationError(f"N must be a positive integer, got {self.N!r}")
        if not (isinstance(self.k, int) and self.k >= 0):
            raise ConfigurationError(f"k must be a nonnegative integer, got {self.k!r}")
        if not self.b > self.a:
            raise ConfigurationError("need a < b")
        if self.m < 1 or len(self.initial) != self.m:
            raise ConfigurationError("charges and initial data must list the same, nonzero number of species")
        if self.species_bc not in ("zero-flux", "dirichlet"):
            raise ConfigurationError(f"species_bc must be 'zero-flux' or 'dirichlet', got {self.species_bc!r}")
        if self.psi_bc not in ("neumann", "dirichlet"):
            raise ConfigurationError(f"psi_bc must be 'neumann' or 'dirichlet', got {self.psi_bc!r}")
        if self.psi_bc == "dirichlet" and (self.psi_l is None or self.psi_r is None):
            raise ConfigurationError("Dirichlet potential needs psi_l and psi_r")
        if self.species_bc == "dirichlet":
            if self.psi_bc != "dirichlet":
                raise ConfigurationError("Dirichlet concentrations require a Dirichlet potential")
            if self.c_left is None or self.c_right is None or len(self.c_left) != self.m \
                    or len(self.c_right) != self.m:
                raise ConfigurationError("Dirichlet concentrations need c_left and c_right for every species")
        if self.beta0 is None and self.k not in (1, 2, 3):
            raise ConfigurationError(f"k={self.k} has no default flux; set beta0 and beta1")
        if self.sources is not None and len(self.sources) != self.m:
            raise ConfigurationError("sources must list one entry (or null) per species")
        if self.exact is not None and len(self.exact) != self.m + 1:
            raise ConfigurationError("exact must list every species followed by the potential")
        if self.T < 0 or self.stride < 1 or self.snapshot_every < 0 or self.samples_per_cell < 1:
            raise ConfigurationError("need T >= 0, stride >= 1, snapshot_every >= 0, samples_per_cell >= 1")
        if self.mu is not None and self.mu <= 0:
            raise ConfigurationError("mu must be positive")
        if self.delta is not None and self.delta < 0:
            raise ConfigurationError("delta must be nonnegative")
        StepperConfig(self.scheme, 1.0, 1.0, 1)  # scheme name check

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.N

    def p_flux(self) -> FluxParams:
        if self.beta0 is None and self.beta1 is None:
            return default_p_flux(self.k)
        base = default_p_flux(self.k) if self.k in (1, 2, 3) else FluxParams(1.0, 0.0)
        beta0 = base.beta0 if self.beta0 is None else self.beta0
        beta1 = base.beta1 if self.beta1 is None else self.beta1
        return FluxParams(float(beta0), float(beta1))

    def mu_limit(self) -> float:
        return linear_mu_limit(self.k, self.p_flux())

    def mu_value(self) -> float:
        """Configured ``mu``, or 0.05 capped at 60% of the linear stability limit."""
        if self.mu is not None:
            return float(self.mu)
        return min(DEFAULT_MU, MU_SAFETY * self.mu_limit())

    def delta_value(self) -> float:
        return LimiterConfig.default_delta(self.h, self.k) if self.delta is None else float(self.delta)

    def stepper_config(self) -> StepperConfig:
        return StepperConfig(self.scheme, self.mu_value(), float(self.T), self.stride)

    def exact_functions(self) -> Optional[list[CatalogFunction]]:
        return None if self.exact is None else [CatalogFunction(r) for r in self.exact]

    # -- assembly ---------------------------------------------------------------
    def potential_boundary(self):
        if self.psi_bc == "dirichlet":
            return DirichletPotential(float(self.psi_l), float(self.psi_r))
        return NeumannPinned(_time_value(self.sigma_a), _time_value(self.sigma_b), float(self.psi_a))

    def build(self) -> tuple[SemiDiscreteSystem, State]:
        """Assemble the discrete system and the projected initial state."""
        self.validate()
        mesh = Mesh1D.uniform(self.a, self.b, self.N)
        rule = gauss_rule(self.quadrature) if self.quadrature else None
        rho0 = CatalogFunction(self.rho0).of_x() if self.rho0 is not None else None
        species_bcs = None
        if self.species_bc == "dirichlet":
            species_bcs = [DirichletConcentration(float(l), float(r)) for l, r in zip(self.c_left, self.c_right)]
        sources = None
        if self.sources is not None:
            sources = [None if s is None else _source(s) for s in self.sources]
        system = SemiDiscreteSystem(
            mesh, self.k, [float(q) for q in self.charges], self.p_flux(), self.potential_boundary(),
            psi_beta0=self.beta0_psi, rho0=rho0, species_boundaries=species_bcs, sources=sources,
            limiter=LimiterConfig(self.delta_value()), rule=rule, jit=self.jit)
        c0 = np.stack([project(CatalogFunction(r).of_x(0.0), mesh, self.k).coeffs for r in self.initial])
        if self.psi_bc == "neumann":
            sa, sb = system.sigmas(0.0)
            fields = [DGField(mesh, ci) for ci in c0]
            res = compatibility_residual(ChargeDensity(self.charges, fields, rho0), sa, sb)
            if abs(res) > COMPATIBILITY_TOL:
                raise ConfigurationError(
                    f"initial data violate the Neumann compatibility condition (residual {res:.3e})")
        return system, system.initial_state(c0)


def _time_value(ref):
    if isinstance(ref, (int, float)) and not isinstance(ref, bool):
        return float(ref)
    fn = CatalogFunction(ref)
    if fn.kind != "t":
        raise ConfigurationError(f"boundary datum {ref!r} must be a function of t")
    return fn


def _source(ref):
    fn = CatalogFunction(ref)
    if fn.separable:
        return fn._fn
    return fn.of_tx()


# -- built-in experiments ----------------------------------------------------------

_BUILTIN_DOC = {
    "example1": "manufactured two-species solution with sources; convergence tests and long-time positivity",
    "example2": "two monovalent species relaxing to the constant steady state c = 3, psi = 0",
    "example3": "non-monovalent species (q = 1, -2) with fixed charge 12 (x - 1/2)^2",
    "example4": "single species attracted to x = 1 by the boundary field psi_x(1) = -3/2",
}


def list_scenarios() -> dict[str, str]:
    return dict(_BUILTIN_DOC)


def builtin_scenario(name: str) -> ScenarioConfig:
    if name == "example1":
        cfg = ScenarioConfig(
            name=name, charges=[1.0, -1.0], initial=["ex1.c1", "ex1.c2"],
            sigma_a=0.0, sigma_b="ex1.sigma_b", psi_a=0.0,
            sources=["ex1.f1", "ex1.f2"], exact=["ex1.c1", "ex1.c2", "ex1.psi"],
            # the exact solution touches zero at both ends and decays like e^-t,
            # so any fixed positive floor is eventually above the true averages
            delta=0.0, T=0.1)
    elif name == "example2":
        cfg = ScenarioConfig(name=name, charges=[1.0, -1.0], initial=["ex2.c1", "ex2.c2"], T=1.0)
    elif name == "example3":
        cfg = ScenarioConfig(name=name, charges=[1.0, -2.0], initial=["ex3.c1", "ex3.c2"],
                             rho0="ex3.rho0", T=1.0)
    elif name == "example4":
        cfg = ScenarioConfig(name=name, charges=[1.0], initial=["ex4.c"], sigma_a=0.0, sigma_b=-1.5, T=1.0)
    else:
        raise ConfigurationError(f"unknown scenario {name!r}; choose from {', '.join(sorted(_BUILTIN_DOC))}")
    cfg.validate()
    return cfg


# -- single runs --------------------------------------------------------------------

@dataclass
class RunResult:
    status: int
    out_dir: Path
    summary: dict
    final: Optional[State] = None
    trace: Optional[EnergyTrace] = None
    system: Optional[SemiDiscreteSystem] = None


def default_out_dir(name: str) -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)) / name


def field_names(m: int) -> list[str]:
    return [f"c{i + 1}" for i in range(m)] + ["psi"]


def _state_fields(system: SemiDiscreteSystem, state: State) -> dict[str, DGField]:
    fields = {f"c{i + 1}": DGField(system.mesh, state.c[i]) for i in range(system.m)}
    fields["psi"] = DGField(system.mesh, state.psi)
    return fields


def write_snapshot(system: SemiDiscreteSystem, state: State, out_dir: Path, tag: str,
                   samples_per_cell: int) -> list[Path]:
    paths = []
    fields = _state_fields(system, state)
    for name, f in fields.items():
        paths.append(io.write_snapshot_csv(f, out_dir / f"snapshot_{tag}_{name}.csv", samples_per_cell))
    paths.append(io.write_coefficients_json(fields, out_dir / f"coeffs_{tag}.json", state.t))
    return paths


def l1_errors(config: ScenarioConfig, system: SemiDiscreteSystem, state: State) -> dict[str, float]:
    exact = config.exact_functions()
    if exact is None:
        raise ConfigurationError("no exact solution configured")
    fields = _state_fields(system, state)
    return {name: l1_error(fields[name], ref.of_x(state.t)) for name, ref in zip(field_names(system.m), exact)}


def solve(config: ScenarioConfig, on_step=None) -> tuple[SemiDiscreteSystem, State, EnergyTrace]:
    """Build and integrate without writing files."""
    system, state0 = config.build()
    final, trace = integrate(system, state0, config.stepper_config(), on_step=on_step)
    return system, final, trace


def run(config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Integrate one scenario and write trace, snapshots and a summary.

    Configuration errors propagate as :class:`ConfigurationError`; solver
    failures are reported through the exit status and the summary.
    """
    out = Path(out_dir) if out_dir is not None else default_out_dir(config.name)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    system, state0 = config.build()
    stepper_cfg = config.stepper_config()
    summary: dict[str, Any] = {
        "scenario": config.name,
        "config": config.to_dict(),
        "dt": stepper_cfg.dt(system.h),
        "mu": stepper_cfg.mu,
        "mu_linear_limit": config.mu_limit(),
        "inverse_constant": inverse_constant(config.k, config.p_flux().beta0),
        "delta": system.limiter.delta,
        "energy_checked": system.closed,
        "mass_checked": system.conservative,
    }
    if stepper_cfg.mu > config.mu_limit():
        log.warning("mu=%.4g exceeds the linear stability limit %.4g", stepper_cfg.mu, config.mu_limit())
    write_snapshot(system, state0, out, "initial", config.samples_per_cell)

    def on_step(n: int, state: State) -> None:
        if config.snapshot_every and n > 0 and n % config.snapshot_every == 0:
            write_snapshot(system, state, out, f"{n:08d}", config.samples_per_cell)

    status = EXIT_OK
    final = trace = None
    try:
        final, trace = integrate(system, state0, stepper_cfg, on_step=on_step)
    except SolverFailure as exc:
        status = EXIT_SOLVER
        trace = getattr(exc, "trace", None)
        summary["error"] = str(exc)
        summary["failure_time"] = exc.t
        summary["failure_step"] = exc.step
        log.error("%s", exc)
    if trace is not None:
        io.write_trace_csv(trace, out / "trace.csv")
        summary.update({
            "steps": trace.steps,
            "energy_violations": trace.energy_violations,
            "max_mass_drift": trace.max_mass_drift,
            "min_cell_average": trace.min_cell_average,
            "limited_cells": trace.limited_total,
            "free_energy_initial": trace.rows[0][1 + system.m],
            "free_energy_final": trace.rows[-1][1 + system.m],
        })
    if final is not None:
        summary["final_time"] = final.t
        summary["masses_initial"] = system.masses(state0.c).tolist()
        summary["masses_final"] = system.masses(final.c).tolist()
        write_snapshot(system, final, out, "final", config.samples_per_cell)
        if config.exact is not None:
            summary["l1_errors"] = l1_errors(config, system, final)
        violations = []
        if trace.energy_violations:
            violations.append(f"free energy increased at {trace.energy_violations} steps")
        if system.conservative and trace.max_mass_drift > MASS_TOL:
            violations.append(f"relative mass drift {trace.max_mass_drift:.3e} > {MASS_TOL:g}")
        summary["violations"] = violations
        if violations:
            for v in violations:
                log.warning("invariant violation: %s", v)
            if config.strict:
                status = EXIT_INVARIANT
    summary["status"] = status
    summary["wall_time_s"] = time.perf_counter() - start
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return RunResult(status, out, summary, final, trace, system)


# -- convergence studies -----------------------------------------------------------

@dataclass
class ConvergenceRow:
    N: int
    h: float
    errors: dict
    orders: dict


@dataclass
class ConvergenceReport:
    label: str
    quantities: list
    rows: list = field(default_factory=list)

    def errors(self, name: str) -> np.ndarray:
        return np.array([r.errors[name] for r in self.rows])

    def orders(self, name: str) -> list:
        return [r.orders[name] for r in self.rows]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            header = ["N", "h"]
            for q in self.quantities:
                header += [f"{q}_error", f"{q}_order"]
            w.writerow(header)
            for r in self.rows:
                line = [r.N, io.fmt(r.h)]
                for q in self.quantities:
                    o = r.orders[q]
                    line += [io.fmt(r.errors[q]), "" if o is None else io.fmt(o)]
                w.writerow(line)
        return path

    def to_text(self) -> str:
        header = ["params", "h"]
        for q in self.quantities:
            header += [f"{q} error", "order"]
        lines = []
        for i, r in enumerate(self.rows):
            line = [self.label if i == 0 else "", f"{r.h:.4g}"]
            for q in self.quantities:
                o = r.orders[q]
                line += [f"{r.errors[q]:.5g}", "--" if o is None else f"{o:.4f}"]
            lines.append(line)
        widths = [max(len(x) for x in col) for col in zip(header, *lines)]
        out = [" | ".join(x.ljust(w) for x, w in zip(header, widths))]
        out.append("-+-".join("-" * w for w in widths))
        out += [" | ".join(x.ljust(w) for x, w in zip(line, widths)) for line in lines]
        return "\n".join(out)


def observed_order(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> Optional[float]:
    """``log(e_coarse / e_fine) / log(h_coarse / h_fine)``; undefined when either error is zero."""
    if not (e_coarse > 0 and e_fine > 0):
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def build_report(label: str, quantities: Sequence[str], Ns: Sequence[int], hs: Sequence[float],
                 errors: Sequence[dict]) -> ConvergenceReport:
    report = ConvergenceReport(label, list(quantities))
    for i, (N, h, err) in enumerate(zip(Ns, hs, errors)):
        orders = {q: None if i == 0 else observed_order(errors[i - 1][q], err[q], hs[i - 1], h)
                  for q in quantities}
        report.rows.append(ConvergenceRow(N, h, dict(err), orders))
    return report


def _errors_for(config: ScenarioConfig) -> dict:
    system, final, _ = solve(config)
    return l1_errors(config, system, final)


def convergence_study(config: ScenarioConfig, Ns: Sequence[int], out_dir: Optional[Union[str, Path]] = None,
                      workers: int = 1) -> ConvergenceReport:
    """Run ``config`` on each mesh size and tabulate l1 errors and observed orders."""
    if config.exact is None:
        raise ConfigurationError("convergence study needs an exact solution")
    configs = [config.replace(N=int(N)) for N in Ns]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(_errors_for, configs))
    else:
        errors = [_errors_for(c) for c in configs]
    prm = config.p_flux()
    label = f"({config.k},{prm.beta0:g},{prm.beta1:g})"
    report = build_report(label, field_names(config.m), [c.N for c in configs], [c.h for c in configs], errors)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / f"convergence_k{config.k}.csv")
        (out / f"convergence_k{config.k}.txt").write_text(report.to_text() + "\n")
    return report
