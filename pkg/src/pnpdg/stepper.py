"""Explicit time stepping, free energy and run diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import ConfigurationError, LegendreBasis, QuadratureRule, gauss_rule, q_volume
from .limiter import LimiterConfig, PositivityLost, limit_species
from .mesh import DGField, Mesh1D
from .poisson import DirichletPotential, NeumannPinned, PoissonOperator, PotentialBoundary
from .transport import DirichletConcentration, FluxParams, NernstPlanckOperator, check_admissible

log = logging.getLogger(__name__)

ENERGY_SLACK = 1e-10


class SolverFailure(RuntimeError):
    def __init__(self, t: float, step: int, cause: Exception):
        super().__init__(f"solver failed at t={t:.10g} (step {step}): {cause}")
        self.t = t
        self.step = step
        self.cause = cause


@dataclass
class Stage:
    """Everything computed from one concentration state: the algorithm's steps 2-5."""

    t: float
    c: np.ndarray          # limited concentrations (m, N, k+1)
    psi: np.ndarray        # (N, k+1)
    p: np.ndarray          # (m, N, k+1)
    dcdt: np.ndarray       # (m, N, k+1)
    limited: np.ndarray    # cells limited per species


@dataclass
class State:
    t: float
    c: np.ndarray
    psi: np.ndarray

    def fields(self, mesh: Mesh1D) -> list[DGField]:
        return [DGField(mesh, ci) for ci in self.c]

    def potential(self, mesh: Mesh1D) -> DGField:
        return DGField(mesh, self.psi)


class SemiDiscreteSystem:
    """The DG discretization of the full PNP system on one uniform mesh."""

    def __init__(self, mesh: Mesh1D, k: int, charges: Sequence[float], p_flux: FluxParams,
                 potential_boundary: PotentialBoundary, psi_beta0: Optional[float] = None,
                 rho0: Optional[Callable] = None,
                 species_boundaries: Optional[Sequence[Optional[DirichletConcentration]]] = None,
                 sources: Optional[Sequence[Optional[Callable]]] = None,
                 limiter: Optional[LimiterConfig] = None,
                 rule: Optional[QuadratureRule] = None, jit: bool = True):
        if not mesh.is_uniform:
            raise ConfigurationError("the solver requires a uniform mesh")
        self.mesh = mesh
        self.k = k
        self.h = mesh.h
        self.charges = np.asarray(charges, dtype=float)
        self.m = len(self.charges)
        self.rule = rule if rule is not None else gauss_rule(q_volume(k))
        self.p_flux = p_flux
        check_admissible(k, p_flux)
        self.psi_beta0 = 2.0 * k * k if psi_beta0 is None else psi_beta0
        self.potential_boundary = potential_boundary
        self.poisson = PoissonOperator(mesh, k, self.psi_beta0, potential_boundary, self.rule)
        psi_bc = None
        if isinstance(potential_boundary, DirichletPotential):
            psi_bc = (potential_boundary.psi_l, potential_boundary.psi_r)
        self.jit = jit
        self.transport = NernstPlanckOperator(mesh, k, self.charges, p_flux, species_boundaries,
                                              psi_bc, self.rule, jit=jit)
        self.rho0 = rho0
        self.fixed_load = self.poisson.fixed_load(rho0)
        self.sources = list(sources) if sources is not None else None
        self.limiter = limiter if limiter is not None else LimiterConfig(LimiterConfig.default_delta(self.h, k))
        self._widths = mesh.widths
        x = mesh.physical_points(self.rule.nodes)
        self._rho0_nodes = (np.broadcast_to(np.asarray(rho0(x), dtype=float), x.shape)
                            if rho0 is not None else None)

    @property
    def has_sources(self) -> bool:
        return self.sources is not None and any(f is not None for f in self.sources)

    @property
    def conservative(self) -> bool:
        """Zero-flux species and no sources: every species mass is invariant."""
        return not self.has_sources and all(bc is None for bc in self.transport.species_boundaries)

    @property
    def closed(self) -> bool:
        """Conservative with time-independent Neumann potential data: the free energy must not grow."""
        b = self.potential_boundary
        return (self.conservative and isinstance(b, NeumannPinned)
                and not (callable(b.sigma_a) or callable(b.sigma_b)))

    def sigmas(self, t: float) -> tuple[float, float]:
        b = self.potential_boundary
        return b.sigmas(t) if isinstance(b, NeumannPinned) else (0.0, 0.0)

    # -- one stage ---------------------------------------------------------
    def solve_potential(self, c: np.ndarray, t: float) -> np.ndarray:
        m, N, n = c.shape
        net = (self.charges @ c.reshape(m, N * n)).reshape(N, n)
        return self.poisson.solve(net, self.fixed_load, t)

    def evaluate(self, c: np.ndarray, t: float, step: Optional[int] = None) -> Stage:
        cl, counts = limit_species(c, self.limiter.delta, self.limiter.resolution, step, self.jit)
        psi = self.solve_potential(cl, t)
        p = self.transport.chemical_potential(cl, psi)
        src = self.transport.source_load(self.sources, t) if self.has_sources else None
        return Stage(t, cl, psi, p, self.transport.rhs(cl, p, src), counts)

    # -- diagnostics ---------------------------------------------------------
    def masses(self, c: np.ndarray) -> np.ndarray:
        return c[:, :, 0] @ self._widths

    def free_energy(self, c: np.ndarray, psi: np.ndarray, t: float = 0.0) -> float:
        sa, sb = self.sigmas(t)
        tr = self.transport
        return _free_energy(c, psi, self.charges, self._rho0_nodes, sa, sb, self._widths, tr.V,
                            self.rule.weights, tr.basis.L_left, tr.basis.L_right)

    def dissipation(self, c: np.ndarray, p: np.ndarray) -> float:
        return float(np.sum(self.transport.dissipation(c, p)))

    def initial_state(self, c0: np.ndarray, t: float = 0.0) -> State:
        return State(t, np.array(c0, dtype=float), self.solve_potential(c0, t))


def _free_energy(c, psi, charges, rho0_nodes, sigma_a, sigma_b, widths, V, weights, L_left, L_right) -> float:
    cq = c @ V.T
    if not np.all(cq > 0):
        raise ValueError("free energy needs positive concentrations at quadrature nodes")
    rho = (charges @ cq.reshape(len(charges), -1)).reshape(cq.shape[1:])
    if rho0_nodes is not None:
        rho = rho + rho0_nodes
    dens = np.sum(cq * np.log(cq), axis=0) + 0.5 * rho * (psi @ V.T)
    bulk = 0.5 * float(widths @ (dens @ weights))
    return bulk + 0.5 * (sigma_b * float(psi[-1] @ L_right) - sigma_a * float(psi[0] @ L_left))


def free_energy(c_all: Sequence[DGField], psi: DGField, charges: Sequence[float],
                rho0: Optional[Callable] = None, sigma_a: float = 0.0, sigma_b: float = 0.0,
                rule: Optional[QuadratureRule] = None) -> float:
    """``sum_j int [sum_i c_i log c_i + (sum_i q_i c_i + rho0) psi / 2] + (sigma_b psi(b) - sigma_a psi(a)) / 2``."""
    mesh, k = psi.mesh, psi.k
    if rule is None:
        rule = gauss_rule(q_volume(k))
    rho0_nodes = None
    if rho0 is not None:
        x = mesh.physical_points(rule.nodes)
        rho0_nodes = np.broadcast_to(np.asarray(rho0(x), dtype=float), x.shape)
    c = np.stack([f.coeffs for f in c_all])
    basis = LegendreBasis(k)
    return _free_energy(c, psi.coeffs, np.asarray(charges, dtype=float), rho0_nodes, sigma_a, sigma_b,
                        mesh.widths, basis.eval(rule.nodes), rule.weights, basis.L_left, basis.L_right)


# -- step-size diagnostics ----------------------------------------------------

def inverse_constant(k: int, beta0: float) -> float:
    """``C(k, beta0) = 4 (k+1)^2 (k (k+2) max(1, k^2/beta0) + 8 beta0)``; reported, not used to pick dt."""
    return 4.0 * (k + 1) ** 2 * (k * (k + 2) * max(1.0, k * k / beta0) + 8.0 * beta0)


def linear_mu_limit(k: int, params: FluxParams, N: int = 16) -> float:
    """Largest ``mu`` for which forward Euler is stable on the linearized diffusion operator.

    At ``c = 1`` with no charge the right-hand side is linear in ``p = c - 1``,
    so its columns give the exact Jacobian.  Euler and Heun share the real
    stability interval ``[-2, 0]``; the result scales out ``h`` and is nearly
    independent of ``N``.
    """
    mesh = Mesh1D.uniform(0.0, 1.0, N)
    op = NernstPlanckOperator(mesh, k, [0.0], params, jit=False)
    n = N * (k + 1)
    ones = np.zeros((1, N, k + 1))
    ones[0, :, 0] = 1.0
    J = np.empty((n, n))
    for col in range(n):
        e = np.zeros(n)
        e[col] = 1.0
        J[:, col] = op.rhs(ones, e.reshape(1, N, k + 1)).ravel()
    rho = float(np.max(np.abs(np.linalg.eigvals(J))))
    return 2.0 / (rho * mesh.h ** 2)


# -- schemes -----------------------------------------------------------------

def _euler_from(system: SemiDiscreteSystem, stage: Stage, dt: float) -> np.ndarray:
    return stage.c + dt * stage.dcdt


def step_euler(system: SemiDiscreteSystem, c: np.ndarray, t: float, dt: float,
               step: Optional[int] = None, first: Optional[Stage] = None) -> tuple[np.ndarray, np.ndarray]:
    """Forward Euler; returns the new coefficients and cells limited per species."""
    s0 = first if first is not None else system.evaluate(c, t, step)
    return _euler_from(system, s0, dt), s0.limited


def step_rk2(system: SemiDiscreteSystem, c: np.ndarray, t: float, dt: float,
             step: Optional[int] = None, first: Optional[Stage] = None) -> tuple[np.ndarray, np.ndarray]:
    """Heun: ``a1 = a + dt L(a)``, ``a* = a1 + dt L(a1)``, ``a_new = (a + a*) / 2``."""
    s0 = first if first is not None else system.evaluate(c, t, step)
    a1 = _euler_from(system, s0, dt)
    s1 = system.evaluate(a1, t + dt, step)
    a_star = _euler_from(system, s1, dt)
    return 0.5 * (s0.c + a_star), s0.limited + s1.limited


def step_ssprk3(system: SemiDiscreteSystem, c: np.ndarray, t: float, dt: float,
                step: Optional[int] = None, first: Optional[Stage] = None) -> tuple[np.ndarray, np.ndarray]:
    """Three-stage SSP Runge-Kutta as convex combinations of Euler steps."""
    s0 = first if first is not None else system.evaluate(c, t, step)
    a1 = _euler_from(system, s0, dt)
    s1 = system.evaluate(a1, t + dt, step)
    a2 = 0.75 * s0.c + 0.25 * _euler_from(system, s1, dt)
    s2 = system.evaluate(a2, t + 0.5 * dt, step)
    a_new = (1.0 / 3.0) * s0.c + (2.0 / 3.0) * _euler_from(system, s2, dt)
    return a_new, s0.limited + s1.limited + s2.limited


SCHEMES = {"euler": step_euler, "rk2": step_rk2, "ssp-rk3": step_ssprk3}


@dataclass
class StepperConfig:
    scheme: str = "rk2"
    mu: float = 0.05
    T: float = 1.0
    stride: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")
        if self.mu <= 0 or self.T < 0 or self.stride < 1:
            raise ConfigurationError("need mu > 0, T >= 0 and stride >= 1")

    def dt(self, h: float) -> float:
        return self.mu * h * h


@dataclass
class EnergyTrace:
    """Diagnostics recorded every ``stride`` steps."""

    m: int
    rows: list = field(default_factory=list)
    energy_violations: int = 0
    max_mass_drift: float = 0.0
    min_cell_average: float = math.inf
    limited_total: int = 0
    steps: int = 0

    def record(self, t, masses, energy, dissipation, min_avg, limited) -> None:
        self.rows.append((float(t), *map(float, masses), float(energy), float(dissipation),
                          float(min_avg), int(limited)))

    @property
    def columns(self) -> list[str]:
        return (["t"] + [f"mass_{i + 1}" for i in range(self.m)]
                + ["free_energy", "dissipation", "min_cell_avg", "limited_cells"])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[self.columns.index(name)] for r in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    @property
    def energies(self) -> np.ndarray:
        return self.column("free_energy")

    def masses(self) -> np.ndarray:
        return np.array([r[1:1 + self.m] for r in self.rows])


def integrate(system: SemiDiscreteSystem, state0: State, config: StepperConfig,
              check_energy: Optional[bool] = None,
              on_step: Optional[Callable[[int, State], None]] = None) -> tuple[State, EnergyTrace]:
    """Advance by ``config.T``; the last step is shortened to land on the final time exactly.

    The free energy is checked at every step when ``check_energy`` holds (by
    default for closed systems) but written to the trace only every
    ``stride`` steps and at the final time.  ``on_step(n, state)`` sees every
    step, with ``state.c`` the limited coefficients used by the next step.
    On failure the partial trace is attached to the raised ``SolverFailure``.
    """
    if check_energy is None:
        check_energy = system.closed
    check_mass = system.conservative
    stepper = SCHEMES[config.scheme]
    dt = config.dt(system.h)
    trace = EnergyTrace(system.m)
    c = state0.c
    t = state0.t
    T = state0.t + config.T
    n = 0
    mass0 = system.masses(c)
    mass_scale = np.maximum(np.abs(mass0), np.finfo(float).tiny)

    def fail(exc: Exception) -> SolverFailure:
        err = SolverFailure(t, n, exc)
        err.trace = trace
        return err

    try:
        stage = system.evaluate(c, t, n)
        energy_prev = system.free_energy(stage.c, stage.psi, t)
    except (PositivityLost, FloatingPointError, ValueError) as exc:
        raise fail(exc) from exc
    trace.min_cell_average = float(c[:, :, 0].min())
    trace.record(t, system.masses(c), energy_prev, system.dissipation(stage.c, stage.p),
                 trace.min_cell_average, int(stage.limited.sum()))
    if on_step is not None:
        on_step(n, State(t, stage.c, stage.psi))
    eps = 1e-12 * max(abs(T), 1.0)
    while t < T - eps:
        dt_n = min(dt, T - t)
        try:
            c, limited = stepper(system, c, t, dt_n, n, first=stage)
            t = t + dt_n if T - (t + dt_n) > eps else T
            n += 1
            stage = system.evaluate(c, t, n)
            recording = n % config.stride == 0 or t >= T
            energy = system.free_energy(stage.c, stage.psi, t) if (check_energy or recording) else None
        except (PositivityLost, FloatingPointError, ValueError) as exc:
            raise fail(exc) from exc
        trace.steps = n
        trace.limited_total += int(limited.sum())
        min_avg = float(c[:, :, 0].min())
        trace.min_cell_average = min(trace.min_cell_average, min_avg)
        if check_mass:
            drift = float(np.max(np.abs(system.masses(c) - mass0) / mass_scale))
            trace.max_mass_drift = max(trace.max_mass_drift, drift)
        if check_energy:
            if energy > energy_prev + ENERGY_SLACK:
                trace.energy_violations += 1
                log.warning("free energy increased by %.3e at t=%.6g (step %d)", energy - energy_prev, t, n)
            energy_prev = energy
        if recording:
            trace.record(t, system.masses(c), energy, system.dissipation(stage.c, stage.p),
                         min_avg, int(limited.sum()))
        if on_step is not None:
            on_step(n, State(t, stage.c, stage.psi))
    final = State(t, c, system.solve_potential(c, t))
    return final, trace
