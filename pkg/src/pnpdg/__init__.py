"""Arbitrary-order discontinuous Galerkin solver for 1D Poisson-Nernst-Planck systems."""

from .basis import ConfigurationError, LegendreBasis, gauss_rule, legendre_deriv, legendre_eval
from .limiter import LimiterConfig, PositivityLost, limit_cell, min_on_cell
from .mesh import DGField, Mesh1D, l1_error, project
from .poisson import DirichletPotential, NeumannPinned, PoissonOperator, solve_poisson
from .stepper import (SemiDiscreteSystem, SolverFailure, State, StepperConfig, free_energy,
                      integrate, step_euler, step_rk2, step_ssprk3)
from .transport import DirichletConcentration, FluxParams, default_p_flux, gamma_bound

__version__ = "0.1.0"
