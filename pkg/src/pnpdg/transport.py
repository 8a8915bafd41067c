"""Nernst-Planck half of the scheme: fluxes, chemical potential, semi-discrete RHS.

Concentrations of all species are stacked into arrays of shape ``(m, N, k+1)``.
With ``S = c^-(x_{j+1/2}) + c^+(x_{j+1/2}) = 2{c}``,
``G = -D.p_j + E.p_{j+1} = h Fl(p)`` and ``J = p^- - p^+`` at every interior
interface, cell ``j`` evolves by

    K dc_j/dt = (2/h) R1 + (1/(2h)) (R2 + R3)

where the right face of cell ``j`` contributes ``S G L(1) + S J L_xi(1)`` and the
left face of cell ``j+1`` contributes ``-S G L(-1) + S J L_xi(-1)``.  Zero-flux
boundary faces contribute nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .basis import ConfigurationError, LegendreBasis, QuadratureRule, gauss_rule, q_volume
from .mesh import DGField, Mesh1D


class AdmissibilityWarning(UserWarning):
    pass


class NonPositiveConcentration(FloatingPointError):
    """A concentration reached the logarithm with a nonpositive nodal value."""

    def __init__(self, species: int, cell: int, value: float):
        super().__init__(f"species {species}: nonpositive concentration {value:.3e} "
                         f"at a quadrature node of cell {cell}")
        self.species = species
        self.cell = cell
        self.value = value


@dataclass(frozen=True)
class FluxParams:
    beta0: float
    beta1: float = 0.0

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ConfigurationError(f"beta0 must be positive, got {self.beta0}")


# (beta0, beta1) pairs validated in the Example 1 convergence study
DEFAULT_P_FLUX = {1: FluxParams(2.0, 0.0), 2: FluxParams(4.0, 1.0 / 12.0), 3: FluxParams(15.0, 0.25)}


def default_p_flux(k: int) -> FluxParams:
    try:
        return DEFAULT_P_FLUX[k]
    except KeyError:
        raise ConfigurationError(f"no default flux parameters for k={k}; pass beta0/beta1 explicitly") from None


@dataclass(frozen=True)
class InterfaceTrace:
    w_minus: float
    w_plus: float
    dw_minus: float = 0.0
    dw_plus: float = 0.0
    ddw_minus: float = 0.0
    ddw_plus: float = 0.0

    @property
    def jump(self) -> float:
        return self.w_plus - self.w_minus

    @property
    def average(self) -> float:
        return 0.5 * (self.w_plus + self.w_minus)


def flux_Fl(trace: InterfaceTrace, params: FluxParams, h: float) -> float:
    """``beta0 [w]/h + {w_x} + beta1 h [w_xx]``."""
    if h <= 0:
        raise ValueError("cell width must be positive")
    return (params.beta0 * trace.jump / h
            + 0.5 * (trace.dw_minus + trace.dw_plus)
            + params.beta1 * h * (trace.ddw_plus - trace.ddw_minus))


def gamma_bound(k, beta1):
    """Coercivity threshold ``Gamma(beta1, 1) = k^2 (1 - beta1 (k^2-1) + beta1^2 (k^2-1)^2 / 3)``.

    Plain arithmetic, so ``beta1`` may be any real-number type (float, mpmath, ...).
    """
    if k < 1:
        raise ConfigurationError("Gamma bound needs k >= 1")
    K = k * k - 1
    return k * k * (1 - beta1 * K + beta1 * beta1 * K * K / 3)


def check_admissible(k: int, params: FluxParams) -> bool:
    """Warn when ``beta0 <= 2 Gamma(beta1, 1)``; the bound is sufficient, not necessary."""
    if k < 1:
        return True
    limit = 2.0 * gamma_bound(k, params.beta1)
    if params.beta0 <= limit:
        warnings.warn(f"p-flux beta0={params.beta0} <= 2*Gamma(beta1={params.beta1}, 1)={limit:.4g}; "
                      "discrete dissipation is not guaranteed", AdmissibilityWarning, stacklevel=2)
        return False
    return True


@dataclass(frozen=True)
class SeparableSource:
    """``f(t, x) = sum_m g_m(t) h_m(x)``; each spatial factor is projected once per mesh."""

    terms: tuple

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return sum(g(t) * h(x) for g, h in self.terms)


@dataclass(frozen=True)
class DirichletConcentration:
    c_left: float
    c_right: float

    def __post_init__(self):
        if self.c_left <= 0 or self.c_right <= 0:
            raise ConfigurationError("Dirichlet concentrations must be positive (log is taken)")


@dataclass(frozen=True)
class BoundaryFlux:
    c_avg: float
    w_avg: float
    flux: float


def apply_dirichlet_fluxes(side: str, c_trace: float, w_trace: float, dw_trace: float,
                           c_boundary: float, w_boundary: float, beta0: float, h: float) -> BoundaryFlux:
    """Boundary averages and flux for Dirichlet data.

    ``w`` is either the chemical potential (``w_boundary = q psi_b + log c_b``)
    or the potential itself (pass ``c_boundary = c_trace`` if unused).
    Left: ``Fl = -beta0 (w_b - w^+)/h + w_x^+``; right: ``Fl = beta0 (w_b - w^-)/h + w_x^-``.
    """
    if c_boundary <= 0:
        raise ConfigurationError("Dirichlet concentration must be positive")
    if side == "left":
        flux = -beta0 * (w_boundary - w_trace) / h + dw_trace
    elif side == "right":
        flux = beta0 * (w_boundary - w_trace) / h + dw_trace
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return BoundaryFlux(0.5 * (c_trace + c_boundary), 0.5 * (w_trace + w_boundary), flux)


class NernstPlanckOperator:
    """Cached basis data for evaluating ``p`` and ``dc/dt`` on one mesh.

    ``species_boundaries[i]`` is ``None`` for zero flux or a
    :class:`DirichletConcentration`; Dirichlet species need the potential's
    boundary values ``psi_boundary = (psi_l, psi_r)``.
    """

    def __init__(self, mesh: Mesh1D, k: int, charges: Sequence[float], params: FluxParams,
                 species_boundaries: Optional[Sequence[Optional[DirichletConcentration]]] = None,
                 psi_boundary: Optional[tuple[float, float]] = None,
                 rule: Optional[QuadratureRule] = None, jit: bool = True):
        self.jit = jit
        self.mesh = mesh
        self.h = mesh.h
        self.k = k
        self.charges = np.asarray(charges, dtype=float)
        self.m = len(self.charges)
        if self.m < 1:
            raise ConfigurationError("need at least one species")
        self.params = params
        if species_boundaries is None:
            species_boundaries = [None] * self.m
        if len(species_boundaries) != self.m:
            raise ConfigurationError("one boundary entry per species required")
        self.species_boundaries = list(species_boundaries)
        if any(bc is not None for bc in self.species_boundaries) and psi_boundary is None:
            raise ConfigurationError("Dirichlet concentrations need Dirichlet potential values")
        self.psi_boundary = psi_boundary
        self.rule = rule if rule is not None else gauss_rule(q_volume(k))
        b = LegendreBasis(k)
        self.basis = b
        s, w = self.rule.nodes, self.rule.weights
        self.V = b.eval(s)              # (Q, n)
        self.Vd = b.deriv(s, 1)         # (Q, n)
        self.weights = w
        self.Vd_w = self.Vd * w[:, None]
        self.proj = (self.V * w[:, None]) * ((2.0 * np.arange(k + 1) + 1.0) / 2.0)
        self.mass = self.h / (2.0 * np.arange(k + 1) + 1.0)
        beta0, beta1 = params.beta0, params.beta1
        self.D = beta0 * b.L_right - b.dL_right + 4.0 * beta1 * b.ddL_right
        self.E = beta0 * b.L_left + b.dL_left + 4.0 * beta1 * b.ddL_left
        self._x_nodes = mesh.physical_points(s)
        self._separable: dict[int, list] = {}

    # -- chemical potential ---------------------------------------------------
    def chemical_potential(self, c: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """Row-wise ``p = q psi + Pi_Q(log c)`` for stacked ``c`` of shape ``(m, N, n)``."""
        if self.jit:
            p, bad = _kernels.chemical_potential(c, psi, self.charges, self.V, self.proj)
            if bad[0] >= 0:
                i, j = int(bad[0]), int(bad[1])
                raise NonPositiveConcentration(i, j, float((c[i, j] @ self.V.T).min()))
            return p
        cq = c @ self.V.T
        if not np.all(cq > 0):
            i, j, _ = np.argwhere(~(cq > 0))[0]
            raise NonPositiveConcentration(int(i), int(j), float(cq[i, j].min()))
        lg = np.log(cq)
        ref = lg[..., :1]
        p = self.charges[:, None, None] * psi[None] + (lg - ref) @ self.proj
        p[..., 0] += ref[..., 0]
        return p

    def source_load(self, sources: Sequence[Optional[Callable]], t: float) -> Optional[np.ndarray]:
        """Modal L2 projections of ``f_i(t, x)``; ``None`` when every source is absent."""
        if sources is None or all(f is None for f in sources):
            return None
        out = np.zeros((self.m, self.mesh.N, self.k + 1))
        for i, f in enumerate(sources):
            if f is None:
                continue
            if isinstance(f, SeparableSource):
                for g, modes in self._separable_modes(f):
                    out[i] += g(t) * modes
            else:
                vals = np.broadcast_to(np.asarray(f(t, self._x_nodes), dtype=float), self._x_nodes.shape)
                out[i] = vals @ self.proj
        return out

    def _separable_modes(self, f: SeparableSource) -> list:
        key = id(f)
        if key not in self._separable:
            x = self._x_nodes
            self._separable[key] = [
                (g, np.broadcast_to(np.asarray(h(x), dtype=float), x.shape) @ self.proj) for g, h in f.terms]
        return self._separable[key]

    # -- right-hand side ------------------------------------------------------
    def rhs(self, c: np.ndarray, p: np.ndarray, source: Optional[np.ndarray] = None) -> np.ndarray:
        b, h = self.basis, self.h
        if self.jit:
            Kdc = _kernels.np_faces_volume(c, p, self.V, self.Vd, self.weights, b.L_right, b.L_left,
                                           b.dL_right, b.dL_left, self.D, self.E, h)
        else:
            Kdc = self._faces_volume(c, p)
        if any(bc is not None for bc in self.species_boundaries):
            Kdc += self._dirichlet_faces(c, p)
        dc = Kdc / self.mass
        if source is not None:
            dc = dc + source
        return dc

    def _faces_volume(self, c: np.ndarray, p: np.ndarray) -> np.ndarray:
        b, h = self.basis, self.h
        cq = c @ self.V.T
        pdq = p @ self.Vd.T
        R1 = -(cq * pdq) @ self.Vd_w

        cR, cL = c @ b.L_right, c @ b.L_left
        pR, pL = p @ b.L_right, p @ b.L_left
        S = cR[:, :-1] + cL[:, 1:]
        G = -(p[:, :-1] @ self.D) + p[:, 1:] @ self.E
        J = pR[:, :-1] - pL[:, 1:]
        SG = (S * G)[..., None]
        SJ = (S * J)[..., None]
        faces = np.zeros_like(c)
        faces[:, :-1] += SG * b.L_right + SJ * b.dL_right
        faces[:, 1:] += -SG * b.L_left + SJ * b.dL_left

        return (2.0 / h) * R1 + (0.5 / h) * faces

    def _dirichlet_faces(self, c: np.ndarray, p: np.ndarray) -> np.ndarray:
        b, h = self.basis, self.h
        out = np.zeros_like(c)
        psi_l, psi_r = self.psi_boundary
        for i, bc in enumerate(self.species_boundaries):
            if bc is None:
                continue
            q = self.charges[i]
            first, last = 0, -1
            left = apply_dirichlet_fluxes(
                "left", c[i, first] @ b.L_left, p[i, first] @ b.L_left, (2.0 / h) * (p[i, first] @ b.dL_left),
                bc.c_left, q * psi_l + np.log(bc.c_left), self.params.beta0, h)
            w_plus = p[i, first] @ b.L_left
            out[i, first] -= left.c_avg * (left.flux * b.L_left + (w_plus - left.w_avg) * (2.0 / h) * b.dL_left)
            right = apply_dirichlet_fluxes(
                "right", c[i, last] @ b.L_right, p[i, last] @ b.L_right, (2.0 / h) * (p[i, last] @ b.dL_right),
                bc.c_right, q * psi_r + np.log(bc.c_right), self.params.beta0, h)
            w_minus = p[i, last] @ b.L_right
            out[i, last] += right.c_avg * (right.flux * b.L_right + (w_minus - right.w_avg) * (2.0 / h) * b.dL_right)
        return out

    # -- dissipation ----------------------------------------------------------
    def bilinear(self, M: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        """``A_M(u, v)`` for single-field coefficient arrays of shape ``(N, n)``."""
        b, h = self.basis, self.h
        if self.jit:
            return float(_kernels.weighted_form(M, u, v, self.V, self.Vd, self.weights, b.L_right, b.L_left,
                                                b.dL_right, b.dL_left, self.D, self.E, h))
        vol = (2.0 / h) * np.sum((M @ self.V.T) * (u @ self.Vd.T) * (v @ self.Vd.T) * self.weights)
        M_avg = 0.5 * (M[:-1] @ b.L_right + M[1:] @ b.L_left)
        u_jump = u[1:] @ b.L_left - u[:-1] @ b.L_right
        v_jump = v[1:] @ b.L_left - v[:-1] @ b.L_right
        u_flux = (u[1:] @ self.E - u[:-1] @ self.D) / h
        v_dx_avg = (v[1:] @ b.dL_left + v[:-1] @ b.dL_right) / h
        return float(vol + np.sum(M_avg * (u_flux * v_jump + v_dx_avg * u_jump)))

    def dissipation(self, c: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Per-species ``A_{c_i}(p_i, p_i)``."""
        return np.array([self.bilinear(c[i], p[i], p[i]) for i in range(self.m)])


def _stack(fields: Sequence[DGField]) -> np.ndarray:
    return np.stack([f.coeffs for f in fields])


def compute_p(c: DGField, psi: DGField, q: float, rule: Optional[QuadratureRule] = None) -> DGField:
    """Chemical potential ``p = q psi + log c`` projected with the volume rule."""
    op = NernstPlanckOperator(c.mesh, c.k, [q], FluxParams(1.0), rule=rule)
    return DGField(c.mesh, op.chemical_potential(c.coeffs[None], psi.coeffs)[0])


def np_rhs(c_all: Sequence[DGField], p_all: Sequence[DGField], params: FluxParams,
           charges: Optional[Sequence[float]] = None,
           species_boundaries=None, psi_boundary=None,
           sources: Optional[Sequence[Optional[Callable]]] = None, t: float = 0.0,
           rule: Optional[QuadratureRule] = None) -> list[DGField]:
    """Time derivative of every species' coefficients."""
    if len(c_all) != len(p_all):
        raise ValueError(f"{len(c_all)} concentration fields but {len(p_all)} potentials")
    mesh, k = c_all[0].mesh, c_all[0].k
    if charges is None:
        charges = [1.0] * len(c_all)
    op = NernstPlanckOperator(mesh, k, charges, params, species_boundaries, psi_boundary, rule)
    dc = op.rhs(_stack(c_all), _stack(p_all), op.source_load(sources, t))
    return [DGField(mesh, d) for d in dc]


def bilinear_AM(M: DGField, u: DGField, v: DGField, params: FluxParams,
                rule: Optional[QuadratureRule] = None) -> float:
    """Weighted form ``sum_j int M u_x v_x + sum_interior {M}(Fl(u)[v] + {v_x}[u])``."""
    op = NernstPlanckOperator(M.mesh, M.k, [1.0], params, rule=rule)
    return op.bilinear(M.coeffs, u.coeffs, v.coeffs)
