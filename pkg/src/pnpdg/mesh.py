"""Meshes, modal DG fields, projection and integral functionals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .basis import ConfigurationError, QuadratureRule, gauss_rule, legendre_eval

UNIFORM_RTOL = 1e-12


@dataclass(frozen=True)
class Mesh1D:
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2:
            raise ConfigurationError("mesh needs at least two edges")
        if np.any(np.diff(edges) <= 0):
            raise ConfigurationError("mesh edges must be strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def uniform(cls, a: float, b: float, N: int) -> "Mesh1D":
        if N < 1:
            raise ConfigurationError(f"need at least one cell, got N={N}")
        edges = a + (b - a) * np.arange(N + 1) / N
        edges[-1] = b
        return cls(edges)

    @property
    def a(self) -> float:
        return float(self.edges[0])

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    @property
    def N(self) -> int:
        return len(self.edges) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def is_uniform(self) -> bool:
        w = self.widths
        return w.max() / w.min() <= 1.0 + UNIFORM_RTOL

    @property
    def h(self) -> float:
        """Common cell width; only defined on uniform meshes."""
        if not self.is_uniform:
            raise ConfigurationError("assembly requires a uniform mesh")
        return (self.b - self.a) / self.N

    def physical_points(self, xi: np.ndarray) -> np.ndarray:
        """``(N, len(xi))`` array of ``x_j + (dx_j/2) xi``."""
        return self.centers[:, None] + 0.5 * self.widths[:, None] * np.asarray(xi)[None, :]

    def locate(self, x: float, side: str = "right") -> int:
        """Cell index containing ``x``; at an interior edge ``side`` picks the trace."""
        if x < self.a or x > self.b:
            raise ValueError(f"x={x} outside [{self.a}, {self.b}]")
        j = int(np.searchsorted(self.edges, x, side=side)) - 1
        return min(max(j, 0), self.N - 1)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "N": self.N, "edges": self.edges.tolist()}


@dataclass
class DGField:
    """Piecewise polynomial with row ``j`` holding the Legendre coefficients on cell ``j``."""

    mesh: Mesh1D
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.mesh.N:
            raise ValueError(f"coefficient array shape {self.coeffs.shape} does not match N={self.mesh.N}")

    @property
    def k(self) -> int:
        return self.coeffs.shape[1] - 1

    @classmethod
    def zeros(cls, mesh: Mesh1D, k: int) -> "DGField":
        return cls(mesh, np.zeros((mesh.N, k + 1)))

    @classmethod
    def constant(cls, mesh: Mesh1D, k: int, value: float) -> "DGField":
        coeffs = np.zeros((mesh.N, k + 1))
        coeffs[:, 0] = value
        return cls(mesh, coeffs)

    def copy(self) -> "DGField":
        return DGField(self.mesh, self.coeffs.copy())

    def at_nodes(self, xi: np.ndarray) -> np.ndarray:
        """Values at reference points ``xi`` in every cell, shape ``(N, len(xi))``."""
        return self.coeffs @ legendre_eval(self.k, xi).T

    def cell_averages(self) -> np.ndarray:
        return cell_averages(self)

    def total_mass(self) -> float:
        return total_mass(self)

    def __call__(self, x: float, side: str = "right") -> float:
        return eval_field(self, x, side)


def project(f: Callable[[np.ndarray], np.ndarray], mesh: Mesh1D, k: int,
            rule: Optional[QuadratureRule] = None) -> DGField:
    """L2 projection of ``f`` onto piecewise degree-``k`` polynomials.

    Row ``j`` receives ``c^l = (2l+1)/2 * sum_n w_n f(x_j + h s_n / 2) L_l(s_n)``.
    """
    if rule is None:
        rule = gauss_rule(k + 3)
    x = mesh.physical_points(rule.nodes)
    vals = np.asarray(f(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise ValueError(f"projected function is not finite in cell {bad[0]} (x={x[tuple(bad)]})")
    L = legendre_eval(k, rule.nodes)
    scale = (2.0 * np.arange(k + 1) + 1.0) / 2.0
    return DGField(mesh, (vals * rule.weights) @ L * scale)


def cell_averages(field: DGField) -> np.ndarray:
    return field.coeffs[:, 0].copy()


def total_mass(field: DGField) -> float:
    return float(np.dot(field.mesh.widths, field.coeffs[:, 0]))


def eval_field(field: DGField, x: float, side: str = "right") -> float:
    """Point value at ``x``; ``side='left'`` takes the left trace at interior edges."""
    mesh = field.mesh
    j = mesh.locate(x, side)
    xi = 2.0 * (x - mesh.centers[j]) / mesh.widths[j]
    xi = min(max(xi, -1.0), 1.0)
    return float(field.coeffs[j] @ legendre_eval(field.k, xi))


def l1_error(field: DGField, reference: Callable[[np.ndarray], np.ndarray], Q: int = 4) -> float:
    """``sum_j int_{I_j} |u_h - u_ref| dx`` with a ``Q``-point Gauss rule per cell."""
    rule = gauss_rule(Q)
    x = field.mesh.physical_points(rule.nodes)
    diff = np.abs(field.at_nodes(rule.nodes) - np.asarray(reference(x), dtype=float))
    return float(np.sum(0.5 * field.mesh.widths * (diff @ rule.weights)))


def integrate(field_values: np.ndarray, mesh: Mesh1D, rule: QuadratureRule) -> float:
    """Integral of nodal values ``(N, Q)`` sampled at ``rule`` nodes on every cell."""
    return float(np.sum(0.5 * mesh.widths * (field_values @ rule.weights)))
