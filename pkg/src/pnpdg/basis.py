"""Legendre basis and Gauss-Legendre quadrature on the reference cell [-1, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DEGREE = 32
MAX_QUAD_POINTS = 64
_ENDPOINT_TOL = 1e-14


class ConfigurationError(ValueError):
    """Raised for parameter choices the discretization cannot honour."""


def _check_degree(k: int) -> None:
    if k < 0:
        raise ConfigurationError(f"polynomial degree must be nonnegative, got {k}")
    if k > MAX_DEGREE:
        raise ConfigurationError(f"polynomial degree {k} exceeds limit {MAX_DEGREE}")


def _check_xi(xi: np.ndarray) -> None:
    if np.any(np.abs(xi) > 1.0 + _ENDPOINT_TOL):
        raise ConfigurationError("reference coordinate outside [-1, 1]")


def legendre_eval(k: int, xi) -> np.ndarray:
    """Values ``L_0(xi), ..., L_k(xi)`` by the three-term recurrence.

    ``xi`` may be a scalar or an array; the basis index is the last axis.
    """
    _check_degree(k)
    xi = np.asarray(xi, dtype=float)
    _check_xi(xi)
    out = np.empty(xi.shape + (k + 1,))
    out[..., 0] = 1.0
    if k >= 1:
        out[..., 1] = xi
    for n in range(1, k):
        out[..., n + 1] = ((2 * n + 1) * xi * out[..., n] - n * out[..., n - 1]) / (n + 1)
    return out


def legendre_deriv(k: int, xi, order: int = 1) -> np.ndarray:
    """First or second xi-derivatives of ``L_0 .. L_k``.

    Uses the differentiated recurrence
    ``(n+1) L'_{n+1} = (2n+1)(L_n + xi L'_n) - n L'_{n-1}`` (and its second
    derivative analogue), which stays valid at the endpoints.
    """
    if order not in (1, 2):
        raise ConfigurationError(f"unsupported derivative order {order}")
    vals = legendre_eval(k, xi)
    xi = np.asarray(xi, dtype=float)
    d1 = np.zeros_like(vals)
    if k >= 1:
        d1[..., 1] = 1.0
    for n in range(1, k):
        d1[..., n + 1] = ((2 * n + 1) * (vals[..., n] + xi * d1[..., n]) - n * d1[..., n - 1]) / (n + 1)
    if order == 1:
        return d1
    d2 = np.zeros_like(vals)
    for n in range(1, k):
        d2[..., n + 1] = ((2 * n + 1) * (2.0 * d1[..., n] + xi * d2[..., n]) - n * d2[..., n - 1]) / (n + 1)
    return d2


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return len(self.nodes)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Sum ``weights * values`` over the last axis (reference cell)."""
        return values @ self.weights


def gauss_rule(Q: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``Q`` points.

    Roots of ``L_Q`` are found by Newton iteration from Chebyshev guesses;
    the result is symmetrized so nodes come out sorted and exactly
    antisymmetric.
    """
    if not 1 <= Q <= MAX_QUAD_POINTS:
        raise ConfigurationError(f"quadrature point count must be in [1, {MAX_QUAD_POINTS}], got {Q}")
    i = np.arange(1, Q + 1)
    x = np.cos(np.pi * (i - 0.25) / (Q + 0.5))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for n in range(1, Q):
            p0, p1 = p1, ((2 * n + 1) * x * p1 - n * p0) / (n + 1)
        # p1 = L_Q(x), p0 = L_{Q-1}(x)
        dp = Q * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p0 = np.ones_like(x)
    p1 = x.copy()
    for n in range(1, Q):
        p0, p1 = p1, ((2 * n + 1) * x * p1 - n * p0) / (n + 1)
    dp = Q * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)

    # Newton from cos guesses lands on descending roots; reorder ascending
    x = x[::-1]
    w = w[::-1]
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    if Q % 2 == 1:
        x[Q // 2] = 0.0
    return QuadratureRule(nodes=x, weights=w)


def q_volume(k: int) -> int:
    """Point count used for the nonlinear volume integrals, ceil((k+4)/2)."""
    return math.ceil((k + 4) / 2)


@dataclass(frozen=True)
class LegendreBasis:
    """Degree-``k`` modal basis with endpoint caches used by every interface term."""

    k: int
    L_right: np.ndarray = field(init=False, repr=False)
    L_left: np.ndarray = field(init=False, repr=False)
    dL_right: np.ndarray = field(init=False, repr=False)
    dL_left: np.ndarray = field(init=False, repr=False)
    ddL_right: np.ndarray = field(init=False, repr=False)
    ddL_left: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_degree(self.k)
        object.__setattr__(self, "L_right", legendre_eval(self.k, 1.0))
        object.__setattr__(self, "L_left", legendre_eval(self.k, -1.0))
        object.__setattr__(self, "dL_right", legendre_deriv(self.k, 1.0, 1))
        object.__setattr__(self, "dL_left", legendre_deriv(self.k, -1.0, 1))
        object.__setattr__(self, "ddL_right", legendre_deriv(self.k, 1.0, 2))
        object.__setattr__(self, "ddL_left", legendre_deriv(self.k, -1.0, 2))

    @property
    def size(self) -> int:
        return self.k + 1

    def eval(self, xi) -> np.ndarray:
        return legendre_eval(self.k, xi)

    def deriv(self, xi, order: int = 1) -> np.ndarray:
        return legendre_deriv(self.k, xi, order)

    def norms(self) -> np.ndarray:
        """``int_{-1}^{1} L_l^2 = 2 / (2l + 1)``."""
        return 2.0 / (2.0 * np.arange(self.k + 1) + 1.0)

    def stiffness(self) -> np.ndarray:
        """``int_{-1}^{1} L_xi L_xi^T dxi``, exact via a (k+1)-point rule."""
        rule = gauss_rule(self.k + 1)
        d = self.deriv(rule.nodes)
        return (d * rule.weights[:, None]).T @ d
