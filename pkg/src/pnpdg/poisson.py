"""DG Poisson solver for the electrostatic potential.

Every cell equation is multiplied by ``h`` so that the interior rows read

    A psi_{j-1} + B psi_j + C psi_{j+1} = h K sum_i q_i c_{ij} + (h^2/2) sum_n w_n rho0(x_jn) L(s_n)

with ``K = diag(h / (2l + 1))``.  ``B`` is split into its volume part and the
contributions of the left and right faces so that boundary rows only swap
the face that touches the domain boundary.

Boundary data convention: ``sigma_a`` and ``sigma_b`` are the prescribed
values of ``d psi / dx`` at ``x = a`` and ``x = b`` (not outward normal
derivatives), so solvability requires ``int rho dx = sigma_a - sigma_b``.

Face substitutions, derived from the cell weak form
``int psi_x eta_x - [Fl(psi) eta + (psi - {psi}) eta_x]_{left}^{right} = int rho eta``:

* pinned Neumann at ``a`` with ``Fl = beta0 (psi^+ - psi(a))/h + (sigma_a + psi_x^+)/2``
  and ``{psi} = (psi^+ + psi(a))/2`` keeps the interior left-face block and adds
  ``L(-1)(beta0 psi(a) - h sigma_a / 2) + L_xi(-1) psi(a)`` to the load;
* Neumann at ``b`` with ``Fl = sigma_b``, ``{psi} = psi^-`` drops the right-face
  block and adds ``h sigma_b L(1)``;
* Dirichlet at ``a``: block ``L(-1)(beta0 L(-1) + 2 L_xi(-1))^T + L_xi(-1) L(-1)^T``,
  load ``(beta0 L(-1) + L_xi(-1)) psi_l``;
* Dirichlet at ``b``: block ``L(1)(beta0 L(1) - 2 L_xi(1))^T - L_xi(1) L(1)^T``,
  load ``(beta0 L(1) - L_xi(1)) psi_r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import lapack

from .basis import ConfigurationError, LegendreBasis, QuadratureRule, gauss_rule, q_volume
from .mesh import DGField, Mesh1D

TimeValue = Union[float, Callable[[float], float]]


def _at(value: TimeValue, t: float) -> float:
    return float(value(t)) if callable(value) else float(value)


@dataclass(frozen=True)
class NeumannPinned:
    """``psi_x(a) = sigma_a``, ``psi_x(b) = sigma_b``, with ``psi(a)`` pinned weakly."""

    sigma_a: TimeValue = 0.0
    sigma_b: TimeValue = 0.0
    psi_a: float = 0.0

    def sigmas(self, t: float) -> tuple[float, float]:
        return _at(self.sigma_a, t), _at(self.sigma_b, t)


@dataclass(frozen=True)
class DirichletPotential:
    psi_l: float
    psi_r: float


PotentialBoundary = Union[NeumannPinned, DirichletPotential]


class PoissonSolveError(RuntimeError):
    pass


def poisson_blocks(basis: LegendreBasis, beta0: float) -> dict[str, np.ndarray]:
    """Interior blocks ``A, B, C`` plus the pieces ``B`` is built from."""
    L1, Lm1 = basis.L_right, basis.L_left
    d1, dm1 = basis.dL_right, basis.dL_left
    vol = 2.0 * basis.stiffness()
    left = np.outer(Lm1, beta0 * Lm1 + dm1) + np.outer(dm1, Lm1)
    right = np.outer(L1, beta0 * L1 - d1) - np.outer(d1, L1)
    A = -np.outer(Lm1, beta0 * L1 - d1) - np.outer(dm1, L1)
    C = -np.outer(L1, beta0 * Lm1 + dm1) + np.outer(d1, Lm1)
    return {"A": A, "B": vol + left + right, "C": C, "vol": vol, "left": left, "right": right}


class PoissonOperator:
    """Assembled, factorized block-tridiagonal Poisson operator.

    The matrix depends only on mesh, degree, penalty and boundary *type*, so
    one banded LU factorization serves every solve.
    """

    def __init__(self, mesh: Mesh1D, k: int, beta0: float, boundary: PotentialBoundary,
                 rule: Optional[QuadratureRule] = None):
        if beta0 <= k * k:
            raise ConfigurationError(
                f"potential penalty beta0={beta0} must exceed k^2={k * k} for a unique solution")
        self.mesh = mesh
        self.h = mesh.h
        self.k = k
        self.beta0 = float(beta0)
        self.boundary = boundary
        self.basis = LegendreBasis(k)
        self.rule = rule if rule is not None else gauss_rule(q_volume(k))
        self.mass = self.h / (2.0 * np.arange(k + 1) + 1.0)  # diagonal of K

        blocks = poisson_blocks(self.basis, self.beta0)
        self.blocks = blocks
        N, n = mesh.N, k + 1
        diag = np.repeat(blocks["B"][None], N, axis=0)
        b = self.basis
        if isinstance(boundary, NeumannPinned):
            # left face keeps the interior form; right face drops out
            diag[-1] -= blocks["right"]
        elif isinstance(boundary, DirichletPotential):
            diag[0] += (np.outer(b.L_left, self.beta0 * b.L_left + 2.0 * b.dL_left)
                        + np.outer(b.dL_left, b.L_left)) - blocks["left"]
            diag[-1] += (np.outer(b.L_right, self.beta0 * b.L_right - 2.0 * b.dL_right)
                         - np.outer(b.dL_right, b.L_right)) - blocks["right"]
        else:
            raise ConfigurationError(f"unknown potential boundary {boundary!r}")
        self.diag_blocks = diag
        self._time_dependent = isinstance(boundary, NeumannPinned) and (
            callable(boundary.sigma_a) or callable(boundary.sigma_b))
        if isinstance(boundary, NeumannPinned) and not self._time_dependent:
            self._static_sigmas = boundary.sigmas(0.0)
        self._factorize()

    # -- linear algebra ---------------------------------------------------
    @property
    def bandwidth(self) -> int:
        return 2 * (self.k + 1) - 1

    def matrix(self) -> np.ndarray:
        """Dense copy of the assembled matrix (tests and diagnostics)."""
        N, n = self.mesh.N, self.k + 1
        M = np.zeros((N * n, N * n))
        for j in range(N):
            s = slice(j * n, (j + 1) * n)
            M[s, s] = self.diag_blocks[j]
            if j > 0:
                M[s, (j - 1) * n:j * n] = self.blocks["A"]
            if j < N - 1:
                M[s, (j + 1) * n:(j + 2) * n] = self.blocks["C"]
        return M

    def _factorize(self) -> None:
        M = self.matrix()
        kl = ku = self.bandwidth
        size = M.shape[0]
        ab = np.zeros((2 * kl + ku + 1, size))
        for j in range(size):
            lo, hi = max(0, j - ku), min(size, j + kl + 1)
            ab[kl + ku + np.arange(lo, hi) - j, j] = M[lo:hi, j]
        lu, piv, info = lapack.dgbtrf(ab, kl, ku)
        if info != 0:
            raise PoissonSolveError(f"banded LU failed (info={info}); penalty/boundary combination inadmissible")
        self._lu, self._piv = lu, piv

    def solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        kl = ku = self.bandwidth
        x, info = lapack.dgbtrs(self._lu, kl, ku, rhs.reshape(-1), self._piv)
        if info != 0:
            raise PoissonSolveError(f"banded solve failed (info={info})")
        return x.reshape(self.mesh.N, self.k + 1)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Matrix-vector product in block form."""
        out = np.einsum("jab,jb->ja", self.diag_blocks, coeffs)
        out[1:] += coeffs[:-1] @ self.blocks["A"].T
        out[:-1] += coeffs[1:] @ self.blocks["C"].T
        return out

    # -- right-hand side ----------------------------------------------------
    def mobile_load(self, net_charge_coeffs: np.ndarray) -> np.ndarray:
        """``h K sum_i q_i c_ij`` for the modal net mobile charge."""
        return self.h * self.mass * net_charge_coeffs

    def fixed_load(self, rho0: Optional[Callable]) -> np.ndarray:
        """``(h^2/2) sum_n w_n rho0(x_j + h s_n/2) L(s_n)``."""
        if rho0 is None:
            return np.zeros((self.mesh.N, self.k + 1))
        x = self.mesh.physical_points(self.rule.nodes)
        vals = np.broadcast_to(np.asarray(rho0(x), dtype=float), x.shape)
        L = self.basis.eval(self.rule.nodes)
        return 0.5 * self.h ** 2 * (vals * self.rule.weights) @ L

    def boundary_load(self, t: float = 0.0) -> np.ndarray:
        out = np.zeros((self.mesh.N, self.k + 1))
        b, h = self.basis, self.h
        if isinstance(self.boundary, NeumannPinned):
            sa, sb = self.boundary.sigmas(t) if self._time_dependent else self._static_sigmas
            pa = self.boundary.psi_a
            out[0] += b.L_left * (self.beta0 * pa - 0.5 * h * sa) + b.dL_left * pa
            out[-1] += h * sb * b.L_right
        else:
            pl, pr = self.boundary.psi_l, self.boundary.psi_r
            out[0] += (self.beta0 * b.L_left + b.dL_left) * pl
            out[-1] += (self.beta0 * b.L_right - b.dL_right) * pr
        return out

    def solve(self, net_charge_coeffs: np.ndarray, fixed_load: Optional[np.ndarray] = None,
              t: float = 0.0) -> np.ndarray:
        rhs = self.mobile_load(net_charge_coeffs) + self.boundary_load(t)
        if fixed_load is not None:
            rhs = rhs + fixed_load
        return self.solve_rhs(rhs)


@dataclass
class ChargeDensity:
    charges: Sequence[float]
    fields: Sequence[DGField]
    rho0: Optional[Callable] = None

    def net_mobile(self) -> np.ndarray:
        return sum(q * f.coeffs for q, f in zip(self.charges, self.fields))


def assemble_poisson(mesh: Mesh1D, k: int, beta0: float, boundary: PotentialBoundary,
                     rule: Optional[QuadratureRule] = None) -> PoissonOperator:
    return PoissonOperator(mesh, k, beta0, boundary, rule)


def solve_poisson(op: PoissonOperator, charge: ChargeDensity, t: float = 0.0) -> DGField:
    coeffs = op.solve(charge.net_mobile(), op.fixed_load(charge.rho0), t)
    return DGField(op.mesh, coeffs)


def compatibility_residual(charge: ChargeDensity, sigma_a: float, sigma_b: float,
                           rule: Optional[QuadratureRule] = None) -> float:
    """``int (sum_i q_i c_i + rho0) dx - sigma_a + sigma_b``; zero when the Neumann problem is solvable."""
    mesh = charge.fields[0].mesh
    if rule is None:
        rule = gauss_rule(charge.fields[0].k + 3)
    x = mesh.physical_points(rule.nodes)
    rho = sum(q * f.at_nodes(rule.nodes) for q, f in zip(charge.charges, charge.fields))
    if charge.rho0 is not None:
        rho = rho + np.broadcast_to(np.asarray(charge.rho0(x), dtype=float), x.shape)
    total = float(np.sum(0.5 * mesh.widths * (rho @ rule.weights)))
    return total - sigma_a + sigma_b
