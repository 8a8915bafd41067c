"""Registry of named functions that configuration files may refer to.

A reference is either a registered name (``"ex2.c1"``), an inline polynomial
``"poly:a0,a1,..."`` meaning ``a0 + a1 x + ...``, or a plain number for a
constant.  Every entry has a kind: ``"x"`` for ``f(x)``, ``"tx"`` for
``f(t, x)`` and ``"t"`` for ``f(t)``.
"""

from __future__ import annotations

import math
from typing import Callable, Union

import numpy as np

from .basis import ConfigurationError
from .transport import SeparableSource

Ref = Union[str, float, int]

_REGISTRY: dict[str, tuple[str, Callable]] = {}


def register(name: str, kind: str, fn: Callable) -> None:
    if kind not in ("x", "tx", "t"):
        raise ValueError(f"unknown function kind {kind!r}")
    _REGISTRY[name] = (kind, fn)


def names() -> list[str]:
    return sorted(_REGISTRY)


class CatalogFunction:
    """Callable resolved from a reference; pickles as its reference string."""

    def __init__(self, ref: Ref):
        self.ref = ref
        self.kind, self._fn = _resolve(ref)

    def __call__(self, *args):
        return self._fn(*args)

    def __reduce__(self):
        return (CatalogFunction, (self.ref,))

    def __repr__(self) -> str:
        return f"CatalogFunction({self.ref!r})"

    def of_x(self, t: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        """Spatial profile at time ``t``."""
        if self.kind == "x":
            return self._fn
        if self.kind == "tx":
            return lambda x: self._fn(t, x)
        raise ConfigurationError(f"{self.ref!r} is a function of t only")

    def of_tx(self) -> Callable[[float, np.ndarray], np.ndarray]:
        if self.kind == "tx":
            return self._fn
        if self.kind == "x":
            return lambda t, x: self._fn(x)
        raise ConfigurationError(f"{self.ref!r} is a function of t only")

    @property
    def separable(self) -> bool:
        return isinstance(self._fn, SeparableSource)


def _resolve(ref: Ref) -> tuple[str, Callable]:
    if isinstance(ref, bool):
        raise ConfigurationError(f"invalid function reference {ref!r}")
    if isinstance(ref, (int, float)):
        value = float(ref)
        return "x", lambda x: np.full_like(np.asarray(x, dtype=float), value)
    if not isinstance(ref, str):
        raise ConfigurationError(f"invalid function reference {ref!r}")
    if ref.startswith("poly:"):
        try:
            coeffs = [float(v) for v in ref[5:].split(",")]
        except ValueError:
            raise ConfigurationError(f"bad polynomial literal {ref!r}") from None
        # numpy's polyval wants the highest power first
        rev = coeffs[::-1]
        return "x", lambda x: np.polyval(rev, np.asarray(x, dtype=float))
    try:
        return _REGISTRY[ref]
    except KeyError:
        raise ConfigurationError(f"unknown function {ref!r}; known: {', '.join(names())}") from None


# -- built-in entries ----------------------------------------------------------

def _ex1_c1(t, x):
    return x ** 2 * (1 - x) ** 2 * np.exp(-t)


def _ex1_c2(t, x):
    return x ** 2 * (1 - x) ** 3 * np.exp(-t)


def _ex1_psi(t, x):
    return -(10 * x ** 7 - 28 * x ** 6 + 21 * x ** 5) * np.exp(-t) / 420


def _e2(t):
    return math.exp(-2 * t)


def _e1(t):
    return math.exp(-t)


_EX1_F1 = SeparableSource((
    (_e2, lambda x: (50 * x ** 9 - 198 * x ** 8 + 292 * x ** 7 - 189 * x ** 6 + 45 * x ** 5) / 30),
    (_e1, lambda x: -x ** 4 + 2 * x ** 3 - 13 * x ** 2 + 12 * x - 2),
))
_EX1_F2 = SeparableSource((
    (_e2, lambda x: (x - 1) * (110 * x ** 9 - 430 * x ** 8 + 623 * x ** 7 - 393 * x ** 6 + 90 * x ** 5) / 60),
    (_e1, lambda x: (x - 1) * (x ** 4 - 2 * x ** 3 + 21 * x ** 2 - 16 * x + 2)),
))

register("ex1.c1", "tx", _ex1_c1)
register("ex1.c2", "tx", _ex1_c2)
register("ex1.psi", "tx", _ex1_psi)
register("ex1.f1", "tx", _EX1_F1)
register("ex1.f2", "tx", _EX1_F2)
register("ex1.sigma_b", "t", lambda t: -math.exp(-t) / 60)
register("ex2.c1", "x", lambda x: 1 + np.pi * np.sin(np.pi * x))
register("ex2.c2", "x", lambda x: 4 - 2 * x)
register("ex3.c1", "x", lambda x: 2 + 12 * (x - 0.5) ** 2)
register("ex3.c2", "x", lambda x: 1 + 2 * x)
register("ex3.rho0", "x", lambda x: 12 * (x - 0.5) ** 2)
register("ex4.c", "x", lambda x: 2 - x)
register("exp_decay", "t", _e1)
