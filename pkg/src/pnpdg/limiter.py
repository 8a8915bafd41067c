"""Average-preserving positivity limiter.

A cell polynomial ``w`` with mean ``w_bar > delta`` whose minimum drops below
``delta`` is squeezed toward its mean,

    w_delta = w_bar + theta (w - w_bar),   theta = (w_bar - delta) / (w_bar - min w),

which in modal form rescales coefficients ``1..k`` by ``theta`` and leaves the
cell average untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .basis import legendre_deriv, legendre_eval


class PositivityLost(RuntimeError):
    """A cell average fell to or below the limiter floor."""

    def __init__(self, cell: int, average: float, delta: float, species: Optional[int] = None,
                 step: Optional[int] = None):
        where = f"cell {cell}" if species is None else f"species {species}, cell {cell}"
        when = "" if step is None else f" at step {step}"
        super().__init__(f"cell average {average:.6e} <= floor {delta:.3e} in {where}{when}")
        self.cell = cell
        self.average = average
        self.delta = delta
        self.species = species
        self.step = step


@dataclass(frozen=True)
class LimiterConfig:
    delta: float = 0.0
    resolution: int = 64

    @staticmethod
    def default_delta(h: float, k: int) -> float:
        return min(1e-12, h ** (k + 2))


def _chebyshev_points(n: int) -> np.ndarray:
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1]


def cell_minima(coeffs: np.ndarray, resolution: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Minimum location and value of each row polynomial on [-1, 1].

    Closed form for ``k <= 2``; otherwise sampling at ``resolution`` Chebyshev
    points plus endpoints, refined by safeguarded Newton on ``w'``.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    rows, n = coeffs.shape
    k = n - 1
    if k == 0:
        return np.zeros(rows), coeffs[:, 0].copy()
    if k == 1:
        loc = np.where(coeffs[:, 1] >= 0, -1.0, 1.0)
        return loc, coeffs[:, 0] - np.abs(coeffs[:, 1])
    if k == 2:
        c0, c1, c2 = coeffs.T
        left = c0 - c1 + c2
        right = c0 + c1 + c2
        loc = np.where(left <= right, -1.0, 1.0)
        val = np.minimum(left, right)
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex = np.where(c2 > 0, -c1 / (3.0 * c2), np.inf)
        inside = np.abs(vertex) <= 1.0
        vval = c0 - c1 * c1 / (6.0 * np.where(inside, c2, 1.0)) - 0.5 * c2
        better = inside & (vval < val)
        return np.where(better, vertex, loc), np.where(better, vval, val)
    if k == 3:
        return _cubic_minima(coeffs)

    xs = np.concatenate(([-1.0], _chebyshev_points(resolution), [1.0]))
    samples = coeffs @ legendre_eval(k, xs).T
    best = np.argmin(samples, axis=1)
    loc = xs[best]
    val = samples[np.arange(rows), best]
    # refine on the bracket formed by the neighbouring samples
    lo = xs[np.maximum(best - 1, 0)]
    hi = xs[np.minimum(best + 1, len(xs) - 1)]
    x = loc.copy()
    for _ in range(50):
        d1 = np.einsum("rn,rn->r", coeffs, legendre_deriv(k, x, 1))
        d2 = np.einsum("rn,rn->r", coeffs, legendre_deriv(k, x, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(d2 > 0, d1 / d2, 0.0)
        x_new = np.clip(x - step, lo, hi)
        done = np.max(np.abs(x_new - x)) < 1e-15
        x = x_new
        if done:
            break
    refined = np.einsum("rn,rn->r", coeffs, legendre_eval(k, x))
    take = refined < val
    loc[take] = x[take]
    val[take] = refined[take]
    return loc, val


def _cubic_minima(coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints and the real roots of the quadratic ``w'`` are the only candidates."""
    c0, c1, c2, c3 = coeffs.T
    # w' = A xi^2 + B xi + C
    A = 7.5 * c3
    B = 3.0 * c2
    C = c1 - 1.5 * c3
    disc = B * B - 4.0 * A * C
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        qq = -0.5 * (B + np.copysign(sq, B))
        r1 = np.where(A != 0, qq / A, np.where(B != 0, -C / B, np.nan))
        r2 = np.where(qq != 0, C / qq, np.nan)
    r1 = np.where(disc >= 0, r1, np.nan)
    r2 = np.where((disc >= 0) & (A != 0), r2, np.nan)
    cand = np.stack([-np.ones_like(c0), np.ones_like(c0), r1, r2], axis=1)
    ok = np.isfinite(cand) & (np.abs(cand) <= 1.0)
    x = np.where(ok, cand, -1.0)
    vals = np.einsum("rn,rcn->rc", coeffs, legendre_eval(3, x))
    vals = np.where(ok, vals, np.inf)
    best = np.argmin(vals, axis=1)
    idx = np.arange(len(coeffs))
    return x[idx, best], vals[idx, best]


def min_on_cell(coeffs, resolution: int = 64) -> tuple[float, float]:
    """``(xi*, min w)`` for a single cell polynomial."""
    loc, val = cell_minima(np.asarray(coeffs, dtype=float)[None], resolution)
    return float(loc[0]), float(val[0])


def limit_cell(coeffs, delta: float = 0.0, resolution: int = 64) -> np.ndarray:
    out, _ = limit_rows(np.asarray(coeffs, dtype=float)[None], delta, resolution)
    return out[0]


def _squeeze(flat: np.ndarray, delta: float, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Limit rows whose minimum is below ``delta``; averages must already exceed it."""
    if flat.shape[1] == 1:
        return flat, np.zeros(0, dtype=int)
    avg = flat[:, 0]
    # |L_l| <= 1 gives a cheap lower bound; only rows failing it need the true minimum
    lower = avg - np.sum(np.abs(flat[:, 1:]), axis=1)
    suspect = np.nonzero(lower < delta)[0]
    if len(suspect) == 0:
        return flat, suspect
    _, mins = cell_minima(flat[suspect], resolution)
    hit = mins < delta
    rows = suspect[hit]
    if len(rows) == 0:
        return flat, rows
    theta = (avg[rows] - delta) / (avg[rows] - mins[hit])
    out = flat.copy()
    out[rows, 1:] *= theta[:, None]
    return out, rows


def limit_rows(coeffs: np.ndarray, delta: float = 0.0, resolution: int = 64,
               species: Optional[int] = None, step: Optional[int] = None) -> tuple[np.ndarray, int]:
    """Limit every row of an ``(N, k+1)`` array; returns the new array and the number of limited rows."""
    avg = coeffs[:, 0]
    if not np.all(avg > delta):
        j = int(np.nonzero(~(avg > delta))[0][0])
        raise PositivityLost(j, float(avg[j]), delta, species, step)
    out, rows = _squeeze(coeffs, delta, resolution)
    return out, len(rows)


def limit_species(c: np.ndarray, delta: float = 0.0, resolution: int = 64,
                  step: Optional[int] = None, jit: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Limit stacked concentrations ``(m, N, k+1)``; returns limited copy and per-species counts."""
    m, N, n = c.shape
    flat = c.reshape(m * N, n)
    if jit and n <= 4:
        out, limited, bad = _kernels.limit_flat(flat, delta)
        if bad >= 0:
            raise PositivityLost(bad % N, float(flat[bad, 0]), delta, bad // N, step)
        counts = limited.reshape(m, N).sum(axis=1)
        return (out.reshape(m, N, n) if counts.any() else c), counts
    avg = flat[:, 0]
    if not np.all(avg > delta):
        r = int(np.nonzero(~(avg > delta))[0][0])
        raise PositivityLost(r % N, float(avg[r]), delta, r // N, step)
    out, rows = _squeeze(flat, delta, resolution)
    counts = np.bincount(rows // N, minlength=m)
    return (c if out is flat else out.reshape(m, N, n)), counts
