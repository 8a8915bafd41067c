import numpy as np
import pytest
from hypothesis import given, strategies as st

from pnpdg.basis import legendre_eval
from pnpdg.limiter import (LimiterConfig, PositivityLost, cell_minima, limit_cell, limit_rows, limit_species,
                           min_on_cell)
from pnpdg.mesh import Mesh1D, project

SCAN = np.linspace(-1.0, 1.0, 10 ** 4)
FINE_SCAN = np.linspace(-1.0, 1.0, 2 * 10 ** 5 + 1)


def scan_min(coeffs, xs=SCAN):
    return float(np.min(legendre_eval(len(coeffs) - 1, xs) @ coeffs))


def random_cells(rng, count, k, spread=1.5):
    c = rng.uniform(-spread, spread, size=(count, k + 1))
    c[:, 0] = rng.uniform(0.05, 2.0, size=count)
    return c


def test_examples():
    np.testing.assert_array_equal(limit_cell([1.0, 0.3]), [1.0, 0.3])
    np.testing.assert_allclose(limit_cell([1.0, 1.2]), [1.0, 1.0], rtol=1e-15)
    assert min_on_cell([1.0, 1.0]) == (-1.0, 0.0)
    loc, val = min_on_cell([1.0, 0.0, 1.0])
    assert loc == pytest.approx(0.0) and val == pytest.approx(0.5)


def test_constant_cells_untouched():
    out, n = limit_rows(np.array([[2.0], [0.5]]))
    assert n == 0 and out.tolist() == [[2.0], [0.5]]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_min_against_dense_scan(k, rng):
    cells = random_cells(rng, 300, k)
    _, vals = cell_minima(cells)
    for c, v in zip(cells, vals):
        s = scan_min(c, FINE_SCAN)
        assert abs(v - s) <= 1e-8
        assert v <= s + 1e-14
        assert abs(v - scan_min(c)) <= 1e-6   # the coarse scan is at most a few grid steps off


@pytest.mark.parametrize("k", [4, 5])
def test_sampled_min_against_derivative_roots(k, rng):
    cells = random_cells(rng, 100, k)
    locs, vals = cell_minima(cells, resolution=64)
    for c, x, v in zip(cells, locs, vals):
        leg = np.polynomial.legendre.Legendre(c)
        r = leg.deriv().roots()
        cand = np.concatenate(([-1.0, 1.0], r[(np.abs(r.imag) < 1e-9) & (np.abs(r.real) <= 1)].real))
        assert v == pytest.approx(float(np.min(leg(cand))), abs=1e-10)
        assert leg(x) == pytest.approx(v, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_limiter_properties_random(k, rng):
    delta = 1e-3
    cells = random_cells(rng, 1000, k)
    out, _ = limit_rows(cells, delta)
    np.testing.assert_array_equal(out[:, 0], cells[:, 0])
    V = legendre_eval(k, SCAN)
    assert np.min(out @ V.T) >= delta - 1e-14
    twice, _ = limit_rows(out, delta)
    np.testing.assert_allclose(twice, out, atol=1e-14, rtol=0)
    # rows already above the floor come back bitwise
    ok = np.min(cells @ legendre_eval(k, FINE_SCAN).T, axis=1) > delta + 1e-9
    np.testing.assert_array_equal(out[ok], cells[ok])


@given(st.integers(1, 3), st.floats(0.0, 0.1), st.integers(0, 10 ** 6))
def test_limit_cell_hypothesis(k, delta, seed):
    rng = np.random.default_rng(seed)
    c = random_cells(rng, 1, k, spread=3.0)[0]
    c[0] = max(c[0], delta + 1e-3)
    out = limit_cell(c, delta)
    assert out[0] == c[0]
    assert scan_min(out) >= delta - 1e-14
    _, true_min = min_on_cell(out)
    assert true_min >= delta - 1e-14


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_jit_and_numpy_paths_agree(k, rng):
    c = random_cells(rng, 200, k).reshape(2, 100, k + 1)
    a, na = limit_species(c, 1e-6, jit=True)
    b, nb = limit_species(c, 1e-6, jit=False)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(na, nb)


def test_positivity_lost_reports_location():
    c = np.ones((2, 4, 2))
    c[1, 2, 0] = -1e-3
    for jit in (True, False):
        with pytest.raises(PositivityLost) as err:
            limit_species(c, 0.0, step=17, jit=jit)
        assert (err.value.species, err.value.cell, err.value.step) == (1, 2, 17)
    with pytest.raises(PositivityLost):
        limit_rows(np.array([[1e-9, 0.0]]), delta=1e-8)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_accuracy_on_touching_zero_data(k):
    """Limiting the projection of x^2 (1-x)^2 moves it by at most a small multiple of the projection error."""
    f = lambda x: x ** 2 * (1 - x) ** 2
    xi = np.linspace(-1, 1, 201)
    V = legendre_eval(k, xi)
    for N in (10, 20, 40, 80):
        m = Mesh1D.uniform(0.0, 1.0, N)
        delta = LimiterConfig.default_delta(m.h, k)
        u = project(f, m, k).coeffs
        lim, _ = limit_rows(u, delta)
        err = np.max(np.abs(u @ V.T - f(m.physical_points(xi))))
        change = np.max(np.abs((lim - u) @ V.T))
        assert change <= 10 * (err + delta)


def test_default_delta():
    assert LimiterConfig.default_delta(0.1, 2) == pytest.approx(1e-12)
    assert LimiterConfig.default_delta(0.001, 2) == pytest.approx(1e-12)
    assert LimiterConfig.default_delta(1e-4, 1) == pytest.approx(1e-12)
    assert LimiterConfig.default_delta(1e-5, 1) == pytest.approx(1e-15)
