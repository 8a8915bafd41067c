"""Compiled loops for the per-stage hot spots.

Each kernel mirrors a vectorized numpy routine elsewhere in the package; the
numpy versions stay the reference implementations and are used in tests to
check these.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _dot(a, b):
    s = 0.0
    for l in range(a.shape[0]):
        s += a[l] * b[l]
    return s


@njit(cache=True)
def np_faces_volume(c, p, V, Vd, w, Lr, Ll, dLr, dLl, D, E, h):
    """``K dc/dt`` for zero-flux boundaries (interior faces and volume terms only)."""
    m, N, n = c.shape
    Q = V.shape[0]
    out = np.zeros_like(c)
    vol = 2.0 / h
    face = 0.5 / h
    for i in range(m):
        for j in range(N):
            for q in range(Q):
                cq = 0.0
                pd = 0.0
                for l in range(n):
                    cq += c[i, j, l] * V[q, l]
                    pd += p[i, j, l] * Vd[q, l]
                f = -vol * cq * pd * w[q]
                for l in range(n):
                    out[i, j, l] += f * Vd[q, l]
        for j in range(N - 1):
            S = _dot(c[i, j], Lr) + _dot(c[i, j + 1], Ll)
            G = _dot(p[i, j + 1], E) - _dot(p[i, j], D)
            J = _dot(p[i, j], Lr) - _dot(p[i, j + 1], Ll)
            a = face * S * G
            b = face * S * J
            for l in range(n):
                out[i, j, l] += a * Lr[l] + b * dLr[l]
                out[i, j + 1, l] += b * dLl[l] - a * Ll[l]
    return out


@njit(cache=True)
def chemical_potential(c, psi, charges, V, proj):
    """``q psi + Pi(log c)``; returns ``(p, bad)`` where ``bad`` flags the first nonpositive node."""
    m, N, n = c.shape
    Q = V.shape[0]
    p = np.empty_like(c)
    bad = np.array([-1, -1])
    lg = np.empty(Q)
    for i in range(m):
        for j in range(N):
            for q in range(Q):
                cq = 0.0
                for l in range(n):
                    cq += c[i, j, l] * V[q, l]
                if not cq > 0.0:
                    bad[0] = i
                    bad[1] = j
                    return p, bad
                lg[q] = np.log(cq)
            # project the deviation from one node value so constants give exactly zero higher modes
            ref = lg[0]
            for l in range(n):
                p[i, j, l] = charges[i] * psi[j, l]
            p[i, j, 0] += ref
            for q in range(Q):
                d = lg[q] - ref
                for l in range(n):
                    p[i, j, l] += d * proj[q, l]
    return p, bad


@njit(cache=True)
def _row_min(r, n):
    """Minimum on [-1, 1] of a row of degree ``n - 1 <= 3``, closed form."""
    c0 = r[0]
    if n == 2:
        return c0 - abs(r[1])
    c1 = r[1]
    c2 = r[2]
    if n == 3:
        best = min(c0 - c1 + c2, c0 + c1 + c2)
        if c2 > 0.0:
            x = -c1 / (3.0 * c2)
            if abs(x) <= 1.0:
                best = min(best, c0 - c1 * c1 / (6.0 * c2) - 0.5 * c2)
        return best
    c3 = r[3]
    best = min(c0 - c1 + c2 - c3, c0 + c1 + c2 + c3)
    A = 7.5 * c3
    B = 3.0 * c2
    C = c1 - 1.5 * c3
    roots = np.empty(2)
    nr = 0
    if A != 0.0:
        disc = B * B - 4.0 * A * C
        if disc >= 0.0:
            sq = np.sqrt(disc)
            qq = -0.5 * (B + (sq if B >= 0.0 else -sq))
            roots[0] = qq / A
            nr = 1
            if qq != 0.0:
                roots[1] = C / qq
                nr = 2
    elif B != 0.0:
        roots[0] = -C / B
        nr = 1
    for t in range(nr):
        x = roots[t]
        if abs(x) <= 1.0:
            v = c0 + c1 * x + c2 * 0.5 * (3.0 * x * x - 1.0) + c3 * 0.5 * (5.0 * x * x * x - 3.0 * x)
            best = min(best, v)
    return best


@njit(cache=True)
def limit_flat(flat, delta):
    """Squeeze rows of an ``(R, n)`` array with ``n <= 4``; returns ``(out, limited_rows, bad_row)``."""
    R, n = flat.shape
    out = flat.copy()
    limited = np.zeros(R, dtype=np.bool_)
    for r in range(R):
        avg = flat[r, 0]
        if not avg > delta:
            return out, limited, r
        if n == 1:
            continue
        lower = avg
        for l in range(1, n):
            lower -= abs(flat[r, l])
        if lower >= delta:
            continue
        mn = _row_min(flat[r], n)
        if mn < delta:
            theta = (avg - delta) / (avg - mn)
            for l in range(1, n):
                out[r, l] = flat[r, l] * theta
            limited[r] = True
    return out, limited, -1


@njit(cache=True)
def weighted_form(M, u, v, V, Vd, w, Lr, Ll, dLr, dLl, D, E, h):
    """``A_M(u, v)`` for single-field coefficient arrays ``(N, n)``."""
    N, n = M.shape
    Q = V.shape[0]
    vol = 0.0
    for j in range(N):
        for q in range(Q):
            mq = 0.0
            ud = 0.0
            vd = 0.0
            for l in range(n):
                mq += M[j, l] * V[q, l]
                ud += u[j, l] * Vd[q, l]
                vd += v[j, l] * Vd[q, l]
            vol += w[q] * mq * ud * vd
    total = 2.0 / h * vol
    for j in range(N - 1):
        m_avg = 0.5 * (_dot(M[j], Lr) + _dot(M[j + 1], Ll))
        u_jump = _dot(u[j + 1], Ll) - _dot(u[j], Lr)
        v_jump = _dot(v[j + 1], Ll) - _dot(v[j], Lr)
        u_flux = (_dot(u[j + 1], E) - _dot(u[j], D)) / h
        v_dx = (_dot(v[j + 1], dLl) + _dot(v[j], dLr)) / h
        total += m_avg * (u_flux * v_jump + v_dx * u_jump)
    return total
