"""Dense primal simplex with Bland pivoting.

Solves max c.x subject to A x <= b, x >= 0 with b >= 0, so the slack basis
is feasible and no phase-1 is needed.  Bland's rule (smallest eligible index)
makes every pivot deterministic and rules out cycling; the sizes here are a
few dozen variables, where a dense tableau is the simplest exact choice.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-11


class SimplexError(RuntimeError):
    pass


def solve_max(c, A, b, max_iter=100000):
    """Return (x, value) maximizing c.x over {A x <= b, x >= 0}."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    m, n = A.shape
    if np.any(b < 0):
        raise SimplexError("needs b >= 0 (slack basis start)")
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        red = T[m, :n + m]
        enter = -1
        for jcol in range(n + m):
            if red[jcol] < -PIVOT_TOL:
                enter = jcol
                break
        if enter < 0:
            x = np.zeros(n + m)
            for row, bv in enumerate(basis):
                x[bv] = T[row, -1]
            return x[:n], float(T[m, -1])
        col = T[:m, enter]
        ratios = np.full(m, np.inf)
        mask = col > PIVOT_TOL
        ratios[mask] = T[:m, -1][mask] / col[mask]
        best = np.inf
        leave = -1
        for row in range(m):
            if ratios[row] < best - 1e-15 or (
                    ratios[row] < best + 1e-15 and
                    (leave < 0 or basis[row] < basis[leave])):
                if np.isfinite(ratios[row]):
                    best = ratios[row]
                    leave = row
        if leave < 0:
            raise SimplexError("unbounded objective")
        piv = T[leave, enter]
        T[leave] /= piv
        for row in range(m + 1):
            if row != leave and T[row, enter] != 0.0:
                T[row] -= T[row, enter] * T[leave]
        basis[leave] = enter
    raise SimplexError("iteration limit reached")
