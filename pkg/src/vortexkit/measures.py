"""Atomic measures and flat-norm computations.

The flat norm pairs a measure (or a current) against test functions with
sup-norm plus Lipschitz seminorm at most one.  For finitely many atoms this
is an exact finite linear program: split the unit budget into alpha (sup)
and beta (Lipschitz) and constrain the test values at the atoms; McShane
extension and clamping make the finite program equal to the functional one.
The same constraint system on grid nodal values gives the grid-approximate
flat distance used against currents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import simplex
from .geometry import Domain, Point2
from .grid_field import Grid

GRID_LP_OPTIONS = {
    "ipm_optimality_tolerance": 1e-9,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


@dataclass
class AtomicMeasure:
    """Finite signed sum of Dirac masses."""
    atoms: list = field(default_factory=list)   # [(Point2, weight)]

    def __post_init__(self):
        self.atoms = [(Point2.of(p), float(w)) for p, w in self.atoms]

    @staticmethod
    def zero() -> "AtomicMeasure":
        return AtomicMeasure([])

    @staticmethod
    def single(p, w=1.0) -> "AtomicMeasure":
        return AtomicMeasure([(Point2.of(p), w)])

    def mass(self) -> float:
        return sum(w for _, w in self.atoms)

    def scaled(self, s: float) -> "AtomicMeasure":
        return AtomicMeasure([(p, s * w) for p, w in self.atoms])

    def merged(self, tol: float = 0.0) -> "AtomicMeasure":
        """Combine coincident atoms and drop zero weights."""
        out: list = []
        for p, w in self.atoms:
            for k, (q, v) in enumerate(out):
                if p.dist(q) <= tol:
                    out[k] = (q, v + w)
                    break
            else:
                out.append((p, w))
        return AtomicMeasure([(p, w) for p, w in out if w != 0.0])

    def __sub__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(self.atoms + [(p, -w) for p, w in other.atoms]).merged()

    def __add__(self, other: "AtomicMeasure") -> "AtomicMeasure":
        return AtomicMeasure(self.atoms + other.atoms).merged()

    def in_x_class(self, omega: Domain) -> bool:
        """Membership in the admissible class: nonzero integer weights inside."""
        for p, w in self.atoms:
            if abs(w - round(w)) > 1e-9 or round(w) == 0:
                return False
            if not omega.outer.contains_point(p):
                return False
        return True


def total_variation(mu: AtomicMeasure) -> float:
    return sum(abs(w) for _, w in mu.merged().atoms)


@dataclass
class FlatNormResult:
    value: float
    witness: object           # atom values (array) or nodal grid (nx, ny)
    status: str               # "exact" | "grid-approx"
    alpha: float
    beta: float


def flat_distance_atomic(mu: AtomicMeasure, nu: AtomicMeasure,
                         omega: Domain) -> FlatNormResult:
    """Exact flat distance between atomic measures, by dense simplex.

    Variables are the test values at the atoms plus the sup budget alpha and
    Lipschitz budget beta; constraints are |phi_i| <= alpha, the pairwise
    Lipschitz bounds, the boundary decay |phi_i| <= beta*dist(x_i, boundary),
    and alpha + beta <= 1.
    """
    diff = (mu - nu).merged()
    pts = [p for p, _ in diff.atoms]
    a = np.array([w for _, w in diff.atoms])
    for p in pts:
        if not omega.outer.contains_point(p):
            raise ValueError(f"atom {p} outside the domain")
    k = len(pts)
    if k == 0:
        return FlatNormResult(0.0, np.zeros(0), "exact", 0.0, 0.0)
    # variables: p_i, n_i (phi_i = p_i - n_i), alpha, beta
    nv = 2 * k + 2
    ia, ib = 2 * k, 2 * k + 1
    rows = []
    for i in range(k):
        for j in range(i + 1, k):
            d = pts[i].dist(pts[j])
            r = np.zeros(nv)
            r[i], r[k + i], r[j], r[k + j], r[ib] = 1, -1, -1, 1, -d
            rows.append(r)
            rows.append(-r + 0.0)
            rows[-1][ib] = -d
    for i in range(k):
        for sgn in (1.0, -1.0):
            r = np.zeros(nv)
            r[i], r[k + i], r[ia] = sgn, -sgn, -1.0
            rows.append(r)
            r = np.zeros(nv)
            r[i], r[k + i], r[ib] = sgn, -sgn, -omega.outer.dist_to_boundary(pts[i])
            rows.append(r)
    r = np.zeros(nv)
    r[ia] = r[ib] = 1.0
    rows.append(r)
    A = np.vstack(rows)
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    c = np.concatenate([a, -a, [0.0, 0.0]])
    x, value = simplex.solve_max(c, A, b)
    phi = x[:k] - x[k:2 * k]
    return FlatNormResult(value, phi, "exact", float(x[ia]), float(x[ib]))


# -- grid LP ----------------------------------------------------------------


def _grid_lp_constraints(grid: Grid):
    """Sparse rows for the Lipschitz/sup constraint system on nodal phi.

    Variables: N nodal values, then alpha, then beta.  Axis and diagonal
    neighbor differences bound beta, node magnitudes bound alpha, and one row
    couples alpha + beta <= 1.
    """
    n1, n2 = grid.nx, grid.ny
    N = n1 * n2
    idx = np.arange(N).reshape(n1, n2)
    h = grid.h
    rows, cols, vals = [], [], []
    r = 0

    def add_pairs(a, b, dist):
        nonlocal r
        m = a.size
        rr = np.arange(r, r + m)
        rows.extend([rr, rr, rr + m, rr + m])
        cols.extend([a, b, a, b])
        vals.extend([np.ones(m), -np.ones(m), -np.ones(m), np.ones(m)])
        rows.extend([rr, rr + m])
        cols.extend([np.full(m, N + 1), np.full(m, N + 1)])
        vals.extend([np.full(m, -dist), np.full(m, -dist)])
        r += 2 * m

    add_pairs(np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()]),
              np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()]), h)
    add_pairs(np.concatenate([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()]),
              np.concatenate([idx[1:, 1:].ravel(), idx[1:, :-1].ravel()]),
              h * math.sqrt(2.0))
    iN = np.arange(N)
    for sgn in (1.0, -1.0):
        rr = np.arange(r, r + N)
        rows.extend([rr, rr])
        cols.extend([iN, np.full(N, N)])
        vals.extend([np.full(N, sgn), -np.ones(N)])
        r += N
    rows.append(np.array([r]))
    cols.append(np.array([N]))
    vals.append(np.array([1.0]))
    rows.append(np.array([r]))
    cols.append(np.array([N + 1]))
    vals.append(np.array([1.0]))
    r += 1
    A = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r, N + 2))
    b = np.zeros(r)
    b[-1] = 1.0
    return A, b


def _scatter_atoms(target: AtomicMeasure, grid: Grid) -> np.ndarray:
    """Coefficients of <target, phi> in the nodal values (bilinear)."""
    n1, n2 = grid.nx, grid.ny
    c = np.zeros(n1 * n2)
    for p, w in target.atoms:
        fx = (p.x1 - grid.origin.x1) / grid.h
        fy = (p.x2 - grid.origin.x2) / grid.h
        i = int(np.clip(math.floor(fx), 0, n1 - 2))
        j = int(np.clip(math.floor(fy), 0, n2 - 2))
        s = fx - i
        t = fy - j
        c[i * n2 + j] += w * (1 - s) * (1 - t)
        c[(i + 1) * n2 + j] += w * s * (1 - t)
        c[i * n2 + j + 1] += w * (1 - s) * t
        c[(i + 1) * n2 + j + 1] += w * s * t
    return c


def _solve_grid_lp(c_nodes: np.ndarray, grid: Grid) -> FlatNormResult:
    n1, n2 = grid.nx, grid.ny
    N = n1 * n2
    A, b = _grid_lp_constraints(grid)
    lb = np.full(N + 2, -np.inf)
    ub = np.full(N + 2, np.inf)
    ring = np.zeros((n1, n2), dtype=bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    lb[:N][ring.ravel()] = 0.0
    ub[:N][ring.ravel()] = 0.0
    lb[N:] = 0.0
    c = np.concatenate([c_nodes, [0.0, 0.0]])
    res = linprog(-c, A_ub=A, b_ub=b, bounds=np.stack([lb, ub], axis=1),
                  method="highs-ipm", options=dict(GRID_LP_OPTIONS))
    if res.status != 0:
        raise RuntimeError(f"grid flat LP failed: {res.message}")
    phi = res.x[:N].reshape(n1, n2)
    return FlatNormResult(float(-res.fun), phi, "grid-approx",
                          float(res.x[N]), float(res.x[N + 1]))


def flat_distance_grid_atoms(mu: AtomicMeasure, nu: AtomicMeasure,
                             omega: Domain, grid: Grid) -> FlatNormResult:
    """Grid-LP flat distance between atomic measures (the oracle route)."""
    diff = (mu - nu).merged()
    for p, _ in diff.atoms:
        if not omega.outer.contains_point(p):
            raise ValueError(f"atom {p} outside the domain")
    return _solve_grid_lp(_scatter_atoms(diff, grid), grid)


def flat_distance_current(j, target: AtomicMeasure, omega: Domain,
                          grid: Grid) -> FlatNormResult:
    """Grid-LP flat distance between a current and a signed atomic measure.

    The caller supplies the target already scaled (e.g. pi * mu); the current
    only needs to expose `assemble_test_gradient_coeffs(grid)`.
    """
    c = j.assemble_test_gradient_coeffs(grid) - _scatter_atoms(target, grid)
    return _solve_grid_lp(c, grid)


def save_witness_csv(result: FlatNormResult, grid: Grid, path):
    """Witness nodal values as x,y,phi rows (grid results only)."""
    phi = np.asarray(result.witness)
    xs = grid.xs()
    ys = grid.ys()
    with open(path, "w") as fh:
        fh.write("x,y,phi\n")
        for i in range(grid.nx):
            for jj in range(grid.ny):
                fh.write(f"{xs[i]:.17g},{ys[jj]:.17g},{phi[i, jj]:.17g}\n")


def load_atoms_csv(path) -> AtomicMeasure:
    atoms = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "x,y,weight":
            raise ValueError(f"atoms CSV must start with 'x,y,weight', got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x, y, w = line.split(",")
            atoms.append((Point2(float(x), float(y)), float(w)))
    return AtomicMeasure(atoms)


def save_atoms_csv(mu: AtomicMeasure, path):
    with open(path, "w") as fh:
        fh.write("x,y,weight\n")
        for p, w in mu.atoms:
            fh.write(f"{p.x1:.17g},{p.x2:.17g},{w:.17g}\n")
