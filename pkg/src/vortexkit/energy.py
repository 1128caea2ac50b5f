"""Energy functionals: sharp-core, Ginzburg-Landau, core-radius, and the
constrained minimal annular Dirichlet energy.

The sharp-core functional is half the squared gradient norm plus the closed
jump length divided by eps.  The constrained minimum F over fields with
prescribed circle degrees is computed by writing the phase as the explicit
winding part plus a single-valued correction and relaxing the correction
with conjugate gradients; F carries no 1/2 factor, matching the annulus
value 2 pi z^2 log(R/r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .geometry import Ball, BallFamily, Domain, Point2, Rect
from .grid_field import Grid, S1Field, grad_vartheta, jump_length
from .measures import AtomicMeasure, total_variation


@dataclass
class EnergyBreakdown:
    dirichlet: float = 0.0
    jump: float = 0.0
    gl_penalty: float = 0.0
    plastic: float = 0.0

    @property
    def total(self) -> float:
        return self.dirichlet + self.jump + self.gl_penalty + self.plastic

    def finite(self) -> bool:
        return math.isfinite(self.total)


INADMISSIBLE = EnergyBreakdown(dirichlet=math.inf)


def _cell_mask(grid: Grid, region):
    if region is None:
        return None
    ccx = grid.cell_centers_x()[:, None]
    ccy = grid.cell_centers_y()[None, :]
    if isinstance(region, Rect):
        return ((ccx >= region.x1_min) & (ccx <= region.x1_max)
                & (ccy >= region.x2_min) & (ccy <= region.x2_max))
    return region.cell_mask(ccx, ccy)


def dirichlet_energy(u: S1Field, region=None, exclude_balls=()) -> float:
    """(1/2) integral of |grad u|^2 by midpoint quadrature, streamed.

    Cells crossed by a declared jump are integrated over their two
    sub-rectangles with the one-sided trace gradients.
    """
    g = u.grid
    h2 = g.h * g.h
    mask = _cell_mask(g, region)
    ccx = g.cell_centers_x()
    ccy = g.cell_centers_y()[None, :]
    total = 0.0
    for i0, gx, gy in u.cell_gradient_blocks():
        e = gx * gx + gy * gy
        if mask is not None:
            e = np.where(mask[i0:i0 + gx.shape[0]], e, 0.0)
        if exclude_balls:
            keep = np.ones_like(e, dtype=bool)
            for b in exclude_balls:
                d2 = (ccx[i0:i0 + gx.shape[0], None] - b.center.x1) ** 2 \
                    + (ccy - b.center.x2) ** 2
                keep &= d2 > b.radius ** 2
            e = np.where(keep, e, 0.0)
        total += float(np.sum(e))
    total *= 0.5 * h2
    # exact split-cell correction replaces the area-averaged density
    for (i, j), (fl, gm, gp) in u.split_cells().items():
        center = (ccx[i], float(ccy[0, j]))
        if mask is not None and not _point_in_mask(region, center):
            continue
        if any(b.contains_point(center) for b in exclude_balls):
            continue
        avg = (fl * gm[0] + (1 - fl) * gp[0], fl * gm[1] + (1 - fl) * gp[1])
        exact = fl * (gm[0] ** 2 + gm[1] ** 2) + (1 - fl) * (gp[0] ** 2 + gp[1] ** 2)
        total += 0.5 * h2 * (exact - (avg[0] ** 2 + avg[1] ** 2))
    return total


def _point_in_mask(region, p) -> bool:
    if region is None:
        return True
    if isinstance(region, Rect):
        return region.contains_point(p)
    return bool(region.cell_mask(np.array([[p[0]]]), np.array([[p[1]]]))[0, 0])


def _jump_length_in(u: S1Field, region) -> float:
    if region is None:
        return jump_length(u)
    total = 0.0
    for s in u.segments:
        if s.axis == "v":
            if not isinstance(region, Rect):
                raise NotImplementedError("jump clipping needs a rectangle region")
            if not (region.x1_min <= s.coord <= region.x1_max):
                continue
            lo = max(s.lo, region.x2_min)
            hi = min(s.hi, region.x2_max)
        else:
            if not (region.x2_min <= s.coord <= region.x2_max):
                continue
            lo = max(s.lo, region.x1_min)
            hi = min(s.hi, region.x1_max)
        total += max(hi - lo, 0.0)
    return total


def f_eps(u: S1Field, eps: float, region: Rect | None = None,
          inner: Rect | None = None) -> EnergyBreakdown:
    """Sharp-core energy; the localized version restricts to a sub-rectangle.

    Fields whose jump set leaves the admissible inner region get the
    infinite-energy marker.
    """
    inner = inner if inner is not None else u.domain.inner
    for s in u.segments:
        pts = ([(s.coord, s.lo), (s.coord, s.hi)] if s.axis == "v"
               else [(s.lo, s.coord), (s.hi, s.coord)])
        if not all(inner.contains_point(p, tol=1e-12) for p in pts):
            return INADMISSIBLE
    return EnergyBreakdown(dirichlet=dirichlet_energy(u, region),
                           jump=_jump_length_in(u, region) / eps)


def cr_energy(mu: AtomicMeasure, u: S1Field, eps: float) -> EnergyBreakdown:
    """Core-radius energy: Dirichlet term outside the eps-cores + |mu|."""
    cores = [Ball(p, eps) for p, _ in mu.atoms]
    return EnergyBreakdown(dirichlet=dirichlet_energy(u, exclude_balls=cores),
                           plastic=total_variation(mu))


@dataclass
class R2Field:
    """Unconstrained plane-valued grid field (Ginzburg-Landau order parameter)."""
    grid: Grid
    comps: np.ndarray    # (nx, ny, 2)

    def __post_init__(self):
        if self.comps.shape != (self.grid.nx, self.grid.ny, 2):
            raise ValueError("component array does not match the grid")


def gl_energy(v: R2Field, eps: float) -> EnergyBreakdown:
    """Ginzburg-Landau energy: (1/2)|grad v|^2 + (1/eps^2)(1 - |v|^2)^2."""
    h = v.grid.h
    c = v.comps
    dir_term = 0.0
    for k in range(2):
        a = c[:, :, k]
        gx = 0.5 * (np.diff(a, axis=0)[:, 1:] + np.diff(a, axis=0)[:, :-1]) / h
        gy = 0.5 * (np.diff(a, axis=1)[1:, :] + np.diff(a, axis=1)[:-1, :]) / h
        dir_term += float(np.sum(gx * gx + gy * gy))
    dir_term *= 0.5 * h * h
    m2 = c[:, :, 0] ** 2 + c[:, :, 1] ** 2
    cell_m2 = 0.25 * (m2[:-1, :-1] + m2[1:, :-1] + m2[:-1, 1:] + m2[1:, 1:])
    pen = float(np.sum((1.0 - cell_m2) ** 2)) * h * h / eps ** 2
    return EnergyBreakdown(dirichlet=dir_term, gl_penalty=pen)


# -- constrained minimal annular energy -------------------------------------


@dataclass(frozen=True)
class DiskRegion:
    center: Point2
    radius: float

    def cell_mask(self, X, Y):
        return (X - self.center.x1) ** 2 + (Y - self.center.x2) ** 2 \
            <= self.radius ** 2

    def bbox(self) -> Rect:
        c, r = self.center, self.radius
        return Rect(c.x1 - r, c.x2 - r, c.x1 + r, c.x2 + r)


@dataclass(frozen=True)
class LayerRegion:
    """Between two nested ball unions: inside the outer, outside the inner."""
    outer_balls: tuple
    inner_balls: tuple

    def cell_mask(self, X, Y):
        m = np.zeros(np.broadcast_shapes(X.shape, Y.shape), dtype=bool)
        for b in self.outer_balls:
            m |= (X - b.center.x1) ** 2 + (Y - b.center.x2) ** 2 <= b.radius ** 2
        for b in self.inner_balls:
            m &= (X - b.center.x1) ** 2 + (Y - b.center.x2) ** 2 > b.radius ** 2
        return m

    def bbox(self) -> Rect:
        return Rect(min(b.center.x1 - b.radius for b in self.outer_balls),
                    min(b.center.x2 - b.radius for b in self.outer_balls),
                    max(b.center.x1 + b.radius for b in self.outer_balls),
                    max(b.center.x2 + b.radius for b in self.outer_balls))


class CGConvergenceError(RuntimeError):
    pass


def _region_bbox(region) -> Rect:
    if isinstance(region, Rect):
        return region
    if isinstance(region, Domain):
        return region.outer
    return region.bbox()


def annulus_min_energy(family: BallFamily, mu: AtomicMeasure, region,
                       n: int = 192, rtol: float = 1e-10,
                       return_field: bool = False):
    """Minimal integral of |grad u|^2 under prescribed ball degrees (no 1/2).

    The phase is the sum of exact winding terms, one per excluded ball with
    its prescribed degree, plus a single-valued nodal correction; the
    correction solves the grid normal equations by Jacobi-preconditioned
    conjugate gradients to the requested relative residual.
    """
    if isinstance(region, Domain):
        region = region.outer
    bbox = _region_bbox(region)
    h = max(bbox.x1_max - bbox.x1_min, bbox.x2_max - bbox.x2_min) / (n - 1)
    grid = Grid.cover_rect(bbox, h)
    ccx = grid.cell_centers_x()[:, None]
    ccy = grid.cell_centers_y()[None, :]
    active = np.ones((grid.nx - 1, grid.ny - 1), dtype=bool)
    m = _cell_mask(grid, region)
    if m is not None:
        active &= m
    degrees = []
    for b in family:
        z = sum(w for p, w in mu.atoms if b.contains_point(p, tol=1e-12))
        degrees.append((b, z))
        active &= (ccx - b.center.x1) ** 2 + (ccy - b.center.x2) ** 2 > b.radius ** 2
    ncell = int(np.count_nonzero(active))
    if ncell == 0 or all(z == 0 for _, z in degrees):
        return (0.0, None) if return_field else 0.0
    gx_s = np.zeros((grid.nx - 1, grid.ny - 1))
    gy_s = np.zeros_like(gx_s)
    for b, z in degrees:
        if z == 0:
            continue
        g1, g2 = grad_vartheta(ccx - b.center.x1, ccy - b.center.x2)
        gx_s += z * g1
        gy_s += z * g2

    # gradient operator: cell averages of nodal differences
    n1, n2 = grid.nx, grid.ny
    idx = np.arange(n1 * n2).reshape(n1, n2)
    ci, cj = np.nonzero(active)
    rows = np.repeat(np.arange(2 * ncell), 4)
    half = 0.5 / grid.h
    cols = np.empty((2 * ncell, 4), dtype=np.int64)
    vals = np.empty((2 * ncell, 4))
    cols[:ncell, 0] = idx[ci + 1, cj]
    cols[:ncell, 1] = idx[ci + 1, cj + 1]
    cols[:ncell, 2] = idx[ci, cj]
    cols[:ncell, 3] = idx[ci, cj + 1]
    vals[:ncell] = [half, half, -half, -half]
    cols[ncell:, 0] = idx[ci, cj + 1]
    cols[ncell:, 1] = idx[ci + 1, cj + 1]
    cols[ncell:, 2] = idx[ci, cj]
    cols[ncell:, 3] = idx[ci + 1, cj]
    vals[ncell:] = [half, half, -half, -half]
    G = sparse.csr_matrix((vals.ravel(), (rows, cols.ravel())),
                          shape=(2 * ncell, n1 * n2))
    gsing = np.concatenate([gx_s[active], gy_s[active]])
    AtA = (G.T @ G).tocsr()
    rhs = -G.T @ gsing
    diag = AtA.diagonal()
    diag[diag == 0.0] = 1.0
    M = LinearOperator(AtA.shape, matvec=lambda x: x / diag)
    cap = int(20 * math.sqrt(n1 * n2)) + 10
    psi, info = cg(AtA, rhs, rtol=rtol, atol=0.0, maxiter=cap, M=M)
    if info > 0:
        res = float(np.linalg.norm(AtA @ psi - rhs) / max(np.linalg.norm(rhs), 1e-300))
        raise CGConvergenceError(
            f"correction solve stopped at iteration cap {cap}, relative residual {res:.3e}")
    total_grad = gsing + G @ psi
    energy = float(np.sum(total_grad ** 2)) * grid.h ** 2
    if not return_field:
        return energy
    X = grid.xs()[:, None]
    Y = grid.ys()[None, :]
    th = psi.reshape(n1, n2).copy()
    for b, z in degrees:
        if z:
            th += z * np.arctan2(-(X - b.center.x1), Y - b.center.x2)
    dom = Domain(bbox, Rect(bbox.x1_min + 2 * h, bbox.x2_min + 2 * h,
                            bbox.x1_max - 2 * h, bbox.x2_max - 2 * h))
    return energy, S1Field(grid, th, [], dom)
