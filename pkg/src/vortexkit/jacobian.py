"""Two-dimensional weak Jacobian of grid fields.

The vector measure lambda splits into a per-cell absolutely continuous part
(half the rotated phase gradient) and a jump part supported on the declared
segments.  The jump density uses the two-sided trace average, which for unit
traces reduces to sin(theta_plus - theta_minus)/2 per unit length.  Pairing
the measure with the gradient of a test function gives <Ju, phi>; circle
degrees and plaquette vorticity are the integer-valued diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Point2
from .grid_field import Grid, S1Field, wrap_angle

TWO_PI = 2.0 * math.pi


class CurrentJ:
    """lambda_u as quadrature data: lazy cell densities + jump samples.

    Cell blocks are generated on demand so fields far above desk size never
    materialize their full gradient.  `jump_pts` / `jump_vecs` hold trapezoid
    quadrature nodes of the jump part, weights folded into the vectors.
    """

    def __init__(self, field: S1Field):
        self.field = field
        self.jump_pts, self.jump_vecs = _jump_quadrature(field)

    def iter_cell_blocks(self, block: int = 256):
        """Yield (i0, lam1, lam2): lambda vector per cell, lam = (-gy, gx)/2."""
        for i0, gx, gy in self.field.cell_gradient_blocks(block=block):
            yield i0, -0.5 * gy, 0.5 * gx

    def dense_cell_lambda(self):
        g = self.field.grid
        lam = np.empty((g.nx - 1, g.ny - 1, 2))
        for i0, l1, l2 in self.iter_cell_blocks():
            lam[i0:i0 + l1.shape[0], :, 0] = l1
            lam[i0:i0 + l1.shape[0], :, 1] = l2
        return lam

    def component_masses(self):
        """(|lambda^1|(Omega), |lambda^2|(Omega)) by quadrature.

        lambda^1 has cell density gx/2 and jump density sin(jump)/2 * nu_1;
        the vector measure is (-lambda^2, lambda^1).
        """
        h2 = self.field.grid.h ** 2
        m1 = m2 = 0.0
        for i0, l1, l2 in self.iter_cell_blocks():
            m2 += float(np.sum(np.abs(l1))) * h2   # |(-lambda^2)| cells
            m1 += float(np.sum(np.abs(l2))) * h2
        # jump vectors are s*w*(-nu2, nu1): component 1 carries nu2, 2 carries nu1
        m2 += float(np.sum(np.abs(self.jump_vecs[:, 0])))
        m1 += float(np.sum(np.abs(self.jump_vecs[:, 1])))
        return m1, m2

    def total_mass(self):
        h2 = self.field.grid.h ** 2
        m = 0.0
        for i0, l1, l2 in self.iter_cell_blocks():
            m += float(np.sum(np.hypot(l1, l2))) * h2
        m += float(np.sum(np.hypot(self.jump_vecs[:, 0], self.jump_vecs[:, 1])))
        return m

    def assemble_test_gradient_coeffs(self, lp_grid: Grid) -> np.ndarray:
        """Coefficients c with c . phi_nodes = integral grad(phi) . d lambda.

        phi is piecewise bilinear on lp_grid; the quadrature is the midpoint
        rule on the field cells plus the jump trapezoid nodes.
        """
        g = self.field.grid
        n1, n2 = lp_grid.nx, lp_grid.ny
        H = lp_grid.h
        c = np.zeros(n1 * n2)
        # when field cells are coarser than the test grid, supersample each
        # cell so the piecewise gradient of phi is integrated accurately
        sub = max(1, int(math.ceil(2.0 * g.h / H)))
        offs = (np.arange(sub) + 0.5) / sub * g.h
        base_x = g.origin.x1 + g.h * np.arange(g.nx - 1)
        base_y = g.origin.x2 + g.h * np.arange(g.ny - 1)
        h2 = (g.h / sub) ** 2
        for i0, l1, l2 in self.iter_cell_blocks():
            nb = l1.shape[0]
            for ox in offs:
                for oy in offs:
                    fx = (base_x[i0:i0 + nb, None] + ox - lp_grid.origin.x1) / H
                    fy = (base_y[None, :] + oy - lp_grid.origin.x2) / H
                    I = np.clip(np.floor(fx).astype(np.int64), 0, n1 - 2)
                    J = np.clip(np.floor(fy).astype(np.int64), 0, n2 - 2)
                    s = fx - I
                    t = fy - J
                    v1 = l1 * h2
                    v2 = l2 * h2
                    base = (I * n2 + J)
                    s, t = np.broadcast_arrays(s + 0 * t, t + 0 * s)
                    base = np.broadcast_to(base + 0 * J, s.shape)
                    w00 = (-(1 - t) * v1 - (1 - s) * v2) / H
                    w10 = ((1 - t) * v1 - s * v2) / H
                    w01 = (-t * v1 + (1 - s) * v2) / H
                    w11 = (t * v1 + s * v2) / H
                    for off, w in ((0, w00), (n2, w10), (1, w01), (n2 + 1, w11)):
                        c += np.bincount((base + off).ravel(), weights=w.ravel(),
                                         minlength=n1 * n2)
        if len(self.jump_pts):
            fx = (self.jump_pts[:, 0] - lp_grid.origin.x1) / H
            fy = (self.jump_pts[:, 1] - lp_grid.origin.x2) / H
            I = np.clip(np.floor(fx).astype(np.int64), 0, n1 - 2)
            J = np.clip(np.floor(fy).astype(np.int64), 0, n2 - 2)
            s = fx - I
            t = fy - J
            v1 = self.jump_vecs[:, 0]
            v2 = self.jump_vecs[:, 1]
            base = I * n2 + J
            for off, w in ((0, (-(1 - t) * v1 - (1 - s) * v2) / H),
                           (n2, ((1 - t) * v1 - s * v2) / H),
                           (1, (-t * v1 + (1 - s) * v2) / H),
                           (n2 + 1, (t * v1 + s * v2) / H)):
                c += np.bincount(base + off, weights=w, minlength=n1 * n2)
        return c


def _jump_quadrature(field: S1Field):
    pts = []
    vecs = []
    for seg in field.segments:
        ts = seg.sample_t
        if len(ts) < 2:
            continue
        w = np.empty_like(ts)
        w[1:-1] = 0.5 * (ts[2:] - ts[:-2])
        w[0] = 0.5 * (ts[1] - ts[0])
        w[-1] = 0.5 * (ts[-1] - ts[-2])
        s_density = 0.5 * np.sin(seg.theta_plus - seg.theta_minus)
        n1, n2 = seg.normal()
        if seg.axis == "v":
            p = np.stack([np.full_like(ts, seg.coord), ts], axis=1)
        else:
            p = np.stack([ts, np.full_like(ts, seg.coord)], axis=1)
        v = np.stack([-n2 * s_density * w, n1 * s_density * w], axis=1)
        pts.append(p)
        vecs.append(v)
    if not pts:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.concatenate(pts), np.concatenate(vecs)


def lambda_field(u: S1Field) -> CurrentJ:
    """The current of u: cell densities plus trace-averaged jump densities."""
    return CurrentJ(u)


@dataclass
class TestFunction:
    """Piecewise-bilinear test function, zero on the boundary node ring."""
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.shape != (self.grid.nx, self.grid.ny):
            raise ValueError("nodal values do not match the grid")
        ring = np.zeros_like(v, dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        if np.any(v[ring] != 0.0):
            raise ValueError("test functions must vanish on the boundary ring")

    @staticmethod
    def from_callable(grid: Grid, f) -> "TestFunction":
        X = grid.xs()[:, None]
        Y = grid.ys()[None, :]
        v = np.asarray(f(X, Y), dtype=np.float64)
        v = np.broadcast_to(v, (grid.nx, grid.ny)).copy()
        v[0, :] = v[-1, :] = v[:, 0] = v[:, -1] = 0.0
        return TestFunction(grid, v)

    def value_at(self, pts: np.ndarray) -> np.ndarray:
        g = self.grid
        fx = (pts[:, 0] - g.origin.x1) / g.h
        fy = (pts[:, 1] - g.origin.x2) / g.h
        i = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
        s = np.clip(fx - i, 0.0, 1.0)
        t = np.clip(fy - j, 0.0, 1.0)
        v = self.values
        return ((1 - s) * (1 - t) * v[i, j] + s * (1 - t) * v[i + 1, j]
                + (1 - s) * t * v[i, j + 1] + s * t * v[i + 1, j + 1])

    def c01_norm(self) -> float:
        """sup norm + Lipschitz seminorm from axis and diagonal differences."""
        v = self.values
        h = self.grid.h
        lip = 0.0
        if v.shape[0] > 1:
            lip = max(lip, float(np.max(np.abs(np.diff(v, axis=0)))) / h)
        if v.shape[1] > 1:
            lip = max(lip, float(np.max(np.abs(np.diff(v, axis=1)))) / h)
        d = h * math.sqrt(2.0)
        lip = max(lip, float(np.max(np.abs(v[1:, 1:] - v[:-1, :-1]))) / d)
        lip = max(lip, float(np.max(np.abs(v[1:, :-1] - v[:-1, 1:]))) / d)
        return float(np.max(np.abs(v))) + lip


def ju_apply(u, phi: TestFunction) -> float:
    """<Ju, phi> = integral grad(phi) . d lambda_u.

    Accepts a field or a ready CurrentJ.  Midpoint quadrature on cells,
    trapezoid on jump segments; linear in phi.
    """
    j = u if isinstance(u, CurrentJ) else lambda_field(u)
    g = j.field.grid
    pg = phi.grid
    H = pg.h
    v = phi.values
    ccx = g.cell_centers_x()
    ccy = g.cell_centers_y()
    h2 = g.h ** 2
    total = 0.0
    for i0, l1, l2 in j.iter_cell_blocks():
        fx = (ccx[i0:i0 + l1.shape[0], None] - pg.origin.x1) / H
        fy = (ccy[None, :] - pg.origin.x2) / H
        I = np.clip(np.floor(fx).astype(np.int64), 0, pg.nx - 2)
        J = np.clip(np.floor(fy).astype(np.int64), 0, pg.ny - 2)
        s = fx - I
        t = fy - J
        dphix = ((v[I + 1, J] - v[I, J]) * (1 - t)
                 + (v[I + 1, J + 1] - v[I, J + 1]) * t) / H
        dphiy = ((v[I, J + 1] - v[I, J]) * (1 - s)
                 + (v[I + 1, J + 1] - v[I + 1, J]) * s) / H
        total += float(np.sum(dphix * l1 + dphiy * l2)) * h2
    if len(j.jump_pts):
        pts = j.jump_pts
        fx = (pts[:, 0] - pg.origin.x1) / H
        fy = (pts[:, 1] - pg.origin.x2) / H
        I = np.clip(np.floor(fx).astype(np.int64), 0, pg.nx - 2)
        J = np.clip(np.floor(fy).astype(np.int64), 0, pg.ny - 2)
        s = fx - I
        t = fy - J
        dphix = ((v[I + 1, J] - v[I, J]) * (1 - t)
                 + (v[I + 1, J + 1] - v[I, J + 1]) * t) / H
        dphiy = ((v[I, J + 1] - v[I, J]) * (1 - s)
                 + (v[I + 1, J + 1] - v[I + 1, J]) * s) / H
        total += float(np.sum(dphix * j.jump_vecs[:, 0] + dphiy * j.jump_vecs[:, 1]))
    return total


def degree_on_circle(u: S1Field, center, r: float) -> int:
    """Winding number of u along a circle, by wrapped angle increments.

    The circle must stay inside the grid, keep away from declared jump edges,
    and have radius at least 4 grid cells so the sampling resolves the phase.
    """
    c = Point2.of(center)
    g = u.grid
    if r < 4.0 * g.h:
        raise ValueError(f"circle radius {r} below the 4h sampling floor")
    ext = g.extent()
    if not (ext.contains_point(c) and ext.dist_to_boundary(c) > r + g.h):
        raise ValueError("circle leaves the grid")
    if u.circle_hits_jump(c, r):
        raise ValueError("degree undefined: circle crosses a declared jump edge")
    npts = max(64, int(math.ceil(8.0 * TWO_PI * r / g.h)))
    ang = TWO_PI * np.arange(npts) / npts
    pts = np.stack([c.x1 + r * np.cos(ang), c.x2 + r * np.sin(ang)], axis=1)
    uv = u.sample_unit(pts)
    alpha = np.arctan2(uv[:, 1], uv[:, 0])
    inc = wrap_angle(np.diff(np.concatenate([alpha, alpha[:1]])))
    total = float(np.sum(inc)) / TWO_PI
    deg = int(round(total))
    if abs(total - deg) > 0.05:
        raise ValueError(f"winding sum {total} is not close to an integer")
    return deg


def degree_quadrature(u: S1Field, center, r: float) -> float:
    """Degree by the current-circulation quadrature (1/pi) * contour integral.

    Discretizes the boundary integral of the tangential current with central
    differences of the interpolated unit field; returns a real number close
    to the integer degree.  Used as the cross-check of the increment route.
    """
    c = Point2.of(center)
    g = u.grid
    npts = max(64, int(math.ceil(8.0 * TWO_PI * r / g.h)))
    ang = TWO_PI * np.arange(npts) / npts
    pts = np.stack([c.x1 + r * np.cos(ang), c.x2 + r * np.sin(ang)], axis=1)
    uv = u.sample_unit(pts)
    ds = TWO_PI * r / npts
    du = (np.roll(uv, -1, axis=0) - np.roll(uv, 1, axis=0)) / (2 * ds)
    jtau = 0.5 * (uv[:, 0] * du[:, 1] - uv[:, 1] * du[:, 0])
    return float(np.sum(jtau) * ds / math.pi)


def plaquette_vorticity(u: S1Field) -> np.ndarray:
    """Integer winding per grid cell.

    Sum of the four wrapped angle increments around the cell, divided by
    2*pi.  Across a declared jump edge the increment is split through the
    stored traces (continuous parts wrapped separately, plus the principal
    value of the declared jump), so a declared jump of amplitude within the
    principal branch creates no spurious vorticity.  Cell sums telescope, so
    summing over any rectangle of cells reproduces the boundary winding.
    """
    th = u.theta
    wx = wrap_angle(th[1:, :] - th[:-1, :])
    wy = wrap_angle(th[:, 1:] - th[:, :-1])
    total = wx[:, :-1] + wy[1:, :] - wx[:, 1:] - wy[:-1, :]
    ncx, ncy = total.shape
    for (i, jj), (tm, tp, _) in u.crossed_horizontal_edges().items():
        raw = wx[i, jj]
        fixed = (wrap_angle(tm - th[i, jj]) + wrap_angle(tp - tm)
                 + wrap_angle(th[i + 1, jj] - tp))
        if jj < ncy:
            total[i, jj] += fixed - raw
        if jj - 1 >= 0:
            total[i, jj - 1] -= fixed - raw
    for (ii, j), (tm, tp, _) in u.crossed_vertical_edges().items():
        raw = wy[ii, j]
        fixed = (wrap_angle(tm - th[ii, j]) + wrap_angle(tp - tm)
                 + wrap_angle(th[ii, j + 1] - tp))
        if ii < ncx:
            total[ii, j] -= fixed - raw
        if ii - 1 >= 0:
            total[ii - 1, j] += fixed - raw
    vort = total / TWO_PI
    out = np.rint(vort)
    if np.max(np.abs(vort - out)) > 1e-6:
        raise AssertionError("plaquette winding did not telescope to integers")
    return out.astype(np.int64)


def dump_vorticity_csv(vort: np.ndarray, grid: Grid, path):
    """CSV dump of nonzero plaquette vorticity: cell_x,cell_y,vorticity."""
    ccx = grid.cell_centers_x()
    ccy = grid.cell_centers_y()
    with open(path, "w") as fh:
        fh.write("cell_x,cell_y,vorticity\n")
        for i, j in zip(*np.nonzero(vort)):
            fh.write(f"{ccx[i]:.17g},{ccy[j]:.17g},{int(vort[i, j])}\n")
