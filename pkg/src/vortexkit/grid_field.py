"""S1-valued fields on a uniform grid with an explicit jump-edge set.

A field stores one lifted angle per node plus a table of declared jump
segments.  The stored angle is a lifting: wherever it wraps by a full turn
the underlying unit-vector field is continuous, so neighboring angles are
always compared through `wrap_angle`.  Genuine discontinuities of the field
live only on the declared segments, which carry one-sided traces sampled at
every crossed grid edge; no finite difference is ever taken across them.

Grid arrays are indexed [i, j] with i the x1 node index and j the x2 node
index.  Jump segments are axis-aligned; a vertical segment crosses the
horizontal edges (i_cut, j) -> (i_cut + 1, j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .geometry import Ball, Domain, Point2, Rect

TWO_PI = 2.0 * math.pi

# Resolution rule: the core cutoff must span several cells to keep the
# discrete gradient below C/eps.
EPS_OVER_H_MIN = 8.0


class FieldConstructionError(ValueError):
    """Raised when a requested field violates a construction precondition."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


def wrap_angle(a):
    """Map angles to the principal interval (-pi, pi]."""
    w = np.mod(np.asarray(a) + math.pi, TWO_PI) - math.pi
    return np.where(w == -math.pi, math.pi, w) if np.ndim(w) else (
        math.pi if w == -math.pi else float(w))


def vartheta(d1, d2):
    """Polar angle with the branch cut on the downward vertical ray.

    Values increase counterclockwise and lie in (-pi/2, 3pi/2]: arctan(x2/x1)
    on the right half-plane, pi + arctan(x2/x1) on the left.
    """
    th = np.arctan2(d2, d1)
    return np.where(th < -0.5 * math.pi, th + TWO_PI, th)


def vartheta_centered(d1, d2, out=None):
    """Same cut as `vartheta` but with the symmetric range (-pi, pi].

    Identical to vartheta - pi/2; the symmetric range keeps the core-cutoff
    energy constant small.
    """
    if out is None:
        return np.arctan2(-np.asarray(d1), d2)
    np.negative(d1, out=out)
    return np.arctan2(out, d2, out=out)


def grad_vartheta(d1, d2):
    """Gradient of any polar-angle branch: (-d2, d1)/r^2.

    Guarded at the pole; callers mask cells inside excluded disks anyway.
    """
    r2 = np.maximum(d1 * d1 + d2 * d2, 1e-300)
    return -d2 / r2, d1 / r2


@dataclass(frozen=True)
class Grid:
    origin: Point2
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2x2 nodes")

    @staticmethod
    def cover_rect(rect: Rect, h: float) -> "Grid":
        nx = int(round((rect.x1_max - rect.x1_min) / h)) + 1
        ny = int(round((rect.x2_max - rect.x2_min) / h)) + 1
        return Grid(Point2(rect.x1_min, rect.x2_min), h, nx, ny)

    def xs(self) -> np.ndarray:
        return self.origin.x1 + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin.x2 + self.h * np.arange(self.ny)

    def extent(self) -> Rect:
        return Rect(self.origin.x1, self.origin.x2,
                    self.origin.x1 + self.h * (self.nx - 1),
                    self.origin.x2 + self.h * (self.ny - 1))

    def cell_centers_x(self) -> np.ndarray:
        return self.origin.x1 + self.h * (np.arange(self.nx - 1) + 0.5)

    def cell_centers_y(self) -> np.ndarray:
        return self.origin.x2 + self.h * (np.arange(self.ny - 1) + 0.5)


@dataclass
class JumpSegment:
    """Axis-aligned jump segment with per-crossing trace angles.

    For a vertical segment ('v') the normal is e1 and the plus side is the
    larger-x1 side; for 'h' the normal is e2.  `sample_t` holds the varying
    coordinate of the two endpoints and of every crossed perpendicular node
    line, sorted increasing; trace angles are lifting values of u on each
    side, meaningful modulo 2*pi.
    """
    axis: str
    coord: float
    lo: float
    hi: float
    sample_t: np.ndarray
    theta_minus: np.ndarray
    theta_plus: np.ndarray

    def length(self) -> float:
        return self.hi - self.lo

    def normal(self):
        return (1.0, 0.0) if self.axis == "v" else (0.0, 1.0)


@dataclass
class JumpAmplitude:
    """Traces at one crossing: u+/u- unit vectors and their averages."""
    edge_id: tuple
    theta_minus: float
    theta_plus: float

    def u_minus(self):
        return np.array([math.cos(self.theta_minus), math.sin(self.theta_minus)])

    def u_plus(self):
        return np.array([math.cos(self.theta_plus), math.sin(self.theta_plus)])

    def jump(self):
        return self.u_plus() - self.u_minus()

    def ubar_theta(self, t: float):
        return t * self.u_plus() + (1.0 - t) * self.u_minus()

    def ubar(self):
        return 0.5 * (self.u_plus() + self.u_minus())


class S1Field:
    """Grid-sampled S1-valued map: lifted nodal angles + declared jumps."""

    def __init__(self, grid: Grid, theta: np.ndarray, segments: list[JumpSegment],
                 domain: Domain):
        if theta.shape != (grid.nx, grid.ny):
            raise ValueError("theta shape does not match grid")
        self.grid = grid
        self.theta = theta
        self.segments = segments
        self.domain = domain
        self._crossed_h = None   # {(i, j): (theta_minus, theta_plus, x_cut)}
        self._crossed_v = None
        self._check_segments()

    def _check_segments(self):
        inner = self.domain.inner
        for s in self.segments:
            if s.axis == "v":
                pts = [(s.coord, s.lo), (s.coord, s.hi)]
            else:
                pts = [(s.lo, s.coord), (s.hi, s.coord)]
            for p in pts:
                if not inner.contains_point(p, tol=1e-12):
                    raise FieldConstructionError(
                        "jump-outside-inner",
                        f"jump segment endpoint {p} leaves the inner region")

    # -- crossing tables -------------------------------------------------

    def _build_crossings(self):
        ch, cv = {}, {}
        xs, ys = self.grid.xs(), self.grid.ys()
        for s in self.segments:
            if s.axis == "v":
                i = int(np.searchsorted(xs, s.coord)) - 1
                if not (0 <= i < self.grid.nx - 1):
                    continue
                j_lo = int(np.searchsorted(ys, s.lo, side="right"))
                j_hi = int(np.searchsorted(ys, s.hi, side="left")) - 1
                for j in range(j_lo, j_hi + 1):
                    k = int(np.searchsorted(s.sample_t, ys[j]))
                    k = min(max(k, 0), len(s.sample_t) - 1)
                    if abs(s.sample_t[k] - ys[j]) > 1e-9 * self.grid.h:
                        raise ValueError("segment samples misaligned with grid")
                    if (i, j) in ch:
                        raise ValueError("grid edge crossed by two segments")
                    ch[(i, j)] = (float(s.theta_minus[k]), float(s.theta_plus[k]),
                                  s.coord)
            else:
                j = int(np.searchsorted(ys, s.coord)) - 1
                if not (0 <= j < self.grid.ny - 1):
                    continue
                i_lo = int(np.searchsorted(xs, s.lo, side="right"))
                i_hi = int(np.searchsorted(xs, s.hi, side="left")) - 1
                for i in range(i_lo, i_hi + 1):
                    k = int(np.searchsorted(s.sample_t, xs[i]))
                    k = min(max(k, 0), len(s.sample_t) - 1)
                    if abs(s.sample_t[k] - xs[i]) > 1e-9 * self.grid.h:
                        raise ValueError("segment samples misaligned with grid")
                    if (i, j) in cv:
                        raise ValueError("grid edge crossed by two segments")
                    cv[(i, j)] = (float(s.theta_minus[k]), float(s.theta_plus[k]),
                                  s.coord)
        self._crossed_h, self._crossed_v = ch, cv

    def crossed_horizontal_edges(self) -> dict:
        if self._crossed_h is None:
            self._build_crossings()
        return self._crossed_h

    def crossed_vertical_edges(self) -> dict:
        if self._crossed_v is None:
            self._build_crossings()
        return self._crossed_v

    def jump_amplitudes(self) -> list[JumpAmplitude]:
        out = []
        for (i, j), (tm, tp, _) in sorted(self.crossed_horizontal_edges().items()):
            out.append(JumpAmplitude(("h", i, j), tm, tp))
        for (i, j), (tm, tp, _) in sorted(self.crossed_vertical_edges().items()):
            out.append(JumpAmplitude(("v", i, j), tm, tp))
        return out

    # -- sampling ---------------------------------------------------------

    def sample_unit(self, pts: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of (cos, sin), renormalized; (N,2) -> (N,2).

        Valid away from declared jump edges and singular cells; the caller
        guarantees the sample path avoids them.
        """
        g = self.grid
        fx = (pts[:, 0] - g.origin.x1) / g.h
        fy = (pts[:, 1] - g.origin.x2) / g.h
        i = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
        tx = fx - i
        ty = fy - j
        th = self.theta
        c = np.cos
        s = np.sin
        u1 = ((1 - tx) * (1 - ty) * c(th[i, j]) + tx * (1 - ty) * c(th[i + 1, j])
              + (1 - tx) * ty * c(th[i, j + 1]) + tx * ty * c(th[i + 1, j + 1]))
        u2 = ((1 - tx) * (1 - ty) * s(th[i, j]) + tx * (1 - ty) * s(th[i + 1, j])
              + (1 - tx) * ty * s(th[i, j + 1]) + tx * ty * s(th[i + 1, j + 1]))
        norm = np.hypot(u1, u2)
        if np.any(norm < 0.05):
            raise ValueError("interpolation degenerate: sample path too close "
                             "to a singular cell or jump edge")
        return np.stack([u1 / norm, u2 / norm], axis=1)

    def circle_hits_jump(self, center: Point2, r: float) -> bool:
        pad = self.grid.h  # keep a one-cell guard band
        for s in self.segments:
            if s.axis == "v":
                d = abs(s.coord - center.x1)
                if d > r + pad:
                    continue
                lo, hi = s.lo - pad, s.hi + pad
                if d >= max(r - pad, 0.0):
                    y = center.x2  # near-tangent band
                    if lo <= y + math.sqrt(max(r * r - d * d, 0.0)) and \
                       y - math.sqrt(max(r * r - d * d, 0.0)) <= hi:
                        return True
                    continue
                half = math.sqrt(max((r + pad) ** 2 - d * d, 0.0))
                y1, y2 = center.x2 - half, center.x2 + half
                inner_half = math.sqrt(max((max(r - pad, 0.0)) ** 2 - d * d, 0.0))
                # circle band crosses the segment's y-interval
                for yy in (y1, y2):
                    if lo <= yy <= hi:
                        return True
                if y1 <= lo <= y2 or y1 <= hi <= y2:
                    if not (lo >= center.x2 - inner_half and hi <= center.x2 + inner_half):
                        return True
            else:
                d = abs(s.coord - center.x2)
                if d > r + pad:
                    continue
                half = math.sqrt(max((r + pad) ** 2 - d * d, 0.0))
                x1, x2 = center.x1 - half, center.x1 + half
                inner_half = math.sqrt(max((max(r - pad, 0.0)) ** 2 - d * d, 0.0))
                lo, hi = s.lo - pad, s.hi + pad
                for xx in (x1, x2):
                    if lo <= xx <= hi:
                        return True
                if x1 <= lo <= x2 or x1 <= hi <= x2:
                    if not (lo >= center.x1 - inner_half and hi <= center.x1 + inner_half):
                        return True
        return False

    # -- cell gradients ----------------------------------------------------

    def cell_gradient_blocks(self, block: int = 256, dense_corrections: bool = True):
        """Yield (i0, gx, gy) per cell-row block; wrapped central differences.

        gx[k, j] approximates d(theta)/dx1 on cell (i0 + k, j).  Differences
        across declared jump edges are replaced by one-sided trace-based
        differences (area-averaged over the two sides of the cut).
        """
        th = self.theta
        h = self.grid.h
        ncx = self.grid.nx - 1
        crossings = self.crossed_horizontal_edges()
        crossings_v = self.crossed_vertical_edges()
        xs = self.grid.xs()
        ys = self.grid.ys()
        for i0 in range(0, ncx, block):
            i1 = min(i0 + block, ncx)
            a = th[i0:i1 + 1]
            dx = wrap_angle(a[1:] - a[:-1])             # (bi, ny)
            dy = wrap_angle(a[:, 1:] - a[:, :-1])       # (bi+1, ny-1)
            gx = 0.5 * (dx[:, 1:] + dx[:, :-1]) / h
            gy = 0.5 * (dy[1:, :] + dy[:-1, :]) / h
            if dense_corrections and (crossings or crossings_v):
                self._apply_gradient_corrections(gx, gy, i0, i1, crossings,
                                                 crossings_v, xs, ys)
            yield i0, gx, gy

    def _apply_gradient_corrections(self, gx, gy, i0, i1, ch, cv, xs, ys):
        th = self.theta
        h = self.grid.h
        ncy = self.grid.ny - 1
        for (i, j), (tm, tp, x_cut) in ch.items():
            if not (i0 <= i < i1):
                continue
            # edge (i,j)-(i+1,j) is cut: fix the two adjacent cells in x
            for jc in (j - 1, j):
                if not (0 <= jc < ncy):
                    continue
                top = (i, jc + 1) in ch
                bot = (i, jc) in ch
                if top and bot:
                    g = self._split_cell_gradient(i, jc, ch, xs, ys)
                    gx[i - i0, jc], gy[i - i0, jc] = g[0], g[1]
                elif top or bot:
                    # endpoint cell: use the uncrossed horizontal edge pair
                    ju = jc if top else jc + 1
                    gx[i - i0, jc] = wrap_angle(th[i + 1, ju] - th[i, ju]) / h
        for (i, j), (tm, tp, y_cut) in cv.items():
            for ic in (i - 1, i):
                if not (i0 <= ic < i1) or not (0 <= ic < self.grid.nx - 1):
                    continue
                right = (ic + 1, j) in cv
                left = (ic, j) in cv
                if left and right:
                    g = self._split_cell_gradient_h(ic, j, cv, xs, ys)
                    gx[ic - i0, j], gy[ic - i0, j] = g[0], g[1]
                elif left or right:
                    iu = ic if right else ic + 1
                    gy[ic - i0, j] = wrap_angle(th[iu, j + 1] - th[iu, j]) / h

    def _split_cell_gradient(self, i, j, ch, xs, ys):
        """Area-averaged gradient of a cell fully crossed by a vertical cut."""
        th = self.theta
        h = self.grid.h
        tm_b, tp_b, x_cut = ch[(i, j)]
        tm_t, tp_t, _ = ch[(i, j + 1)]
        wl = x_cut - xs[i]
        wr = xs[i + 1] - x_cut
        gxl = 0.5 * (wrap_angle(tm_b - th[i, j]) + wrap_angle(tm_t - th[i, j + 1])) / wl
        gxr = 0.5 * (wrap_angle(th[i + 1, j] - tp_b) + wrap_angle(th[i + 1, j + 1] - tp_t)) / wr
        gyl = wrap_angle(th[i, j + 1] - th[i, j]) / h
        gyr = wrap_angle(th[i + 1, j + 1] - th[i + 1, j]) / h
        fl = wl / (wl + wr)
        return fl * gxl + (1 - fl) * gxr, fl * gyl + (1 - fl) * gyr

    def _split_cell_gradient_h(self, i, j, cv, xs, ys):
        th = self.theta
        h = self.grid.h
        tm_l, tp_l, y_cut = cv[(i, j)]
        tm_r, tp_r, _ = cv[(i + 1, j)]
        wb = y_cut - ys[j]
        wt = ys[j + 1] - y_cut
        gyb = 0.5 * (wrap_angle(tm_l - th[i, j]) + wrap_angle(tm_r - th[i + 1, j])) / wb
        gyt = 0.5 * (wrap_angle(th[i, j + 1] - tp_l) + wrap_angle(th[i + 1, j + 1] - tp_r)) / wt
        gxb = wrap_angle(th[i + 1, j] - th[i, j]) / h
        gxt = wrap_angle(th[i + 1, j + 1] - th[i, j + 1]) / h
        fb = wb / (wb + wt)
        return fb * gxb + (1 - fb) * gxt, fb * gyb + (1 - fb) * gyt

    def split_cells(self):
        """Cells fully crossed by a cut, with the exact two-sided gradients.

        Returns {(i, j): (frac_minus, g_minus, g_plus)} where frac_minus is
        the area fraction of the minus side.  Used by energy quadrature to
        integrate |grad|^2 exactly over the two sub-rectangles.
        """
        out = {}
        ch = self.crossed_horizontal_edges()
        cv = self.crossed_vertical_edges()
        xs, ys = self.grid.xs(), self.grid.ys()
        th = self.theta
        h = self.grid.h
        for (i, j) in list(ch.keys()):
            if (i, j + 1) not in ch:
                continue
            tm_b, tp_b, x_cut = ch[(i, j)]
            tm_t, tp_t, _ = ch[(i, j + 1)]
            wl = x_cut - xs[i]
            wr = xs[i + 1] - x_cut
            gl = (0.5 * (wrap_angle(tm_b - th[i, j]) + wrap_angle(tm_t - th[i, j + 1])) / wl,
                  wrap_angle(th[i, j + 1] - th[i, j]) / h)
            gr = (0.5 * (wrap_angle(th[i + 1, j] - tp_b) + wrap_angle(th[i + 1, j + 1] - tp_t)) / wr,
                  wrap_angle(th[i + 1, j + 1] - th[i + 1, j]) / h)
            out[(i, j)] = (wl / (wl + wr), gl, gr)
        for (i, j) in list(cv.keys()):
            if (i + 1, j) not in cv:
                continue
            tm_l, tp_l, y_cut = cv[(i, j)]
            tm_r, tp_r, _ = cv[(i + 1, j)]
            wb = y_cut - ys[j]
            wt = ys[j + 1] - y_cut
            gb = (wrap_angle(th[i + 1, j] - th[i, j]) / h,
                  0.5 * (wrap_angle(tm_l - th[i, j]) + wrap_angle(tm_r - th[i + 1, j])) / wb)
            gt = (wrap_angle(th[i + 1, j + 1] - th[i, j + 1]) / h,
                  0.5 * (wrap_angle(th[i, j + 1] - tp_l) + wrap_angle(th[i + 1, j + 1] - tp_r)) / wt)
            out[(i, j)] = (wb / (wb + wt), gb, gt)
        return out


# -- constructors ----------------------------------------------------------


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def sigma_core(r, eps):
    """Core cutoff: 0 on r <= eps/4, 1 on r >= 3*eps/4, smooth in log r.

    |sigma'| <= C/eps as required for the core gradient bound.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.log(4.0 * np.maximum(r, 1e-300) / eps) / math.log(3.0)
    return _smoothstep(s)


def sigma_blend(r, R):
    """Outer cutoff: 0 on r <= 5R/4, 1 on r >= 7R/4, smooth ramp."""
    return _smoothstep((r - 1.25 * R) / (0.5 * R))


def _atom_list(mu):
    """Accept an AtomicMeasure or a plain [(point, weight)] list."""
    atoms = getattr(mu, "atoms", mu)
    return [(Point2.of(p), float(w)) for p, w in atoms]


def make_constant_field(grid: Grid, domain: Domain, angle: float = 0.0) -> S1Field:
    th = np.full((grid.nx, grid.ny), float(angle))
    return S1Field(grid, th, [], domain)


def make_smooth_field(grid: Grid, domain: Domain, theta_fn) -> S1Field:
    """Field e^{i theta_fn(x1, x2)} for a smooth single-valued phase."""
    X = grid.xs()[:, None]
    Y = grid.ys()[None, :]
    th = np.asarray(theta_fn(X, Y), dtype=np.float64)
    th = np.broadcast_to(th, (grid.nx, grid.ny)).copy()
    return S1Field(grid, th, [], domain)


def make_winding_field(center, z: int, grid: Grid, domain: Domain | None = None) -> S1Field:
    """The pure winding field e^{i z vartheta(x - center)}.

    The lifting's wrap cut is the half-line below the center; it is not a
    jump of the field, so the declared jump set is empty.  The center must
    avoid grid nodes and node columns (degenerate sampling).
    """
    c = Point2.of(center)
    if domain is None:
        domain = Domain(grid.extent(),
                        Rect(grid.origin.x1 + 2 * grid.h, grid.origin.x2 + 2 * grid.h,
                             grid.origin.x1 + grid.h * (grid.nx - 3),
                             grid.origin.x2 + grid.h * (grid.ny - 3)))
    ext = grid.extent()
    if not ext.contains_point(c) or ext.dist_to_boundary(c) <= 0:
        raise FieldConstructionError("center-outside", f"center {c} not inside the grid")
    xs, ys = grid.xs(), grid.ys()
    if np.min(np.abs(xs - c.x1)) < 1e-9 * grid.h or np.min(np.abs(ys - c.x2)) < 1e-9 * grid.h:
        raise FieldConstructionError("center-on-node",
                                     "winding center must be off grid nodes and node lines")
    if z == 0:
        return make_constant_field(grid, domain)
    th = np.empty((grid.nx, grid.ny))
    block = max(1, int(4e6 / grid.ny))
    for i0 in range(0, grid.nx, block):
        i1 = min(i0 + block, grid.nx)
        d1 = xs[i0:i1, None] - c.x1
        d2 = ys[None, :] - c.x2
        th[i0:i1] = z * vartheta(d1, d2)
    return S1Field(grid, th, [], domain)


def _recovery_segment(atom: Point2, z: float, eps: float, grid: Grid) -> JumpSegment:
    lo = atom.x2 - 0.75 * eps
    hi = atom.x2 - 0.25 * eps
    ys = grid.ys()
    j_lo = int(np.searchsorted(ys, lo, side="right"))
    j_hi = int(np.searchsorted(ys, hi, side="left")) - 1
    ts = np.concatenate([[lo], ys[j_lo:j_hi + 1], [hi]])
    r = atom.x2 - ts
    sig = sigma_core(r, eps)
    # left of the downward cut the centered branch tends to +pi, right to -pi
    return JumpSegment("v", atom.x1, lo, hi, ts,
                       theta_minus=sig * z * math.pi,
                       theta_plus=-sig * z * math.pi)


def make_recovery_field(mu, eps: float, R: float, grid: Grid,
                        domain: Domain, R_per_atom=None) -> S1Field:
    """Recovery construction for an atomic measure with unit-modulus weights.

    Around each atom: constant core, cutoff ramp on eps/4 < r < 3 eps/4 (this
    is where the declared vertical jump segment of length eps/2 lives), pure
    winding up to R, blend to the multi-atom far field across R < r < 2R.
    `R_per_atom` overrides the outer scale atom by atom (tight dipole pairs).
    """
    atoms = _atom_list(mu)
    Rs = list(R_per_atom) if R_per_atom is not None else [R] * len(atoms)
    if len(Rs) != len(atoms):
        raise FieldConstructionError("bad-config", "one outer radius per atom required")
    for _, w in atoms:
        if abs(abs(w) - 1.0) > 1e-12 or abs(w - round(w)) > 1e-12:
            raise FieldConstructionError("weight-not-unit",
                                         "recovery fields need unit integer weights")
    if atoms and eps >= min(Rs):
        raise FieldConstructionError("eps-vs-R", f"need eps < R, got eps={eps} R={min(Rs)}")
    if eps < EPS_OVER_H_MIN * grid.h:
        raise FieldConstructionError(
            "eps-resolution", f"need eps >= {EPS_OVER_H_MIN}h, got eps={eps} h={grid.h}")
    for k, (p, _) in enumerate(atoms):
        if not domain.outer.contains_ball(Ball(p, 2 * Rs[k])):
            raise FieldConstructionError("atom-near-boundary",
                                         f"ball of radius 2R around atom {k} leaves the domain")
        if not domain.inner.contains_ball(Ball(p, eps), tol=1e-12):
            raise FieldConstructionError("atom-near-boundary",
                                         f"eps-ball around atom {k} leaves the inner region")
        for kk, (q, _) in enumerate(atoms[:k]):
            if p.dist(q) < 2 * (Rs[k] + Rs[kk]):
                raise FieldConstructionError("atoms-too-close",
                                             "2R-balls around atoms must be disjoint")
    xs, ys = grid.xs(), grid.ys()
    for k, (p, _) in enumerate(atoms):
        dcol = float(np.min(np.abs(xs - p.x1)))
        drow = float(np.min(np.abs(ys - p.x2)))
        if dcol < 1e-6 * grid.h or drow < 1e-6 * grid.h:
            raise FieldConstructionError("atom-on-node",
                                         f"atom {k} sits on a node line")

    th = np.empty((grid.nx, grid.ny))
    if not atoms:
        th.fill(0.0)
        return S1Field(grid, th, [], domain)

    # far field on the whole grid, streamed by node-row blocks with reused
    # buffers (fresh first-touch pages are expensive at scale)
    block = max(1, int(2e6 / grid.ny))
    buf = np.empty((min(block, grid.nx), grid.ny))
    for i0 in range(0, grid.nx, block):
        i1 = min(i0 + block, grid.nx)
        tb = th[i0:i1]
        tb.fill(0.0)
        for p, w in atoms:
            d1 = xs[i0:i1, None] - p.x1
            b = buf[: i1 - i0]
            np.arctan2(-d1, ys[None, :] - p.x2, out=b)
            if w != 1.0:
                np.multiply(b, w, out=b)
            tb += b

    # per-atom windows: core, annulus, blend; chunked, in-place
    log3 = math.log(3.0)
    for (p, w), R in zip(atoms, Rs):
        i0 = int(np.searchsorted(xs, p.x1 - 2 * R))
        i1 = int(np.searchsorted(xs, p.x1 + 2 * R, side="right"))
        j0 = int(np.searchsorted(ys, p.x2 - 2 * R))
        j1 = int(np.searchsorted(ys, p.x2 + 2 * R, side="right"))
        wj = j1 - j0
        if wj <= 0 or i1 <= i0:
            continue
        d2row = ys[j0:j1][None, :] - p.x2
        chunk = max(1, int(1.5e6 / wj))
        r = np.empty((min(chunk, i1 - i0), wj))
        vt = np.empty_like(r)
        s = np.empty_like(r)
        t1 = np.empty_like(r)
        t2 = np.empty_like(r)
        for a0 in range(i0, i1, chunk):
            a1 = min(a0 + chunk, i1)
            bi = a1 - a0
            d1 = xs[a0:a1, None] - p.x1
            r_, vt_, s_, t1_, t2_ = r[:bi], vt[:bi], s[:bi], t1[:bi], t2[:bi]
            np.hypot(d1, d2row, out=r_)
            np.arctan2(-d1, d2row, out=vt_)
            if w != 1.0:
                np.multiply(vt_, w, out=vt_)
            win = th[a0:a1, j0:j1]
            # sigma_core(r): smoothstep of log(4r/eps)/log 3
            np.multiply(r_, 4.0 / eps, out=t1_)
            np.log(t1_, out=t1_)
            np.multiply(t1_, 1.0 / log3, out=t1_)
            np.clip(t1_, 0.0, 1.0, out=t1_)
            np.multiply(t1_, t1_, out=s_)
            np.multiply(t1_, -2.0, out=t2_)
            t2_ += 3.0
            np.multiply(s_, t2_, out=s_)          # s = sigma_core(r)
            np.multiply(s_, vt_, out=t1_)          # core phase
            np.copyto(win, t1_, where=r_ < eps)
            np.copyto(win, vt_, where=(r_ >= eps) & (r_ < R))
            bl = (r_ >= R) & (r_ < 2 * R)
            if np.any(bl):
                # sigma_blend(r): smoothstep of (r - 5R/4)/(R/2)
                np.subtract(r_, 1.25 * R, out=t1_)
                np.multiply(t1_, 2.0 / R, out=t1_)
                np.clip(t1_, 0.0, 1.0, out=t1_)
                np.multiply(t1_, t1_, out=s_)
                np.multiply(t1_, -2.0, out=t2_)
                t2_ += 3.0
                np.multiply(s_, t2_, out=s_)       # s = sigma_blend(r)
                np.subtract(win, vt_, out=t1_)
                np.multiply(t1_, s_, out=t1_)
                t1_ += vt_                          # (1-s) vt + s far
                np.copyto(win, t1_, where=bl)

    segments = [_recovery_segment(p, w, eps, grid) for p, w in atoms]
    return S1Field(grid, th, segments, domain)


def make_dirichlet_field(mu, eps: float, R: float, grid: Grid, domain: Domain,
                         boundary_twist=None) -> S1Field:
    """Recovery field matched to a boundary phase on the outer collar.

    The boundary field is w = e^{i(Theta + g)} with Theta the far field of mu
    and g a smooth single-valued perturbation (`boundary_twist`); its degree
    on the domain boundary equals the total mass of mu by construction.  The
    interpolation theta + eta*g uses a cutoff eta that vanishes near the
    inner region and equals 1 near the boundary, so no spurious jumps arise.
    """
    if domain.tilde is None or domain.hat is None:
        raise FieldConstructionError("domain-not-dirichlet",
                                     "Dirichlet fields need tilde/hat enlargements")
    base = make_recovery_field(mu, eps, R, grid, domain)
    if boundary_twist is None:
        return base
    xs, ys = grid.xs(), grid.ys()
    X = xs[:, None]
    Y = ys[None, :]
    inner = domain.inner
    m = domain.margin()
    # eta: 0 within m/4 of the inner rect, 1 beyond 3m/4 of it
    dx = np.maximum(np.maximum(inner.x1_min - X, X - inner.x1_max), 0.0)
    dy = np.maximum(np.maximum(inner.x2_min - Y, Y - inner.x2_max), 0.0)
    dist = np.hypot(dx + np.zeros_like(dy), dy + np.zeros_like(dx))
    eta = _smoothstep((dist - 0.25 * m) / (0.5 * m))
    g = np.asarray(boundary_twist(X, Y), dtype=np.float64)
    th = base.theta + eta * np.broadcast_to(g, base.theta.shape)
    return S1Field(grid, th, base.segments, domain)


# -- measurements ----------------------------------------------------------


def jump_length(u: S1Field) -> float:
    """H^1 length of the closed jump set: overlapping closures counted once."""
    by_line = {}
    for s in u.segments:
        by_line.setdefault((s.axis, round(s.coord, 12)), []).append((s.lo, s.hi))
    total = 0.0
    for intervals in by_line.values():
        intervals.sort()
        cur_lo, cur_hi = intervals[0]
        for lo, hi in intervals[1:]:
            if lo <= cur_hi:  # closures touch or overlap
                cur_hi = max(cur_hi, hi)
            else:
                total += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
        total += cur_hi - cur_lo
    return total


def gradient(u: S1Field) -> np.ndarray:
    """Per-cell 2x2 gradient matrices of (cos theta, sin theta).

    Entry [c, i, j, a, b] is d u^(a+1) / d x_(b+1) on cell (i, j); central
    wrapped differences, one-sided across declared jumps.  Intended for
    desk-size grids (materializes the full array).
    """
    g = u.grid
    out = np.empty((g.nx - 1, g.ny - 1, 2, 2))
    th = u.theta
    mean_cos = 0.25 * (np.cos(th[:-1, :-1]) + np.cos(th[1:, :-1])
                       + np.cos(th[:-1, 1:]) + np.cos(th[1:, 1:]))
    mean_sin = 0.25 * (np.sin(th[:-1, :-1]) + np.sin(th[1:, :-1])
                       + np.sin(th[:-1, 1:]) + np.sin(th[1:, 1:]))
    norm = np.hypot(mean_cos, mean_sin)
    norm[norm < 1e-12] = 1.0
    mean_cos /= norm
    mean_sin /= norm
    for i0, gx, gy in u.cell_gradient_blocks():
        i1 = i0 + gx.shape[0]
        out[i0:i1, :, 0, 0] = -mean_sin[i0:i1] * gx
        out[i0:i1, :, 0, 1] = -mean_sin[i0:i1] * gy
        out[i0:i1, :, 1, 0] = mean_cos[i0:i1] * gx
        out[i0:i1, :, 1, 1] = mean_cos[i0:i1] * gy
    return out


# -- serialization ---------------------------------------------------------

FIELD_DUMP_KEYS = ("grid", "theta", "domain", "seg_meta", "seg_samples", "seg_offsets")


def save_field(u: S1Field, path):
    """Binary field dump (.npz).  Schema documented in the README."""
    g = u.grid
    seg_meta = np.array([[0.0 if s.axis == "v" else 1.0, s.coord, s.lo, s.hi]
                         for s in u.segments], dtype=np.float64).reshape(-1, 4)
    samples = [np.stack([s.sample_t, s.theta_minus, s.theta_plus], axis=1)
               for s in u.segments]
    seg_samples = (np.concatenate(samples, axis=0) if samples
                   else np.zeros((0, 3)))
    offsets = np.cumsum([0] + [len(s.sample_t) for s in u.segments]).astype(np.int64)
    dom = u.domain
    rects = [dom.outer, dom.inner]
    flags = [dom.tilde is not None, dom.hat is not None]
    rects += [r for r in (dom.tilde, dom.hat) if r is not None]
    dom_arr = np.array([[r.x1_min, r.x2_min, r.x1_max, r.x2_max] for r in rects])
    np.savez_compressed(
        path,
        grid=np.array([g.origin.x1, g.origin.x2, g.h, g.nx, g.ny]),
        theta=u.theta,
        domain=dom_arr,
        domain_flags=np.array(flags, dtype=np.int64),
        seg_meta=seg_meta,
        seg_samples=seg_samples,
        seg_offsets=offsets,
    )


def load_field(path) -> S1Field:
    z = np.load(path)
    go = z["grid"]
    grid = Grid(Point2(float(go[0]), float(go[1])), float(go[2]), int(go[3]), int(go[4]))
    dom_arr = z["domain"]
    flags = z["domain_flags"]
    rects = [Rect(*map(float, row)) for row in dom_arr]
    k = 2
    tilde = hat = None
    if flags[0]:
        tilde = rects[k]
        k += 1
    if flags[1]:
        hat = rects[k]
    domain = Domain(rects[0], rects[1], tilde, hat)
    segments = []
    meta = z["seg_meta"]
    samples = z["seg_samples"]
    offsets = z["seg_offsets"]
    for k in range(meta.shape[0]):
        s0, s1 = int(offsets[k]), int(offsets[k + 1])
        chunk = samples[s0:s1]
        segments.append(JumpSegment("v" if meta[k, 0] == 0.0 else "h",
                                    float(meta[k, 1]), float(meta[k, 2]), float(meta[k, 3]),
                                    chunk[:, 0].copy(), chunk[:, 1].copy(), chunk[:, 2].copy()))
    return S1Field(grid, z["theta"], segments, domain)
