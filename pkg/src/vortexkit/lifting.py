"""Minimal-lifting pairings and weak 2x2 minors for piecewise-affine maps.

Maps live on simplicial meshes in any dimension n >= 2 with values in
R^m, m >= 2.  Within a simplex the gradient is constant, so every pairing
reduces to polynomial integrals handled exactly by Grundmann-Moller simplex
quadrature; across a jump face the one-sided traces are affine and the
segment average over the trace interval is evaluated by Gauss-Legendre in
the interpolation parameter (exact for polynomial integrands, and in closed
form where an absolute value appears).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from math import factorial

import numpy as np

GAUSS_THETA_POINTS = 8


# -- quadrature --------------------------------------------------------------


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def gm_quadrature(n: int, s: int):
    """Grundmann-Moller rule on the standard n-simplex, degree 2s+1.

    Returns (barycentric points (N, n+1), weights (N,)) normalized so that
    weights sum to the standard simplex volume 1/n!.
    """
    d = 2 * s + 1
    pts = []
    wts = []
    for i in range(s + 1):
        coef = ((-1) ** i) * 2.0 ** (-2 * s) * float(d + n - 2 * i) ** d \
            / (factorial(i) * factorial(d + n - i))
        for beta in _compositions(s - i, n + 1):
            lam = (2.0 * np.array(beta) + 1.0) / (d + n - 2 * i)
            pts.append(lam)
            wts.append(coef)
    return np.array(pts), np.array(wts)


_GAUSS_T, _GAUSS_W = np.polynomial.legendre.leggauss(GAUSS_THETA_POINTS)
_GAUSS_T = 0.5 * (_GAUSS_T + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


def segment_average_abs(a: float, b: float) -> float:
    """Exact integral over [0,1] of |a + t(b - a)|."""
    if a * b >= 0.0:
        return 0.5 * (abs(a) + abs(b))
    return 0.5 * (a * a + b * b) / abs(b - a)


def perm_sign(split: tuple, total: int) -> int:
    """Sign of the permutation (split, complement) of range(1, total+1)."""
    rest = [k for k in range(1, total + 1) if k not in split]
    seq = list(split) + rest
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class MultiIndexPair:
    """Row pair I in {1..m}, column pair J in {1..n}, and the product sign."""
    I: tuple
    J: tuple
    m: int
    n: int

    def __post_init__(self):
        if len(self.I) != 2 or self.I[0] == self.I[1]:
            raise ValueError("I must hold two distinct row indices")
        if len(self.J) != 2 or self.J[0] == self.J[1]:
            raise ValueError("J must hold two distinct column indices")

    @property
    def sigma(self) -> int:
        return perm_sign(self.I, self.m) * perm_sign(self.J, self.n)


# -- meshes and maps ----------------------------------------------------------


class SimplicialMesh:
    def __init__(self, vertices, simplices):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.simplices = np.asarray(simplices, dtype=np.int64)
        self.n = self.vertices.shape[1]
        if self.simplices.shape[1] != self.n + 1:
            raise ValueError("simplices must have n+1 vertices")

    def simplex_vertices(self, k):
        return self.vertices[self.simplices[k]]

    def simplex_volume(self, k) -> float:
        v = self.simplex_vertices(k)
        e = v[1:] - v[0]
        return abs(np.linalg.det(e)) / factorial(self.n)

    def interior_faces(self):
        """[(face vertex ids, simplex a, simplex b)] for shared faces."""
        seen = {}
        for k, simplex in enumerate(self.simplices):
            for drop in range(self.n + 1):
                face = tuple(sorted(np.delete(simplex, drop)))
                seen.setdefault(face, []).append(k)
        return [(f, ks[0], ks[1]) for f, ks in seen.items() if len(ks) == 2]


@dataclass
class JumpFace:
    vertex_ids: tuple
    normal: np.ndarray        # unit, pointing to the plus side
    simplex_minus: int
    simplex_plus: int
    area: float


class PWAffineBVMap:
    """Piecewise-affine map: u(x) = A_k x + b_k on simplex k.

    Jump faces are the interior faces where the two adjacent affine pieces
    disagree; traces are the one-sided affine restrictions.
    """

    def __init__(self, mesh: SimplicialMesh, A, b):
        self.mesh = mesh
        self.A = np.asarray(A, dtype=np.float64)       # (S, m, n)
        self.b = np.asarray(b, dtype=np.float64)       # (S, m)
        if self.A.shape[0] != mesh.simplices.shape[0]:
            raise ValueError("one affine piece per simplex required")
        self.m = self.A.shape[1]
        if self.m < 2 or mesh.n < 2:
            raise ValueError("need n >= 2 and m >= 2")
        self.jump_faces = self._find_jumps()

    def value(self, k, x):
        return self.A[k] @ np.asarray(x) + self.b[k]

    def _find_jumps(self):
        faces = []
        mesh = self.mesh
        for fverts, ka, kb in mesh.interior_faces():
            pts = mesh.vertices[list(fverts)]
            diffs = [self.value(ka, p) - self.value(kb, p) for p in pts]
            if max(float(np.max(np.abs(d))) for d in diffs) <= 1e-12:
                continue
            # unit normal: kernel of the edge span
            _, _, vt = np.linalg.svd(pts[1:] - pts[0])
            nu = vt[-1]
            nu = nu / np.linalg.norm(nu)
            centroid_b = mesh.simplex_vertices(kb).mean(axis=0)
            centroid_f = pts.mean(axis=0)
            if nu @ (centroid_b - centroid_f) > 0:
                s_minus, s_plus = ka, kb
            else:
                s_minus, s_plus = kb, ka
                nu = -nu
            gram = (pts[1:] - pts[0]) @ (pts[1:] - pts[0]).T
            area = math.sqrt(max(np.linalg.det(gram), 0.0)) / factorial(mesh.n - 1)
            faces.append(JumpFace(fverts, nu, s_minus, s_plus, area))
        return faces

    def sup_norm(self) -> float:
        vals = [np.abs(self.value(k, v))
                for k in range(len(self.mesh.simplices))
                for v in self.mesh.simplex_vertices(k)]
        return float(np.max(vals)) if vals else 0.0


# -- pairings ------------------------------------------------------------------


def _diffuse_quadrature(u: PWAffineBVMap, order: int = 4):
    """Per-simplex quadrature nodes: (points (S,N,n), weights (S,N))."""
    lam, w = gm_quadrature(u.mesh.n, order)
    # weights are for the standard simplex (volume 1/n!): rescale per simplex
    pts = []
    wts = []
    for k in range(len(u.mesh.simplices)):
        v = u.mesh.simplex_vertices(k)
        p = lam @ v
        vol = u.mesh.simplex_volume(k)
        pts.append(p)
        wts.append(w * (vol * factorial(u.mesh.n)))
    return np.array(pts), np.array(wts)


def _face_quadrature(u: PWAffineBVMap, face: JumpFace, order: int = 4):
    lam, w = gm_quadrature(u.mesh.n - 1, order)
    v = u.mesh.vertices[list(face.vertex_ids)]
    pts = lam @ v
    wts = w * (face.area * factorial(u.mesh.n - 1))
    return pts, wts


def minimal_lifting_pairing(u: PWAffineBVMap, phi, i: int, j: int,
                            order: int = 4) -> float:
    """Pairing of the minimal lifting component (i, j) with phi(x, y).

    Diffuse part: phi evaluated on the graph, weighted by the (i, j) entry
    of the constant gradient.  Jump part: the trace-segment average of
    phi(x, .) by Gauss-Legendre, weighted by the jump of u^i against the
    face normal.  Indices i, j are 1-based as in the measure notation.
    """
    ii, jj = i - 1, j - 1
    pts, wts = _diffuse_quadrature(u, order)
    total = 0.0
    for k in range(len(u.mesh.simplices)):
        dij = u.A[k][ii, jj]
        if dij == 0.0:
            continue
        vals = np.array([phi(p, u.value(k, p)) for p in pts[k]])
        total += dij * float(vals @ wts[k])
    for face in u.jump_faces:
        fp, fw = _face_quadrature(u, face)
        nu_j = face.normal[jj]
        if nu_j == 0.0:
            continue
        for p, w in zip(fp, fw):
            um = u.value(face.simplex_minus, p)
            up = u.value(face.simplex_plus, p)
            theta_avg = sum(gw * phi(p, t * up + (1 - t) * um)
                            for t, gw in zip(_GAUSS_T, _GAUSS_W))
            total += w * nu_j * (up[ii] - um[ii]) * theta_avg
    return total


def nu_pairing(u: PWAffineBVMap, psi, i: int, h: int, j: int,
               order: int = 4) -> float:
    """Pairing of [u^h D_j u^i] with a spatial test function psi.

    Equals minimal_lifting_pairing with phi(x, y) = psi(x) * y^h; the jump
    weight is the two-sided trace average of u^h.  Raises when the
    integrability certificate fails.
    """
    if not np.isfinite(_abs_mass(u, i, h, j, order)):
        raise ValueError("property (P) fails: pairing not integrable")
    ii, hh, jj = i - 1, h - 1, j - 1
    pts, wts = _diffuse_quadrature(u, order)
    total = 0.0
    for k in range(len(u.mesh.simplices)):
        dij = u.A[k][ii, jj]
        if dij == 0.0:
            continue
        vals = np.array([psi(p) * u.value(k, p)[hh] for p in pts[k]])
        total += dij * float(vals @ wts[k])
    for face in u.jump_faces:
        fp, fw = _face_quadrature(u, face)
        nu_j = face.normal[jj]
        if nu_j == 0.0:
            continue
        for p, w in zip(fp, fw):
            um = u.value(face.simplex_minus, p)
            up = u.value(face.simplex_plus, p)
            total += w * nu_j * (up[ii] - um[ii]) * psi(p) * 0.5 * (up[hh] + um[hh])
    return total


def truncate(u: PWAffineBVMap, N: float) -> "TruncatedMap":
    """Componentwise clamp to [-N, N]; traces clamp with the map."""
    if N <= 0:
        raise ValueError("truncation level must be positive")
    return TruncatedMap(u, N)


class TruncatedMap:
    """Lazy truncation eta_N(u); pairings gate the gradient on |u^i| < N.

    Quadrature is exact whenever the truncation level sets align with
    simplex boundaries (how the designed unbounded test maps are built).
    """

    def __init__(self, base: PWAffineBVMap, N: float):
        self.base = base
        self.N = N
        self.m = base.m
        self.mesh = base.mesh

    def value(self, k, x):
        return np.clip(self.base.value(k, x), -self.N, self.N)

    def nu_pairing(self, psi, i, h, j, order: int = 4) -> float:
        u = self.base
        ii, hh, jj = i - 1, h - 1, j - 1
        pts, wts = _diffuse_quadrature(u, order)
        total = 0.0
        for k in range(len(u.mesh.simplices)):
            dij = u.A[k][ii, jj]
            if dij == 0.0:
                continue
            for p, w in zip(pts[k], wts[k]):
                y = u.value(k, p)
                if abs(y[ii]) >= self.N:
                    continue   # clamp kills the gradient here
                total += dij * w * psi(p) * float(np.clip(y[hh], -self.N, self.N))
        for face in u.jump_faces:
            fp, fw = _face_quadrature(u, face)
            nu_j = face.normal[jj]
            if nu_j == 0.0:
                continue
            for p, w in zip(fp, fw):
                um = np.clip(u.value(face.simplex_minus, p), -self.N, self.N)
                up = np.clip(u.value(face.simplex_plus, p), -self.N, self.N)
                total += w * nu_j * (up[ii] - um[ii]) * psi(p) * 0.5 * (up[hh] + um[hh])
        return total

    def abs_mass(self, i, h, j, order: int = 4) -> float:
        """Integral of |y^h| against |(mu_{u_N})^i_j| (truncated map)."""
        u = self.base
        ii, hh, jj = i - 1, h - 1, j - 1
        pts, wts = _diffuse_quadrature(u, order)
        total = 0.0
        for k in range(len(u.mesh.simplices)):
            dij = abs(u.A[k][ii, jj])
            if dij == 0.0:
                continue
            for p, w in zip(pts[k], wts[k]):
                y = u.value(k, p)
                if abs(y[ii]) >= self.N:
                    continue
                total += dij * w * abs(float(np.clip(y[hh], -self.N, self.N)))
        for face in u.jump_faces:
            fp, fw = _face_quadrature(u, face)
            nu_j = abs(face.normal[jj])
            if nu_j == 0.0:
                continue
            for p, w in zip(fp, fw):
                um = np.clip(u.value(face.simplex_minus, p), -self.N, self.N)
                up = np.clip(u.value(face.simplex_plus, p), -self.N, self.N)
                total += w * nu_j * abs(up[ii] - um[ii]) \
                    * segment_average_abs(um[hh], up[hh])
        return total


def check_property_P(u: PWAffineBVMap, I, J, order: int = 4):
    """Integrability certificate: the trace-weighted total variations.

    Evaluates, for h in I against the complementary differentiated index and
    both columns in J, the diffuse and jump parts of the |y^h|-weighted
    total variation; returns (all finite, max value).
    """
    i, ip = I
    vals = []
    for (a, h) in ((i, ip), (ip, i)):
        for j in J:
            vals.append(_abs_mass(u, a, h, j, order))
    value = max(vals)
    return bool(np.isfinite(value)), value


def _abs_mass(u: PWAffineBVMap, i, h, j, order) -> float:
    ii, hh, jj = i - 1, h - 1, j - 1
    pts, wts = _diffuse_quadrature(u, order)
    total = 0.0
    for k in range(len(u.mesh.simplices)):
        dij = abs(u.A[k][ii, jj])
        if dij == 0.0:
            continue
        vals = np.array([abs(u.value(k, p)[hh]) for p in pts[k]])
        total += dij * float(vals @ wts[k])
    for face in u.jump_faces:
        fp, fw = _face_quadrature(u, face)
        nu_j = abs(face.normal[jj])
        if nu_j == 0.0:
            continue
        for p, w in zip(fp, fw):
            um = u.value(face.simplex_minus, p)
            up = u.value(face.simplex_plus, p)
            total += w * nu_j * abs(up[ii] - um[ii]) \
                * segment_average_abs(um[hh], up[hh])
    return total


def lambda_pairing(u: PWAffineBVMap, g, pair: MultiIndexPair, j: int,
                   order: int = 4) -> float:
    """Pairing of the antisymmetrized column measure with g."""
    i, ip = pair.I
    return 0.5 * (nu_pairing(u, g, ip, i, j, order)
                  - nu_pairing(u, g, i, ip, j, order))


def minor_apply(u: PWAffineBVMap, pair: MultiIndexPair, phi_grad,
                order: int = 4) -> float:
    """The weak 2x2 minor against a scalar test function.

    phi_grad(x) returns the gradient of the test function; the minor pairs
    the j'-derivative against the j-column measure and vice versa, with the
    multi-index sign.  For a single affine piece this equals the integral of
    phi times the 2x2 subdeterminant.
    """
    ok, _ = check_property_P(u, pair.I, pair.J, order)
    if not ok:
        raise ValueError("property (P) fails for this index pair")
    j, jp = pair.J
    term1 = lambda_pairing(u, lambda x: phi_grad(x)[jp - 1], pair, j, order)
    term2 = lambda_pairing(u, lambda x: phi_grad(x)[j - 1], pair, jp, order)
    return pair.sigma * (term1 - term2)


def flat_bound_boundary(u: PWAffineBVMap, pair: MultiIndexPair,
                        order: int = 4) -> float:
    """|lambda^I_j|(Omega) + |lambda^I_j'|(Omega) on the same quadrature.

    Sharing nodes and weights with the pairing quadrature makes the duality
    bound |minor_apply| <= bound * ||phi||_{C^0,1} hold exactly discretely.
    """
    i, ip = pair.I
    total = 0.0
    for j in pair.J:
        ii, iip, jj = i - 1, ip - 1, j - 1
        pts, wts = _diffuse_quadrature(u, order)
        mass = 0.0
        for k in range(len(u.mesh.simplices)):
            d_ip = u.A[k][iip, jj]
            d_i = u.A[k][ii, jj]
            for p, w in zip(pts[k], wts[k]):
                y = u.value(k, p)
                mass += w * abs(0.5 * (y[ii] * d_ip - y[iip] * d_i))
        for face in u.jump_faces:
            fp, fw = _face_quadrature(u, face)
            nu_j = face.normal[jj]
            if nu_j == 0.0:
                continue
            for p, w in zip(fp, fw):
                um = u.value(face.simplex_minus, p)
                up = u.value(face.simplex_plus, p)
                ub = 0.5 * (um + up)
                density = 0.5 * (ub[ii] * (up[iip] - um[iip])
                                 - ub[iip] * (up[ii] - um[ii]))
                mass += abs(w * nu_j * density)
        total += mass
    return total


# -- plain-text loader ---------------------------------------------------------


def load_mesh_map(path) -> PWAffineBVMap:
    """Plain-text mesh+map format (see README): VERTICES / SIMPLICES / AFFINE."""
    sections = {"VERTICES": [], "SIMPLICES": [], "AFFINE": []}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line in sections:
                current = line
                continue
            if current is None:
                raise ValueError(f"data before any section header: {line!r}")
            sections[current].append([float(tok) for tok in line.split()])
    verts = np.array(sections["VERTICES"])
    simps = np.array(sections["SIMPLICES"], dtype=np.int64)
    mesh = SimplicialMesh(verts, simps)
    n = mesh.n
    rows = np.array(sections["AFFINE"])
    if rows.shape[0] != simps.shape[0]:
        raise ValueError("one AFFINE row per simplex required")
    m = rows.shape[1] // (n + 1)
    if rows.shape[1] != m * (n + 1):
        raise ValueError("AFFINE rows must pack m*(n+1) reals: A row-major, then b")
    A = rows[:, :m * n].reshape(-1, m, n)
    b = rows[:, m * n:]
    return PWAffineBVMap(mesh, A, b)
