"""Singularity detection: covering, ball growth, dipole elimination,
cluster covering, and extraction of the detected atomic measures.

The stages mirror the compactness argument: cover the closed jump set with
finitely many disks, grow them with a common dilation factor merging on
contact, read off ball degrees at unit time, fatten the charged balls to the
core scale, absorb zero-degree clusters at controlled radius cost (the
five-fold bound on the radius sum), group the surviving charged balls into
well-separated cluster regions, and report one weighted atom per region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Ball, BallFamily, Domain, Point2, enclosing_ball, merge_family
from .grid_field import S1Field, wrap_angle
from .jacobian import degree_on_circle
from .measures import AtomicMeasure

# watchdog: the elimination loop retires at least one ball per step
WATCHDOG_FACTOR = 4


class DetectError(RuntimeError):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


# -- sampled circle quantities ----------------------------------------------


def circle_gradient_integral(u: S1Field, center, r: float) -> float:
    """Sampled line integral of |grad u| along a circle.

    Uses the wrapped-difference gradient of the cell containing each sample
    point; the caller keeps the circle away from declared jump edges.
    """
    c = Point2.of(center)
    g = u.grid
    npts = max(64, int(math.ceil(8.0 * 2 * math.pi * r / g.h)))
    npts = min(npts, 8192)
    ang = 2 * math.pi * np.arange(npts) / npts
    px = c.x1 + r * np.cos(ang)
    py = c.x2 + r * np.sin(ang)
    fx = (px - g.origin.x1) / g.h
    fy = (py - g.origin.x2) / g.h
    i = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
    j = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
    th = u.theta
    gx = 0.5 * (wrap_angle(th[i + 1, j] - th[i, j])
                + wrap_angle(th[i + 1, j + 1] - th[i, j + 1])) / g.h
    gy = 0.5 * (wrap_angle(th[i, j + 1] - th[i, j])
                + wrap_angle(th[i + 1, j + 1] - th[i + 1, j])) / g.h
    return float(np.sum(np.hypot(gx, gy))) * 2 * math.pi * r / npts


def nudged_degree(u: S1Field, center, r: float, attempts: int = 16) -> int:
    """Circle degree with the radius nudged off jump edges.

    Deterministic search order r, r + h/3, r - h/3, r + 2h/3, ... until a
    valid circle is found; raises after the attempt budget.
    """
    h = u.grid.h
    deltas = [0.0]
    k = 1
    while len(deltas) < attempts:
        deltas.append(k * h / 3.0)
        if len(deltas) < attempts:
            deltas.append(-k * h / 3.0)
        k += 1
    last_err = None
    for d in deltas:
        rr = r + d
        if rr < 4.0 * h:
            continue
        try:
            return degree_on_circle(u, center, rr)
        except ValueError as e:
            last_err = e
    raise DetectError("degree-nudge-failed",
                      f"no jump-avoiding circle near radius {r}: {last_err}")


# -- covering ----------------------------------------------------------------


def _segment_endpoints(s):
    if s.axis == "v":
        return (s.coord, s.lo), (s.coord, s.hi)
    return (s.lo, s.coord), (s.hi, s.coord)


def _segments_touch(a, b, tol=1e-12) -> bool:
    """Closed axis-aligned segments intersect (conservative bounding check)."""
    ax0, ay0 = _segment_endpoints(a)[0]
    ax1, ay1 = _segment_endpoints(a)[1]
    bx0, by0 = _segment_endpoints(b)[0]
    bx1, by1 = _segment_endpoints(b)[1]
    return (min(ax0, ax1) <= max(bx0, bx1) + tol
            and min(bx0, bx1) <= max(ax0, ax1) + tol
            and min(ay0, ay1) <= max(by0, by1) + tol
            and min(by0, by1) <= max(ay0, ay1) + tol)


def cover_jump_set(u: S1Field, eps: float) -> BallFamily:
    """Finite disk covering of the closed jump set, one disk per component.

    Components are segments with touching closures; each gets the disk
    circumscribing its pieces (inflated so the cover is by open disks), and
    the family is merged afterwards.
    """
    segs = u.segments
    if not segs:
        return BallFamily([])
    n = len(segs)
    comp = list(range(n))

    def find(a):
        while comp[a] != a:
            comp[a] = comp[comp[a]]
            a = comp[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if _segments_touch(segs[i], segs[j]):
                comp[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(segs[i])
    balls = []
    for group in groups.values():
        ball = None
        for s in group:
            p0, p1 = _segment_endpoints(s)
            mid = Point2(0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1]))
            b = Ball(mid, 0.5 * s.length() * (1 + 1e-9) + 1e-12)
            ball = b if ball is None else enclosing_ball(ball, b)
        balls.append(ball)
    fam = merge_family(BallFamily(balls))
    for b in fam:
        if not u.domain.outer.contains_ball(b):
            raise DetectError("cover-outside-domain",
                              "jump covering leaves the domain; shrink eps")
    return fam


# -- growth ------------------------------------------------------------------


@dataclass
class GrownFamily:
    """One-parameter growth log: snapshots at start, merges, and the end."""
    entries: list          # [(t, BallFamily)]
    events: list           # [{"t", "absorbed", "created"}]
    t_end: float

    def family_at(self, t: float) -> BallFamily:
        te, fam = self.entries[0]
        for tk, fk in self.entries:
            if tk <= t + 1e-15:
                te, fam = tk, fk
        scale = (1.0 + t) / (1.0 + te)
        return BallFamily([Ball(b.center, b.radius * scale) for b in fam])

    def final(self) -> BallFamily:
        return self.family_at(self.t_end)


def ball_grow(f: BallFamily, t_end: float = 1.0) -> GrownFamily:
    """Grow all disks by the common factor (1+t), merging on contact.

    Between merge events every radius scales by the same factor, so the sum
    of radii never exceeds (1+t) times its initial value; each
    contact applies the merging procedure and the log records it.
    """
    entries = [(0.0, BallFamily(list(f.balls)))]
    events = []
    balls = [(b.center, b.radius) for b in f.balls]   # radii normalized to t
    t = 0.0
    guard = 0
    while len(balls) > 1:
        guard += 1
        if guard > 4 * len(f.balls) + 8:
            raise DetectError("growth-stalled", "merge-event cascade did not terminate")
        t_next = math.inf
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                s = balls[i][1] + balls[j][1]
                if s <= 0:
                    continue
                # contact when (1 + t)(r0_i + r0_j) reaches the center distance
                t_next = min(t_next, balls[i][0].dist(balls[j][0]) / s - 1.0)
        if t_next >= t_end:
            break
        t_merge = max(t_next * (1 + 1e-12) + 1e-15, t_next + 1e-12 * (1 + t_next))
        if t_merge >= t_end:
            break
        scale = 1.0 + t_merge
        grown = BallFamily([Ball(c, r0 * scale) for c, r0 in balls])
        merged = merge_family(grown)
        before = {(b.center.x1, b.center.x2, b.radius) for b in grown}
        after = {(b.center.x1, b.center.x2, b.radius) for b in merged}
        events.append({
            "t": t_merge,
            "absorbed": sorted(before - after),
            "created": sorted(after - before),
        })
        entries.append((t_merge, merged))
        balls = [(b.center, b.radius / scale) for b in merged]
        t = t_merge
    final = BallFamily([Ball(c, r0 * (1.0 + t_end)) for c, r0 in balls])
    entries.append((t_end, final))
    return GrownFamily(entries, events, t_end)


def extract_mu_tilde(g: GrownFamily, u: S1Field, omega: Domain) -> AtomicMeasure:
    """Ball degrees of the unit-time family, one atom per charged ball."""
    atoms = []
    for b in g.final():
        if not omega.outer.contains_ball(b):
            continue
        z = nudged_degree(u, b.center, b.radius)
        if z != 0:
            atoms.append((b.center, float(z)))
    return AtomicMeasure(atoms)


def fatten_nonzero(f: BallFamily, u: S1Field, eps: float) -> BallFamily:
    """Raise every charged ball to radius at least eps, then merge."""
    out = []
    for b in f:
        z = nudged_degree(u, b.center, b.radius)
        r = max(b.radius, eps) if z != 0 else b.radius
        out.append(Ball(b.center, r))
    return merge_family(BallFamily(out))


# -- dipole elimination -------------------------------------------------------


@dataclass
class DipoleFamilies:
    small: BallFamily                  # radius below eps/2, circle estimate held
    big: BallFamily                    # radius at least eps/2
    annotations: dict = field(default_factory=dict)
    steps: int = 0

    def all_balls(self) -> BallFamily:
        return BallFamily(list(self.small.balls) + list(self.big.balls))


def _merged_blocked_intervals(x: Point2, balls) -> list:
    ivs = []
    for b in balls:
        d = x.dist(b.center)
        ivs.append((max(d - b.radius, 0.0), d + b.radius))
    ivs.sort()
    out = []
    for lo, hi in ivs:
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _free_length(ivs, lo, hi) -> float:
    if hi <= lo:
        return 0.0
    blocked = 0.0
    for a, b in ivs:
        blocked += max(0.0, min(b, hi) - max(a, lo))
    return (hi - lo) - blocked


def _t_threshold(r: float, x: Point2, others) -> float:
    """inf{t >= 2r : free radius measure of [r, t] >= (t - r)/2}."""
    ivs = _merged_blocked_intervals(x, others)

    def G(t):
        return _free_length(ivs, r, t) - 0.5 * (t - r)

    pts = sorted({2.0 * r} | {v for ab in ivs for v in ab if v > 2.0 * r})
    for k, ta in enumerate(pts):
        ga = G(ta)
        if ga >= -1e-15:
            return ta
        tb = pts[k + 1] if k + 1 < len(pts) else None
        if tb is None:
            break
        gb = G(tb)
        if gb >= 0.0:
            return ta + (tb - ta) * (-ga) / (gb - ga)
    ta = pts[-1]
    ga = G(ta)
    # beyond the last obstacle G grows at slope 1/2
    return ta - 2.0 * ga


def _free_samples(x: Point2, others, lo: float, hi: float, per_iv: int = 9):
    """Interior sample radii of the free set within [lo, hi]."""
    ivs = _merged_blocked_intervals(x, others)
    free = []
    cur = lo
    for a, b in ivs:
        if a > cur:
            free.append((cur, min(a, hi)))
        cur = max(cur, b)
        if cur >= hi:
            break
    if cur < hi:
        free.append((cur, hi))
    out = []
    for a, b in free:
        if b - a <= 0:
            continue
        pad = 1e-6 * (b - a)
        out.extend(np.linspace(a + pad, b - pad, per_iv).tolist())
    return out


def _largest_free_radius_below(x: Point2, others, cap: float) -> float:
    ivs = _merged_blocked_intervals(x, others)
    t = cap
    for a, b in ivs:
        if a <= t <= b:
            t = a
    return t


def dipole_eliminate(f: BallFamily, u: S1Field, eps: float) -> DipoleFamilies:
    """Absorb sub-core disks so every output disk is either core-size or has
    a controlled boundary gradient integral.

    Iterates the three cases: grow an isolated small disk to a mean-value
    radius with a certified circle estimate, promote it when the threshold
    radius reaches the core scale, or merge it into the blocking disks and
    retry.  The output family is pairwise disjoint, covers the input, and
    its radius sum is at most five times the input's.
    """
    if not f.pairwise_disjoint():
        raise ValueError("dipole elimination needs a pairwise disjoint family")
    small = [b for b in f if b.radius < 0.5 * eps]
    big = [b for b in f if b.radius >= 0.5 * eps]
    isml: list[Ball] = []
    ibig: list[Ball] = []
    notes = {}
    log_eps = abs(math.log(eps))
    steps = 0
    budget_cap = WATCHDOG_FACTOR * max(len(f.balls), 1) + 8
    while small:
        steps += 1
        if steps > budget_cap:
            raise DetectError("dipole-watchdog",
                              f"elimination exceeded {budget_cap} steps")
        small.sort(key=lambda b: (b.radius, b.center.x1, b.center.x2))
        seed = small.pop(0)
        while True:
            others = small + big + isml + ibig
            T = _t_threshold(seed.radius, seed.center, others)
            d_i = min((seed.center.dist(b.center) - b.radius for b in isml + ibig),
                      default=math.inf)
            if T <= d_i:
                if T < 0.5 * eps:
                    # mean-value radius with the smallest sampled estimate
                    cands = _free_samples(seed.center, others, seed.radius, T)
                    vals = [(circle_gradient_integral(u, seed.center, rr), rr)
                            for rr in cands]
                    est, R = min(vals, key=lambda v: (v[0], v[1]))
                    newb = Ball(seed.center, R)
                    small = [b for b in small if not newb.contains_ball(b)]
                    isml.append(newb)
                    notes[_key(newb)] = {"kind": "estimate", "estimate": est,
                                         "normalized": est / math.sqrt(log_eps)}
                else:
                    newb = Ball(seed.center, T)
                    small = [b for b in small if not newb.contains_ball(b)]
                    big = [b for b in big if not newb.contains_ball(b)]
                    ibig.append(newb)
                    notes[_key(newb)] = {"kind": "core-size"}
                break
            # blocked by an already-certified ball: merge through it
            R = _largest_free_radius_below(seed.center, others, d_i)
            probe = Ball(seed.center, R)
            merged = probe
            pool = small + big + isml + ibig
            changed = True
            while changed:
                changed = False
                for b in pool:
                    d = merged.center.dist(b.center)
                    touches = (d - b.radius <= merged.radius + 1e-12
                               and d + b.radius >= merged.radius - 1e-12)
                    if (touches or merged.intersects(b)) and not merged.contains_ball(b):
                        merged = enclosing_ball(merged, b)
                        changed = True
            small = [b for b in small if not merged.contains_ball(b)]
            big = [b for b in big if not merged.contains_ball(b)]
            isml = [b for b in isml if not merged.contains_ball(b)]
            ibig = [b for b in ibig if not merged.contains_ball(b)]
            if merged.radius >= 0.5 * eps:
                ibig.append(merged)
                notes[_key(merged)] = {"kind": "core-size"}
                break
            seed = merged
            steps += 1
            if steps > budget_cap:
                raise DetectError("dipole-watchdog",
                                  f"elimination exceeded {budget_cap} steps")
    ibig = ibig + big
    out = DipoleFamilies(BallFamily(isml), BallFamily(ibig), notes, steps)
    allb = out.all_balls()
    if not allb.pairwise_disjoint():
        raise AssertionError("dipole elimination produced overlapping balls")
    for b in f:
        if not any(ob.contains_ball(b, tol=1e-9) for ob in allb):
            raise AssertionError("dipole elimination lost coverage of an input ball")
    if allb.rad() > 5.0 * f.rad() + 1e-12:
        raise AssertionError("dipole elimination exceeded the five-fold radius bound")
    return out


def _key(b: Ball):
    return (round(b.center.x1, 12), round(b.center.x2, 12), round(b.radius, 12))


# -- cluster covering ---------------------------------------------------------


@dataclass
class ClusterRegion:
    """A connected union of concentric dilations of charged disks."""
    members: list            # original big balls
    factor: float            # dilation of the region boundary (common level)
    level: float             # chosen level in [0, 1]
    degree: int
    boundary_integral: float

    def region_balls(self) -> list:
        return [Ball(b.center, b.radius * self.factor) for b in self.members]

    def diam(self) -> float:
        bs = self.region_balls()
        if len(bs) == 1:
            return 2 * bs[0].radius
        d = 0.0
        for i in range(len(bs)):
            for j in range(i, len(bs)):
                d = max(d, bs[i].center.dist(bs[j].center)
                        + bs[i].radius + bs[j].radius)
        return d

    def contains_ball(self, b: Ball) -> bool:
        return any(rb.contains_ball(b) for rb in self.region_balls())

    def largest_member(self) -> Ball:
        return max(self.members, key=lambda b: (b.radius, b.center.x1, b.center.x2))


def _boundary_integral_at(u, members, factor, npts=1024):
    total = 0.0
    for k, b in enumerate(members):
        rho = b.radius * factor
        g = u.grid
        n = min(max(64, int(math.ceil(8 * 2 * math.pi * rho / g.h))), npts)
        ang = 2 * math.pi * np.arange(n) / n
        px = b.center.x1 + rho * np.cos(ang)
        py = b.center.x2 + rho * np.sin(ang)
        keep = np.ones(n, dtype=bool)
        for l, o in enumerate(members):
            if l == k:
                continue
            keep &= (px - o.center.x1) ** 2 + (py - o.center.x2) ** 2 \
                > (o.radius * factor) ** 2
        if not np.any(keep):
            continue
        fx = (px[keep] - g.origin.x1) / g.h
        fy = (py[keep] - g.origin.x2) / g.h
        i = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
        th = u.theta
        gx = 0.5 * (wrap_angle(th[i + 1, j] - th[i, j])
                    + wrap_angle(th[i + 1, j + 1] - th[i, j + 1])) / g.h
        gy = 0.5 * (wrap_angle(th[i, j + 1] - th[i, j])
                    + wrap_angle(th[i + 1, j + 1] - th[i + 1, j])) / g.h
        total += float(np.sum(np.hypot(gx, gy))) * 2 * math.pi * rho / n
    return total


def cluster_cover(d: DipoleFamilies, u: S1Field, eps: float,
                  levels: int = 33) -> list:
    """Group the core-size disks into dilated cluster regions.

    Each disk is dilated by 16 * Cbar * |log eps| with Cbar the radius-sum
    constant measured on this run; overlapping dilations form one region.
    The region boundary level is chosen among sampled levels whose circles
    avoid every estimate-certified small disk, minimizing the sampled
    boundary integral of |grad u|.
    """
    bigs = list(d.big.balls)
    if not bigs:
        return []
    log_eps = abs(math.log(eps))
    cbar = max(d.all_balls().rad() / (eps * log_eps), 1.0 / (8.0 * log_eps))
    alpha = 16.0 * cbar * log_eps
    for b in bigs:
        if not u.domain.outer.contains_ball(Ball(b.center, b.radius * alpha)):
            raise DetectError("dilation-escapes-domain",
                              "cluster dilation leaves the domain; shrink eps")
    # connected components of the dilated disks
    n = len(bigs)
    comp = list(range(n))

    def find(a):
        while comp[a] != a:
            comp[a] = comp[comp[a]]
            a = comp[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if bigs[i].center.dist(bigs[j].center) \
                    < alpha * (bigs[i].radius + bigs[j].radius):
                comp[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(bigs[i])

    regions = []
    for members in groups.values():
        blocked = []
        for b in members:
            for s in d.small:
                dist = b.center.dist(s.center)
                t1 = ((dist - s.radius) / b.radius - 1.0) / (alpha - 1.0)
                t2 = ((dist + s.radius) / b.radius - 1.0) / (alpha - 1.0)
                if t2 < 0 or t1 > 1:
                    continue
                blocked.append((max(t1 - 1e-9, 0.0), min(t2 + 1e-9, 1.0)))
        blocked.sort()
        free = []
        cur = 0.0
        for a, bnd in blocked:
            if a > cur:
                free.append((cur, a))
            cur = max(cur, bnd)
        if cur < 1.0:
            free.append((cur, 1.0))
        free = [(a, b) for a, b in free if b - a > 1e-9]
        if not free:
            free = [(0.0, 1.0)]   # pathological at desk scale; recorded below
        total_free = sum(b - a for a, b in free)
        ts = []
        for a, b in free:
            k = max(1, int(round(levels * (b - a) / total_free)))
            pad = 1e-3 * (b - a)
            ts.extend(np.linspace(a + pad, b - pad, k).tolist())
        best = None
        for t in ts:
            factor = 1.0 + t * (alpha - 1.0)
            val = _boundary_integral_at(u, members, factor)
            if best is None or val < best[0] - 1e-15:
                best = (val, t, factor)
        val, t, factor = best
        deg = sum(nudged_degree(u, b.center, b.radius) for b in members)
        region = ClusterRegion(members, factor, t, 0, val)
        for s in d.small:
            if region.contains_ball(s):
                deg += nudged_degree(u, s.center, s.radius)
        region.degree = int(deg)
        regions.append(region)
    return regions


def extract_mu_hat(regions: list) -> AtomicMeasure:
    """One atom per cluster region at its largest member's center."""
    atoms = []
    for reg in regions:
        if reg.degree != 0:
            atoms.append((reg.largest_member().center, float(reg.degree)))
    return AtomicMeasure(atoms)


# -- the composite pipeline ---------------------------------------------------


def detect(u: S1Field, eps: float):
    """Full detection pipeline; returns (mu_hat, diagnostics)."""
    diag = {}
    cover = cover_jump_set(u, eps)
    diag["cover"] = {"count": len(cover), "rad": cover.rad()}
    if len(cover) == 0:
        diag["mu_hat"] = []
        return AtomicMeasure.zero(), diag
    grown = ball_grow(cover, t_end=1.0)
    fam1 = grown.final()
    diag["grown"] = {"count": len(fam1), "rad": fam1.rad(),
                     "events": len(grown.events)}
    mu_tilde = extract_mu_tilde(grown, u, u.domain)
    diag["mu_tilde"] = [[p.x1, p.x2, w] for p, w in mu_tilde.atoms]
    fat = fatten_nonzero(fam1, u, eps)
    diag["fattened"] = {"count": len(fat), "rad": fat.rad()}
    dip = dipole_eliminate(fat, u, eps)
    ests = [v["normalized"] for v in dip.annotations.values()
            if v["kind"] == "estimate"]
    diag["dipoles"] = {
        "small": len(dip.small), "big": len(dip.big),
        "rad": dip.all_balls().rad(), "steps": dip.steps,
        "max_normalized_estimate": max(ests) if ests else 0.0,
    }
    regions = cluster_cover(dip, u, eps)
    diag["regions"] = [{
        "degree": r.degree, "level": r.level, "factor": r.factor,
        "boundary_integral": r.boundary_integral, "diam": r.diam(),
        "members": len(r.members),
    } for r in regions]
    diag["sum_region_diam"] = sum(r.diam() for r in regions)
    mu_hat = extract_mu_hat(regions)
    diag["mu_hat"] = [[p.x1, p.x2, w] for p, w in mu_hat.atoms]
    if sum(abs(w) for _, w in mu_hat.atoms) > sum(abs(w) for _, w in mu_tilde.atoms):
        raise AssertionError("cluster extraction increased the total variation")
    return mu_hat, diag
