"""Exact geometry of torus return events.

For T = A mod 1 the return set at time k, {x : d(T^k x, x) < r}, is the
preimage of the r-ball at 0 under x -> (A^k - I)x mod 1. It decomposes
into one ellipse per k-periodic point: p + M^{-1} B(0, r) with
M = A^k - I. Mapping everything by M turns geometric questions into
lattice questions about integer vectors, which this module answers
exactly: two ellipses at periodic points p, q (including wrapped copies)
intersect iff some integer vector z congruent to M(p - q) mod M Z^2 has
|z| < 2r, and the event measure is exactly pi r^2 whenever the family is
disjoint and embedded.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .estimators import estimate_pair_joint
from .measures import radius_for_mass
from .systems import TorusAutomorphism, periodic_point_count, periodic_points_torus


class EllipseOverlapError(RuntimeError):
    """Raised when the exact area formula is invalid; use Monte Carlo."""


@dataclass(frozen=True)
class EllipseSpec:
    """One component of the return event around a periodic point."""

    center: tuple               # exact rational coordinates
    semi_stable: float          # r / |lambda_s^k - 1|
    semi_unstable: float        # r / |lambda_u^k - 1|
    axes: np.ndarray            # columns [stable, unstable], unit vectors


@dataclass(frozen=True)
class EllipseFamily:
    k: int
    radius: float
    mass: float
    ellipses: tuple
    disjoint: bool
    min_image_gap: float        # min over pairs of |M(p-q)+Mv|, in M-image


@dataclass(frozen=True)
class RectangleCover:
    """Axis-aligned (in eigen-coordinates) rectangles containing the
    ellipses; half-sides scale like r and lambda^-k r."""

    k: int
    centers: np.ndarray         # (n, 2) float torus coordinates
    half_stable: float
    half_unstable: float
    basis: np.ndarray           # eigen columns [stable, unstable]


def _power_matrix_minus_identity(system, k):
    mk = system.matrix_power(k)
    return ((mk[0][0] - 1, mk[0][1]), (mk[1][0], mk[1][1] - 1))


def _eigen_data(system, k):
    """(d_s, d_u) = eigenvalues of A^k - I and the unit eigenbasis."""
    d_s = float((system.eigenvalue_power(k, unstable=False) - 1))
    d_u = float((system.eigenvalue_power(k, unstable=True) - 1))
    basis = system.eigenbasis()
    return d_s, d_u, basis


def _cover_half_sides(system, k, radius):
    """Tight bounding box of {delta : |M delta| < r} in eigen-coordinates:
    half-side i = r * ||row_i of (M U)^{-1}||."""
    d_s, d_u, basis = _eigen_data(system, k)
    u_inv = np.linalg.inv(basis)
    h_s = radius * float(np.hypot(*u_inv[0])) / abs(d_s)
    h_u = radius * float(np.hypot(*u_inv[1])) / abs(d_u)
    return h_s, h_u, basis


def enumerate_ellipses(system, k, mass):
    """All components of the mass-`mass` return event at time k, with the
    disjointness of the family verified exactly in the M-image."""
    radius = radius_for_mass(_torus_model(), None, mass) if mass > 0 else 0.0
    if radius >= 0.25:
        raise ValueError("component enumeration requires r < 1/4")
    d_s, d_u, basis = _eigen_data(system, k)
    pts = periodic_points_torus(system, k)
    ellipses = tuple(
        EllipseSpec(p, radius / abs(d_s), radius / abs(d_u), basis)
        for p in pts)
    gap = _min_pair_gap(system, k, pts)
    disjoint = bool(gap > 2.0 * radius)
    return EllipseFamily(k, radius, mass, ellipses, disjoint, gap)


def _torus_model():
    from .measures import lebesgue_torus
    return lebesgue_torus()


def _gauss_reduce(b1, b2):
    """Lagrange-Gauss reduction of a 2D integer lattice basis (exact)."""
    def dot(a, b):
        return a[0] * b[0] + a[1] * b[1]

    while True:
        if dot(b1, b1) > dot(b2, b2):
            b1, b2 = b2, b1
        d = dot(b1, b1)
        if d == 0:
            break
        num = dot(b1, b2)
        mu = (2 * num + d) // (2 * d) if num >= 0 else -((-2 * num + d) // (2 * d))
        if mu == 0:
            break
        b2 = (b2[0] - mu * b1[0], b2[1] - mu * b1[1])
    return b1, b2


def _min_pair_gap(system, k, pts):
    """min over distinct periodic pairs (and wrapped copies of one
    component) of |M(p - q) + M v|, v in Z^2: components at p, q intersect
    iff this falls below 2r.

    The periodic points form a group, so differences from (0, 0) already
    realise every nonzero residue; shifts M v are resolved by a closest
    vector search in the Gauss-reduced column lattice of M.
    """
    m = _power_matrix_minus_identity(system, k)
    b1, b2 = _gauss_reduce((m[0][0], m[1][0]), (m[0][1], m[1][1]))
    self_gap = float(np.hypot(*b1))  # shortest |M v|, v != 0
    if len(pts) == 1:
        return self_gap
    assert pts[0] == (0, 0), "periodic points are sorted with 0 first"
    z1 = np.array([int(m[0][0] * q[0] + m[0][1] * q[1]) for q in pts[1:]],
                  dtype=np.float64)
    z2 = np.array([int(m[1][0] * q[0] + m[1][1] * q[1]) for q in pts[1:]],
                  dtype=np.float64)
    basis = np.array([b1, b2], dtype=np.float64).T
    coeff = -np.linalg.solve(basis, np.stack([z1, z2]))
    best = np.inf
    for d1 in (-1, 0, 1):
        for d2 in (-1, 0, 1):
            u = np.round(coeff) + np.array([[d1], [d2]])
            w1 = z1 + basis[0, 0] * u[0] + basis[0, 1] * u[1]
            w2 = z2 + basis[1, 0] * u[0] + basis[1, 1] * u[1]
            best = min(best, float(np.min(np.hypot(w1, w2))))
    return min(best, self_gap)


def exact_event_measure(system, k, mass):
    """m(E_k) = pi r^2, computed both as the area formula and as
    count * per-ellipse area, asserted equal to 1e-12."""
    if mass == 0.0:
        return 0.0
    family = enumerate_ellipses(system, k, mass)
    if not family.disjoint:
        raise EllipseOverlapError(
            f"components overlap at k={k}, mass={mass}; "
            "use Monte Carlo (estimate_event_measure)")
    r = family.radius
    count = periodic_point_count(system, k)
    assert count == len(family.ellipses)
    area_formula = np.pi * r * r
    per_ellipse = np.pi * r * r / count
    total = count * per_ellipse
    assert abs(total - area_formula) <= 1e-12
    return float(area_formula)


def cover_rectangles(system, k, mass):
    """Rectangle cover of the return components in eigen-coordinates."""
    radius = radius_for_mass(_torus_model(), None, mass) if mass > 0 else 0.0
    h_s, h_u, basis = _cover_half_sides(system, k, radius)
    pts = periodic_points_torus(system, k)
    centers = np.array([[float(p[0]), float(p[1])] for p in pts])
    return RectangleCover(k, centers, h_s, h_u, basis)


# ---------------------------------------------------------------------------
# separation of periodic-point rectangles


@dataclass(frozen=True)
class SeparationReport:
    l: int
    rows: tuple                 # (rho, c_max) pairs; c_max may be inf
    c_min: float                # min over the rho grid


def rectangles_disjoint(system, l, rho, c):
    """Whether rectangles of stable side rho and unstable side
    c * lambda^-l / rho centred at all l-periodic points are pairwise
    disjoint on the torus (distinct points only)."""
    if c <= 0:
        return True
    lam_l = abs(float(system.eigenvalue_power(l, unstable=True)))
    height = c / (lam_l * rho)
    gap = _strip_min_unstable(system, l, rho)
    return gap >= height


def separation_probe(system, l, rhos):
    """Largest admissible c per rho: binary search of the disjointness
    predicate, bracketed by the exact strip minimum."""
    rows = []
    lam_l = abs(float(system.eigenvalue_power(l, unstable=True)))
    for rho in rhos:
        gap = _strip_min_unstable(system, l, rho)
        if not np.isfinite(gap):
            rows.append((float(rho), np.inf))
            continue
        lo, hi = 0.0, 2.0 * gap * lam_l * rho
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if rectangles_disjoint(system, l, rho, mid):
                lo = mid
            else:
                hi = mid
        rows.append((float(rho), lo))
    c_min = min((c for _, c in rows), default=np.inf)
    return SeparationReport(l, tuple(rows), float(c_min))


def _strip_min_unstable(system, l, rho):
    """min |w_u(delta)| over lattice points delta of M^{-1}Z^2 outside Z^2
    with |w_s(delta)| < rho; inf when every l-periodic point is the same
    torus point (|det M| = 1, vacuous separation)."""
    m = _power_matrix_minus_identity(system, l)
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    if abs(det) == 1:
        return np.inf
    basis = system.eigenbasis()
    w_of_z = np.linalg.inv(basis) @ np.linalg.inv(np.array(m, dtype=np.float64))
    ws1, ws2 = w_of_z[0]
    wu1, wu2 = w_of_z[1]
    adj = np.array([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]], dtype=object)

    covol = abs(1.0 / (det * np.linalg.det(basis)))
    bound = 4.0 * covol / rho
    for _ in range(8):
        # z range from |z| <= |M U| (rho, bound) componentwise
        mu = np.array(m, dtype=np.float64) @ basis
        z1_max = int(np.ceil(abs(mu[0, 0]) * rho + abs(mu[0, 1]) * bound)) + 1
        z2_max = int(np.ceil(abs(mu[1, 0]) * rho + abs(mu[1, 1]) * bound)) + 1
        best = _scan_strip(ws1, ws2, wu1, wu2, rho, z1_max, z2_max, adj, det)
        if best is not None and best <= bound:
            return best
        bound *= 4.0
    raise RuntimeError("strip enumeration failed to locate a lattice point")


def _scan_strip(ws1, ws2, wu1, wu2, rho, z1_max, z2_max, adj, det):
    """Scan integer z with |ws . z| < rho along the thinner direction."""
    if abs(ws1) >= abs(ws2):
        span, slope = z2_max, -ws2 / ws1
        def cand(t):
            return np.round(slope * t)[:, None] + np.arange(-2, 3)[None, :], t
        axis_first = True
        width = rho / abs(ws1)
    else:
        span, slope = z1_max, -ws1 / ws2
        def cand(t):
            return np.round(slope * t)[:, None] + np.arange(-2, 3)[None, :], t
        axis_first = False
        width = rho / abs(ws2)
    if width > 2.5:
        # strip too wide for the line scan; fall back to a dense box
        return _scan_box(ws1, ws2, wu1, wu2, rho, min(z1_max, 2000),
                         min(z2_max, 2000), adj, det)
    t = np.arange(-span, span + 1)
    other, t = cand(t)
    tt = np.repeat(t, other.shape[1])
    oo = other.reshape(-1)
    z1 = (oo if axis_first else tt).astype(np.int64)
    z2 = (tt if axis_first else oo).astype(np.int64)
    ws = ws1 * z1 + ws2 * z2
    keep = (np.abs(ws) < rho) & ((z1 != 0) | (z2 != 0))
    z1, z2 = z1[keep], z2[keep]
    if z1.size == 0:
        return None
    # exclude points of Z^2 itself: M^{-1} z integer iff adj(M) z = 0 mod det
    r1 = (int(adj[0][0]) * z1 + int(adj[0][1]) * z2) % det
    r2 = (int(adj[1][0]) * z1 + int(adj[1][1]) * z2) % det
    keep = (r1 != 0) | (r2 != 0)
    z1, z2 = z1[keep], z2[keep]
    if z1.size == 0:
        return None
    return float(np.min(np.abs(wu1 * z1 + wu2 * z2)))


def _scan_box(ws1, ws2, wu1, wu2, rho, z1_max, z2_max, adj, det):
    g1 = np.arange(-z1_max, z1_max + 1)
    g2 = np.arange(-z2_max, z2_max + 1)
    z1, z2 = np.meshgrid(g1, g2, indexing="ij")
    z1, z2 = z1.ravel(), z2.ravel()
    ws = ws1 * z1 + ws2 * z2
    keep = (np.abs(ws) < rho) & ((z1 != 0) | (z2 != 0))
    z1, z2 = z1[keep], z2[keep]
    if z1.size == 0:
        return None
    r1 = (int(adj[0][0]) * z1 + int(adj[0][1]) * z2) % det
    r2 = (int(adj[1][0]) * z1 + int(adj[1][1]) * z2) % det
    keep = (r1 != 0) | (r2 != 0)
    z1, z2 = z1[keep], z2[keep]
    if z1.size == 0:
        return None
    return float(np.min(np.abs(wu1 * z1 + wu2 * z2)))


# ---------------------------------------------------------------------------
# pairwise intersection bound


@dataclass(frozen=True)
class IntersectionReport:
    k: int
    l: int
    mode: str
    intersection: float         # exact cover area or MC estimate
    stderr: float               # 0 in exact mode
    mass_k: float
    mass_kl: float
    product_term: float
    cross_term: float           # lambda^-l sqrt(m_k m_kl)
    fitted_c: float


def intersection_bound_check(system, k, l, schedule, mode="exact",
                             samples=200_000, seed=0, threads=1):
    """m(E_k intersect E_{k+l}) against the two-term bound
    C [ m(E_k) m(E_{k+l}) + lambda^-l sqrt(m(E_k) m(E_{k+l})) ].

    Exact mode clips the axis-aligned rectangle covers in eigen
    coordinates (an upper bound for the true intersection); Monte Carlo
    samples a shared orbit otherwise.
    """
    masses = schedule.masses(np.array([k, k + l]))
    mass_k, mass_kl = float(masses[0]), float(masses[1])
    lam = system.lam
    product = mass_k * mass_kl
    cross = lam ** -l * float(np.sqrt(product))
    if mode == "exact":
        if k + l > 12:
            raise ValueError("exact intersection capped at k + l <= 12")
        inter = _cover_intersection_area(system, k, l, mass_k, mass_kl)
        se = 0.0
    elif mode == "monte-carlo":
        from .measures import lebesgue_torus
        est = estimate_pair_joint(system, lebesgue_torus(),
                                  _PairMasses(mass_k, mass_kl, k, l),
                                  k, l, samples, seed, threads=threads)
        inter, se = est.joint, est.stderr
    else:
        raise ValueError(f"unknown mode {mode!r}")
    denom = product + cross
    fitted_c = inter / denom if denom > 0 else 0.0
    return IntersectionReport(k, l, mode, float(inter), float(se), mass_k,
                              mass_kl, product, cross, float(fitted_c))


class _PairMasses:
    """Minimal schedule view: only masses at times k and k+l matter."""

    def __init__(self, mass_k, mass_kl, k, l):
        self._values = {k: mass_k, k + l: mass_kl}

    def masses(self, ks):
        return np.array([self._values.get(int(t), 0.0) for t in np.atleast_1d(ks)])


def _cover_intersection_area(system, k, l, mass_k, mass_kl):
    """Upper bound on the intersection area: sum over rectangle pairs of
    the eigen-coordinate overlap, each overlap width clamped by the
    narrower rectangle."""
    ca = cover_rectangles(system, k, mass_k)
    cb = cover_rectangles(system, k + l, mass_kl)
    u_inv = np.linalg.inv(ca.basis)
    scale = abs(np.linalg.det(ca.basis))
    hs_sum = ca.half_stable + cb.half_stable
    hu_sum = ca.half_unstable + cb.half_unstable
    s_cap = 2.0 * min(ca.half_stable, cb.half_stable)
    u_cap = 2.0 * min(ca.half_unstable, cb.half_unstable)
    # rectangles are tiny relative to the torus: the minimum-image shift
    # is the only lattice shift that can yield an overlap
    assert hs_sum + hu_sum < 0.45, "covers too large for min-image clipping"
    total = 0.0
    for center in ca.centers:
        delta = cb.centers - center
        delta -= np.round(delta)
        w = delta @ u_inv.T
        o_s = np.minimum(hs_sum - np.abs(w[:, 0]), s_cap)
        o_u = np.minimum(hu_sum - np.abs(w[:, 1]), u_cap)
        ok = (o_s > 0) & (o_u > 0)
        if np.any(ok):
            total += float(np.sum(o_s[ok] * o_u[ok])) * scale
    return total
