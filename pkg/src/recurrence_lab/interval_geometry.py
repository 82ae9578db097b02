"""Component structure of interval return events.

Inside each level-k cylinder the return set {x : |T^k x - x| < r_k(x)} is
a single interval around the cylinder's periodic point: away from the
point, |T^k t - t| grows with slope at least 3^k - 1 while the radius
moves with slope at most 1, so the boundary crossings are simple roots.
The generic engine locates them by vectorised bisection for any map and
measure model (word count capped at 3e5); integer-slope maps with the
Lebesgue measure get a closed form in cylinder-local coordinates, which
stays cancellation-free out to level m^20 and powers the exact joint
measures mu(E_k intersect E_{k+l}).
"""

from dataclasses import dataclass

import numpy as np

from .estimators import DecayFit, fit_exponential_decay
from .measures import LEBESGUE_INTERVAL, cdf_value, radius_at_points

WORD_CAP = 300_000
_LEVEL_CAP_LINEAR = 21


@dataclass
class EventComponent:
    """One component of the return event: I = (a, b) inside C_word,
    holding the unique period-k point p."""

    word: tuple
    a: float
    b: float
    p: float
    mass: float
    image_mass: float
    increasing: bool


@dataclass
class CoverReport:
    k: int
    mass: float
    max_ratio: float        # max over components of mu(T^k I) / M_k
    cover_ok: bool          # T^k I inside the three boundary balls
    worst_word: tuple
    components: int


@dataclass
class ComponentMassReport:
    k: int
    mass: float
    max_constant: float     # max of mu(I_w) / (M_k mu(C_w))
    worst_word: tuple


@dataclass
class ShortReturnRow:
    l: int
    joint: float
    mass_kl: float          # mu(E_{k+l})
    excess: float           # joint / mu(E_{k+l}) - mu(E_k)


@dataclass
class ShortReturnReport:
    k: int
    mass_k: float           # mu(E_k)
    rows: tuple
    decay: DecayFit         # fit of the normalised excess against l
    c_fit: float            # smallest C making the two-term bound hold

    @property
    def lam_fit(self):
        return np.exp(self.decay.rate) if self.decay.rate is not None else None


# ---------------------------------------------------------------------------
# generic vectorised engine


def _word_digits(m, k):
    idx = np.arange(m ** k, dtype=np.int64)
    digits = np.empty((m ** k, k), dtype=np.int64)
    for j in range(k - 1, -1, -1):
        digits[:, j] = idx % m
        idx //= m
    return digits


def _cylinders(map_spec, digits):
    n = digits.shape[0]
    lo = np.zeros(n)
    hi = np.ones(n)
    for j in range(digits.shape[1] - 1, -1, -1):
        for v in range(map_spec.branch_count):
            mask = digits[:, j] == v
            if not np.any(mask):
                continue
            a = np.asarray(map_spec.g(v, lo[mask]))
            b = np.asarray(map_spec.g(v, hi[mask]))
            lo[mask] = np.minimum(a, b)
            hi[mask] = np.maximum(a, b)
    return lo, hi


def _forward_words(map_spec, digits, t):
    """T^k along prescribed branch words, vectorised over words."""
    out = t.copy()
    for j in range(digits.shape[1]):
        for v in range(map_spec.branch_count):
            mask = digits[:, j] == v
            if np.any(mask):
                out[mask] = np.asarray(map_spec.branch_T(v, out[mask]))
    return out


def _periodic_points(map_spec, digits, lo, hi):
    z = np.full(digits.shape[0], 0.5)
    # composed inverse contraction, factor <= 3^-k per sweep
    for _ in range(60):
        z_new = z.copy()
        for j in range(digits.shape[1] - 1, -1, -1):
            for v in range(map_spec.branch_count):
                mask = digits[:, j] == v
                if np.any(mask):
                    z_new[mask] = np.asarray(map_spec.g(v, z_new[mask]))
        if np.max(np.abs(z_new - z)) < 1e-15:
            z = z_new
            break
        z = z_new
    return np.clip(z, lo, hi)


def event_components(map_spec, model, k, mass):
    """All return components at time k, one per level-k cylinder.

    Boundary roots solve ||T^k t - t| - r(t)| = 0 by 60-step bisection on
    each side of the periodic point; a side clamps at the cylinder edge
    when the event reaches it.
    """
    if not model.is_interval:
        raise ValueError("interval components need an interval model")
    m = map_spec.branch_count
    if m ** k > WORD_CAP:
        raise ValueError(f"{m}^{k} cylinders exceed the exact-mode cap "
                         f"{WORD_CAP}; use Monte Carlo")
    digits = _word_digits(m, k)
    lo, hi = _cylinders(map_spec, digits)
    p = _periodic_points(map_spec, digits, lo, hi)
    if mass == 0.0:
        return [EventComponent(tuple(d), float(q), float(q), float(q), 0.0,
                               0.0, True)
                for d, q in zip(digits, p)]

    def gap(t):
        return np.abs(_forward_words(map_spec, digits, t) - t) - \
            radius_at_points(model, t, mass)

    a = _side_root(gap, lo, p, left=True)
    b = _side_root(gap, p, hi, left=False)
    masses = cdf_value(model, b) - cdf_value(model, a)
    ta = _forward_words(map_spec, digits, a)
    tb = _forward_words(map_spec, digits, b)
    ilo = np.clip(np.minimum(ta, tb), 0.0, 1.0)
    ihi = np.clip(np.maximum(ta, tb), 0.0, 1.0)
    image = cdf_value(model, ihi) - cdf_value(model, ilo)
    signs = np.ones(digits.shape[0])
    for j in range(k):
        signs *= np.array(map_spec.signs)[digits[:, j]]
    return [EventComponent(tuple(int(v) for v in d), float(aa), float(bb),
                           float(pp), float(mm), float(im), s > 0)
            for d, aa, bb, pp, mm, im, s in zip(digits, a, b, p, masses,
                                                image, signs)]


def _side_root(gap, lo, hi, left):
    """Root of the gap function on [lo, hi]; clamps at the outer end when
    the event extends to it. The gap is monotone on each side."""
    outer = lo if left else hi
    inner = hi if left else lo
    g_out = gap(outer.copy())
    clamped = g_out < 0.0
    a, b = lo.copy(), hi.copy()
    for _ in range(60):
        mid = 0.5 * (a + b)
        pos = gap(mid) > 0.0
        if left:
            a = np.where(pos, mid, a)
            b = np.where(pos, b, mid)
        else:
            b = np.where(pos, mid, b)
            a = np.where(pos, a, mid)
    root = b if left else a
    return np.where(clamped, outer, root)


# ---------------------------------------------------------------------------
# closed form: integer-slope increasing map, Lebesgue measure


def _supports_closed_form(map_spec, model):
    return (map_spec.exact and all(s > 0 for s in map_spec.signs)
            and model.variant == LEBESGUE_INTERVAL)


def _components_u(m, level, c, mass):
    """Component endpoints in cylinder-local coordinates u = m^level t - c.

    For T^level t - t = (D u - c)/m^level with D = m^level - 1 and the
    boundary-clipped Lebesgue radius, each side of the root has three
    candidate formulas (lower clip zone, interior, upper clip zone); the
    valid one is selected by zone membership. All arithmetic stays on
    O(1)-sized numbers, so levels up to m^20 lose no precision.
    """
    ms = float(m) ** level
    d = ms - 1.0
    c = c.astype(np.float64)
    p_u = c / d
    half = 0.5 * mass * ms        # zone threshold in scaled units

    # --- left root on [0, p_u]
    a_int = (c - half) / d
    a_top = np.full_like(c, 1.0 - mass)
    t_int_ok = (a_int + c >= half) & (a_int + c <= ms - half)
    t_top_ok = a_top + c > ms - half
    a_u = np.where(t_int_ok, a_int, np.where(t_top_ok, a_top, 0.0))
    # clamp: cylinder left edge already inside the event
    gap0 = c / ms - _radius_scaled(c, 0.0, ms, mass)
    a_u = np.where(gap0 < 0.0, 0.0, a_u)
    a_u = np.clip(a_u, 0.0, p_u)

    # --- right root on [p_u, 1]
    b_int = (c + half) / d
    b_bot = np.full_like(c, mass)
    b_top = (2.0 * c - (1.0 - mass) * ms) / (d - 1.0)
    t_int_ok = (b_int + c >= half) & (b_int + c <= ms - half)
    t_bot_ok = b_bot + c < half
    b_u = np.where(t_int_ok, b_int,
                   np.where(t_bot_ok, b_bot, np.clip(b_top, 0.0, 1.0)))
    gap1 = (d - c) / ms - _radius_scaled(c, 1.0, ms, mass)
    b_u = np.where(gap1 < 0.0, 1.0, b_u)
    b_u = np.clip(b_u, p_u, 1.0)
    return a_u, b_u, p_u


def _radius_scaled(c, u, ms, mass):
    """Boundary-clipped Lebesgue radius at t = (c + u)/m^level."""
    t = (c + u) / ms
    edge = np.minimum(t, 1.0 - t)
    return np.where(mass <= 2.0 * edge, 0.5 * mass, mass - edge)


def exact_event_mass_linear(map_spec, model, level, mass, chunk=1 << 22):
    """mu(E_level) for an increasing integer-slope map with Lebesgue,
    summed in cylinder-local coordinates (valid to level m^20)."""
    if not _supports_closed_form(map_spec, model):
        raise ValueError("closed form needs an increasing linear map "
                         "with the Lebesgue model")
    m = map_spec.branch_count
    if level >= _LEVEL_CAP_LINEAR:
        raise ValueError("level cap exceeded")
    total_words = m ** level
    ms = float(m) ** level
    d = ms - 1.0
    half = 0.5 * mass * ms
    # interior components all have scaled width mass * m^level / D
    c_lo = int(np.ceil(half))
    c_hi = int(np.floor(d - half))
    interior = max(0, c_hi - c_lo + 1)
    total = interior * (mass * ms / d)
    for lo in range(0, c_lo, chunk):
        c = np.arange(lo, min(lo + chunk, c_lo), dtype=np.int64)
        a_u, b_u, _ = _components_u(m, level, c, mass)
        total += float(np.sum(b_u - a_u))
    for lo in range(max(c_hi + 1, 0), total_words, chunk):
        c = np.arange(lo, min(lo + chunk, total_words), dtype=np.int64)
        a_u, b_u, _ = _components_u(m, level, c, mass)
        total += float(np.sum(b_u - a_u))
    return total / ms


# ---------------------------------------------------------------------------
# cover and mass checks


def check_three_ball_cover(map_spec, model, k, mass, tol=1e-12):
    """mu(T^k I) <= 3 M_k per component, and the image interval lies in
    the union of the balls at the component's endpoints and its periodic
    point. Components of decreasing branch words must fit inside the
    single ball at the periodic point."""
    comps = event_components(map_spec, model, k, mass)
    if mass == 0.0:
        return CoverReport(k, mass, 0.0, True, comps[0].word, len(comps))
    max_ratio = -1.0
    worst = None
    cover_ok = True
    a = np.array([c.a for c in comps])
    b = np.array([c.b for c in comps])
    p = np.array([c.p for c in comps])
    digits = np.array([c.word for c in comps], dtype=np.int64)
    ta = _forward_words(map_spec, digits, a)
    tb = _forward_words(map_spec, digits, b)
    ilo = np.clip(np.minimum(ta, tb), 0.0, 1.0)
    ihi = np.clip(np.maximum(ta, tb), 0.0, 1.0)
    r_a = radius_at_points(model, a, mass)
    r_p = radius_at_points(model, p, mass)
    r_b = radius_at_points(model, b, mass)
    ratios = np.array([c.image_mass for c in comps]) / mass
    idx = int(np.argmax(ratios))
    max_ratio = float(ratios[idx])
    worst = comps[idx].word
    covered = _three_interval_cover(
        ilo, ihi,
        np.stack([a - r_a, p - r_p, b - r_b], axis=1),
        np.stack([a + r_a, p + r_p, b + r_b], axis=1), tol)
    cover_ok = bool(np.all(covered))
    increasing = np.array([c.increasing for c in comps])
    if np.any(~increasing):
        inside = ((ilo[~increasing] >= (p - r_p)[~increasing] - tol)
                  & (ihi[~increasing] <= (p + r_p)[~increasing] + tol))
        cover_ok = cover_ok and bool(np.all(inside))
    return CoverReport(k, mass, max_ratio, cover_ok, worst, len(comps))


def _three_interval_cover(lo, hi, lefts, rights, tol):
    order = np.argsort(lefts, axis=1)
    ls = np.take_along_axis(lefts, order, axis=1)
    rs = np.take_along_axis(rights, order, axis=1)
    covered = ls[:, 0] <= lo + tol
    reach = rs[:, 0]
    for j in (1, 2):
        chained = ls[:, j] <= reach + tol
        reach = np.where(chained, np.maximum(reach, rs[:, j]), reach)
    return covered & (reach >= hi - tol)


def check_component_mass(map_spec, model, k, mass, cyl_floor=0.0):
    """mu(I_w) <= C * M_k * mu(C_w): reports the max empirical C.

    Cylinders with mass below cyl_floor are skipped; for grid models the
    caller should pass a few times the model error bound, below which the
    ratio is resolution noise.
    """
    comps = event_components(map_spec, model, k, mass)
    if mass == 0.0:
        return ComponentMassReport(k, mass, 0.0, comps[0].word)
    digits = np.array([c.word for c in comps], dtype=np.int64)
    lo, hi = _cylinders(map_spec, digits)
    cyl_mass = cdf_value(model, hi) - cdf_value(model, lo)
    comp_mass = np.array([c.mass for c in comps])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = comp_mass / (mass * cyl_mass)
    ratio = np.where(np.isfinite(ratio) & (cyl_mass >= cyl_floor), ratio, 0.0)
    idx = int(np.argmax(ratio))
    return ComponentMassReport(k, mass, float(ratio[idx]), comps[idx].word)


# ---------------------------------------------------------------------------
# short returns: exact joint measures


def exact_joint_measure(map_spec, model, k, l, mass_k, mass_kl):
    """mu(E_k intersect E_{k+l}), exactly.

    Fast path (increasing linear, Lebesgue): for every level-k component,
    only level-(k+l) cylinders within it can contribute; their indices
    are scanned directly in scaled coordinates. Generic path enumerates
    level k+l (word cap applies).
    """
    if _supports_closed_form(map_spec, model):
        return _joint_linear(map_spec, k, l, mass_k, mass_kl)
    m = map_spec.branch_count
    if m ** (k + l) > WORD_CAP:
        raise ValueError("joint level exceeds the exact-mode word cap")
    comps_k = event_components(map_spec, model, k, mass_k)
    comps_kl = event_components(map_spec, model, k + l, mass_kl)
    total = 0.0
    pos = 0
    per_parent = m ** l
    for i, ck in enumerate(comps_k):
        if ck.b <= ck.a:
            continue
        for cl in comps_kl[i * per_parent:(i + 1) * per_parent]:
            lo = max(ck.a, cl.a)
            hi = min(ck.b, cl.b)
            if hi > lo:
                total += float(cdf_value(model, hi) - cdf_value(model, lo))
    return total


def _joint_linear(map_spec, k, l, mass_k, mass_kl, budget=1 << 22):
    m = map_spec.branch_count
    s = k + l
    if s >= _LEVEL_CAP_LINEAR:
        raise ValueError("joint level cap exceeded")
    ml = m ** l
    c1 = np.arange(m ** k, dtype=np.int64)
    a1, b1, _ = _components_u(m, k, c1, mass_k)
    keep = b1 > a1
    c1, a1, b1 = c1[keep], a1[keep] * ml, b1[keep] * ml  # level-s units
    q_lo = np.ceil(a1).astype(np.int64) - 1
    counts = np.maximum(np.floor(b1).astype(np.int64) - q_lo + 1, 0)
    # chunk by total candidate count, not component count
    cum = np.concatenate([[0], np.cumsum(counts)])
    total = 0.0
    start = 0
    while start < c1.shape[0]:
        stop = int(np.searchsorted(cum, cum[start] + budget, side="left"))
        stop = min(max(stop, start + 1), c1.shape[0])
        sl = slice(start, stop)
        cnt = counts[sl]
        n_cand = int(cnt.sum())
        if n_cand:
            rep = np.repeat(np.arange(stop - start), cnt)
            base = np.repeat(cum[start:stop] - cum[start], cnt)
            offs = np.arange(n_cand) - base
            q = q_lo[sl][rep] + offs
            c2 = q + c1[sl][rep] * ml
            valid = (c2 >= 0) & (c2 < m ** s)
            rep, q, c2 = rep[valid], q[valid], c2[valid]
            a2, b2, _ = _components_u(m, s, c2, mass_kl)
            olap = (np.minimum(b1[sl][rep], q + b2)
                    - np.maximum(a1[sl][rep], q + a2))
            total += float(np.sum(np.maximum(olap, 0.0)))
        start = stop
    return total / float(m) ** s


def pooled_short_return_fit(reports, floor=1e-14):
    """One decay rate fitted across several short-return reports, with the
    per-report constant recomputed against it.

    Alignment of periodic points makes the excess spike whenever k and
    k + l share divisors, so per-k fits are noisy; pooling the (l, excess)
    points across k smooths the arithmetic resonances out.
    """
    pts = []
    for rep in reports:
        pts.extend((row.l, max(row.excess, 0.0)) for row in rep.rows)
    try:
        decay = fit_exponential_decay(pts, floor=floor)
    except ValueError:
        decay = DecayFit(None, None, None, at_floor=True)
    lam = float(np.exp(decay.rate)) if decay.ok else None
    constants = []
    for rep in reports:
        lam_use = lam if lam is not None else float("inf")
        c = max((row.joint / (rep.mass_k * row.mass_kl
                              + row.mass_kl * lam_use ** -row.l)
                 for row in rep.rows if row.mass_kl > 0), default=0.0)
        constants.append(float(c))
    return lam, constants, decay


def short_return_check(map_spec, model, schedule, k, l_max, floor=1e-14):
    """Exact joints for l = 1..l_max against the two-term short-return
    bound: joint <= C mu(E_k) mu(E_{k+l}) + C mu(E_{k+l}) lambda^-l."""
    masses = schedule.masses(np.arange(1, k + l_max + 1))
    mass_k = float(masses[k - 1])
    if _supports_closed_form(map_spec, model):
        mu_k = exact_event_mass_linear(map_spec, model, k, mass_k)
    else:
        mu_k = sum(c.mass for c in event_components(map_spec, model, k, mass_k))
    rows = []
    pts = []
    for l in range(1, l_max + 1):
        mass_kl = float(masses[k + l - 1])
        joint = exact_joint_measure(map_spec, model, k, l, mass_k, mass_kl)
        if _supports_closed_form(map_spec, model):
            mu_kl = exact_event_mass_linear(map_spec, model, k + l, mass_kl)
        else:
            mu_kl = sum(c.mass for c in
                        event_components(map_spec, model, k + l, mass_kl))
        excess = joint / mu_kl - mu_k if mu_kl > 0 else 0.0
        rows.append(ShortReturnRow(l, joint, mu_kl, excess))
        pts.append((l, max(excess, 0.0)))
    try:
        decay = fit_exponential_decay(pts, floor=floor)
    except ValueError:
        decay = DecayFit(None, None, None, at_floor=True)
    lam = np.exp(decay.rate) if decay.ok else float(map_spec.branch_count)
    c_fit = 0.0
    for row in rows:
        denom = mu_k * row.mass_kl + row.mass_kl * lam ** -row.l
        if denom > 0:
            c_fit = max(c_fit, row.joint / denom)
    return ShortReturnReport(k, mu_k, tuple(rows), decay, float(c_fit))
