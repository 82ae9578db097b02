"""Invariant measures: Lebesgue models, numerically built Gibbs measures,
ball masses and the radius-for-mass inversion.

A Gibbs model is built by discretising the weighted transfer operator on a
dyadic grid of 2^L cells. Measures are represented by their cell masses;
one application of the operator pulls the mass of T(C_i intersect D_j)
weighted by exp(phi) at the source, which is the dual (measure-side) view
of (L_phi f)(y) = sum_j exp(phi(g_j(y))) f(g_j(y)). Power iteration of the
sparse matrix and of its transpose gives the leading eigenvalue (the
exponential of the pressure), the conformal cell masses, and the
eigenfunction h; the invariant measure has cell masses proportional to
h * (conformal mass). The potential is then shifted by -log(eigenvalue)
so the pressure is zero.

Radius inversion r = inf{r : mu(B(x, r)) >= M} uses closed forms for the
Lebesgue models and exact inversion of the piecewise-linear mass profile
for grid models.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .systems import IntervalMapSpec

LEBESGUE_INTERVAL = "lebesgue-interval"
LEBESGUE_TORUS = "lebesgue-torus"
GIBBS_INTERVAL = "gibbs-interval"

_MAX_BALL_RADIUS_TORUS = float(np.sqrt(0.5))  # diameter of the unit torus


class GibbsBuildError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """Holder-continuous potential on [0, 1], evaluated through inverse
    branches so the transfer-operator weights need no root finding.

    kinds: "constant" (value), "branch-weights" (log p_j on branch j),
    "neg-log-deriv" (phi = -log|T'|).
    """

    kind: str
    value: float = 0.0
    weights: tuple = ()
    holder_exponent: float = 1.0
    normalized: bool = False
    offset: float = 0.0

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def branch_log_weights(cls, weights):
        w = tuple(float(p) for p in weights)
        if any(p <= 0 for p in w):
            raise ValueError("branch weights must be positive")
        return cls("branch-weights", weights=w)

    @classmethod
    def neg_log_deriv(cls):
        return cls("neg-log-deriv")

    def weight_on_branch(self, map_spec, j, y):
        """exp(phi(g_j(y))) including the zero-pressure offset."""
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "constant":
            w = np.full_like(y, np.exp(self.value))
        elif self.kind == "branch-weights":
            if len(self.weights) != map_spec.branch_count:
                raise ValueError("one weight per branch required")
            w = np.full_like(y, self.weights[j])
        elif self.kind == "neg-log-deriv":
            w = np.abs(map_spec.g_prime(j, y))
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.offset:
            w = w * np.exp(self.offset)
        return w

    def shifted(self, offset):
        return PotentialSpec(self.kind, self.value, self.weights,
                             self.holder_exponent, True, self.offset + offset)


# ---------------------------------------------------------------------------
# measure models


@dataclass(frozen=True)
class MeasureModel:
    """Lebesgue or grid-Gibbs measure with CDF and ball-mass services."""

    variant: str
    map: IntervalMapSpec = None
    potential: PotentialSpec = None
    grid_level: int = 0
    cdf: np.ndarray = None          # grid models: values at cell endpoints
    cell_masses: np.ndarray = None
    h: np.ndarray = None            # eigenfunction values per cell
    error_bound: float = 0.0
    eig_residual: float = 0.0

    @property
    def is_interval(self):
        return self.variant in (LEBESGUE_INTERVAL, GIBBS_INTERVAL)

    def __post_init__(self):
        if self.variant == GIBBS_INTERVAL:
            g = self.cdf
            assert g is not None and g[0] == 0.0 and abs(g[-1] - 1.0) < 1e-10
            assert np.all(np.diff(g) >= 0.0), "CDF must be nondecreasing"
            assert abs(self.cell_masses.sum() - 1.0) < 1e-10


def lebesgue_interval():
    return MeasureModel(LEBESGUE_INTERVAL)


def lebesgue_torus():
    return MeasureModel(LEBESGUE_TORUS)


def cdf_value(model, t):
    """CDF of an interval model, vectorised, linear inside grid cells."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    if model.variant == LEBESGUE_INTERVAL:
        return t
    n = model.cell_masses.shape[0]
    s = t * n
    i = np.minimum(s.astype(np.int64), n - 1)
    frac = s - i
    g = model.cdf
    return g[i] + frac * (g[i + 1] - g[i])


def _torus_ball_mass(r):
    """Area of a metric ball on the unit torus (exact clipped formula)."""
    r = np.asarray(r, dtype=np.float64)
    area = np.pi * r * r
    clip = r > 0.5
    if np.any(clip):
        rc = np.where(clip, r, 1.0)
        seg = rc * rc * np.arccos(np.minimum(0.5 / rc, 1.0)) - 0.5 * np.sqrt(
            np.maximum(rc * rc - 0.25, 0.0))
        area = np.where(clip, np.pi * rc * rc - 4.0 * seg, area)
    return np.where(r >= _MAX_BALL_RADIUS_TORUS, 1.0, np.minimum(area, 1.0))


def ball_mass(model, x, r):
    """mu(B(x, r)); balls clip at interval ends, wrap on the torus."""
    r = np.asarray(r, dtype=np.float64)
    if model.variant == LEBESGUE_TORUS:
        out = _torus_ball_mass(np.maximum(r, 0.0))
    else:
        x = np.asarray(x, dtype=np.float64)
        out = cdf_value(model, np.minimum(x + r, 1.0)) - cdf_value(
            model, np.maximum(x - r, 0.0))
        out = np.where(r <= 0.0, 0.0, out)
    return out if out.ndim else float(out)


def radius_for_mass(model, x, mass):
    """inf{r >= 0 : mu(B(x, r)) >= mass} (closed form or exact profile)."""
    scalar = np.isscalar(mass) or np.asarray(mass).ndim == 0
    mass = np.atleast_1d(np.asarray(mass, dtype=np.float64))
    if np.any(mass <= 0.0) or np.any(mass > 1.0):
        raise ValueError("mass must lie in (0, 1]")
    if model.variant == LEBESGUE_TORUS:
        r = _torus_radius(mass)
    elif model.variant == LEBESGUE_INTERVAL:
        edge = min(float(x), 1.0 - float(x))
        r = np.where(mass <= 2.0 * edge, 0.5 * mass, mass - edge)
    else:
        r = _profile_invert(model, float(x), mass)
    return float(r[0]) if scalar else r


def radii_for_masses(model, x, masses):
    """Vector of radii for a whole schedule at a fixed point x.

    Lebesgue models are closed-form; grid models invert the piecewise
    linear mass-vs-radius profile at x in one sweep, which agrees with
    per-mass bisection to the profile's own precision. Zero masses map
    to radius zero (the empty open ball).
    """
    masses = np.asarray(masses, dtype=np.float64)
    pos = masses > 0.0
    if np.all(pos):
        return radius_for_mass(model, x, masses)
    out = np.zeros(masses.shape)
    if np.any(pos):
        out[pos] = radius_for_mass(model, x, masses[pos])
    return out


def radius_at_points(model, xs, mass):
    """Radius of the mass-`mass` ball at each of many points (vectorised).

    Closed form for Lebesgue models; 60-step bisection on the grid CDF
    otherwise (radius resolved far below the 1e-10 mass tolerance).
    """
    if mass < 0.0 or mass > 1.0:
        raise ValueError("mass must lie in [0, 1]")
    if mass == 0.0:
        return (0.0 if model.variant == LEBESGUE_TORUS
                else np.zeros(np.shape(xs)))
    if model.variant == LEBESGUE_TORUS:
        return float(_torus_radius(np.array([mass]))[0])
    xs = np.asarray(xs, dtype=np.float64)
    if model.variant == LEBESGUE_INTERVAL:
        edge = np.minimum(xs, 1.0 - xs)
        return np.where(mass <= 2.0 * edge, 0.5 * mass, mass - edge)
    lo = np.zeros(xs.shape)
    hi = np.ones(xs.shape)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        ok = ball_mass(model, xs, mid) >= mass
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


def _torus_radius(mass):
    r = np.sqrt(mass / np.pi)
    big = mass > np.pi / 4.0
    if np.any(big):
        r = r.copy()
        for idx in np.nonzero(big)[0]:
            r[idx] = _bisect_scalar(lambda t: float(_torus_ball_mass(t)),
                                    float(mass[idx]), 0.5,
                                    _MAX_BALL_RADIUS_TORUS)
    return r


def _bisect_scalar(mass_of_r, target, lo, hi):
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mass_of_r(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def _profile_invert(model, x, masses):
    rs, ms = _mass_profile(model, x)
    idx = np.searchsorted(ms, masses, side="left")
    idx = np.clip(idx, 1, len(rs) - 1)
    m0, m1 = ms[idx - 1], ms[idx]
    r0, r1 = rs[idx - 1], rs[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(m1 > m0, (masses - m0) / (m1 - m0), 0.0)
    return r0 + np.clip(frac, 0.0, 1.0) * (r1 - r0)


def _mass_profile(model, x):
    """Breakpoints of r -> mu(B(x, r)): radii where an endpoint crosses a
    grid node. The mass is linear between consecutive breakpoints."""
    n = model.cell_masses.shape[0]
    nodes = np.arange(n + 1) / n
    rs = np.unique(np.concatenate([[0.0], np.abs(nodes - x), [max(x, 1.0 - x)]]))
    ms = ball_mass(model, x, rs)
    return rs, np.maximum.accumulate(ms)


# ---------------------------------------------------------------------------
# Gibbs construction


def build_gibbs(map_spec, potential, grid_level=16, _estimate_error=True):
    """Discretise the transfer operator at 2^grid_level cells, normalise the
    potential to zero pressure, and assemble the invariant measure.

    Raises GibbsBuildError if power iteration fails to converge within
    10^5 sweeps.
    """
    if grid_level > 24:
        raise ValueError("grid level capped at 24")
    if not 1 <= grid_level:
        raise ValueError("grid level must be positive")
    kmat = _transfer_matrix(map_spec, potential, grid_level)
    q, rho = _power_iterate(kmat, "conformal mass")
    u, rho_left = _power_iterate(kmat.T, "eigenfunction")
    if abs(rho - rho_left) > 1e-8 * max(1.0, abs(rho)):
        raise GibbsBuildError(
            f"left/right eigenvalues disagree: {rho} vs {rho_left}")
    potential = potential.shifted(-float(np.log(rho)))

    # eigenvalue of the normalised operator, for the zero-pressure check
    v = q.copy()
    for _ in range(5):
        v = kmat @ v
        s = v.sum()
        v /= s
    eig_residual = abs(s / rho - 1.0)

    # mu = h dnu, cellwise; h scaled so that integral h dnu = 1
    scale = float(u @ q)
    h = u / scale
    mu = h * q
    mu = np.maximum(mu, 0.0)
    mu /= mu.sum()
    cdf = np.concatenate([[0.0], np.cumsum(mu)])
    cdf[-1] = 1.0

    err = 0.0
    if _estimate_error and grid_level >= 2:
        coarse = build_gibbs(map_spec, potential, grid_level - 1,
                             _estimate_error=False)
        # compare at cell midpoints: off-grid for both levels, so the
        # estimate also sees the interpolation error of singular measures
        n = mu.shape[0]
        mids = (np.arange(n) + 0.5) / n
        fine = _interp_cdf(cdf, mids)
        crse = _interp_cdf(coarse.cdf, mids)
        err = float(np.max(np.abs(fine - crse))) + 1e-12
    return MeasureModel(GIBBS_INTERVAL, map=map_spec, potential=potential,
                        grid_level=grid_level, cdf=cdf, cell_masses=mu,
                        h=h, error_bound=err, eig_residual=eig_residual)


def _interp_cdf(g, t):
    n = g.shape[0] - 1
    s = np.clip(t, 0.0, 1.0) * n
    i = np.minimum(s.astype(np.int64), n - 1)
    return g[i] + (s - i) * (g[i + 1] - g[i])


def _transfer_matrix(map_spec, potential, level):
    n = 1 << level
    m = map_spec.branch_count
    edges = np.arange(n + 1) / n
    rows, cols, vals = [], [], []
    for j in range(m):
        d_lo, d_hi = j / m, (j + 1) / m
        i_lo = int(np.floor(d_lo * n))
        i_hi = min(int(np.ceil(d_hi * n)), n) - 1
        i = np.arange(i_lo, i_hi + 1)
        seg_lo = np.maximum(edges[i], d_lo)
        seg_hi = np.minimum(edges[i + 1], d_hi)
        keep = seg_hi > seg_lo
        i, seg_lo, seg_hi = i[keep], seg_lo[keep], seg_hi[keep]
        a = np.asarray(map_spec.branch_T(j, seg_lo), dtype=np.float64)
        b = np.asarray(map_spec.branch_T(j, seg_hi), dtype=np.float64)
        u = np.minimum(a, b)
        v = np.maximum(a, b)
        w = potential.weight_on_branch(map_spec, j, 0.5 * (u + v))
        c0 = np.floor(u * n).astype(np.int64)
        span = int(np.max(np.ceil(v * n).astype(np.int64) - c0)) + 1
        for off in range(span):
            c = c0 + off
            overlap = np.maximum(
                0.0, np.minimum(v, (c + 1) / n) - np.maximum(u, c / n))
            nz = (overlap > 0.0) & (c >= 0) & (c <= n - 1)
            rows.append(i[nz])
            cols.append(c[nz])
            vals.append((w * overlap * n)[nz])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _power_iterate(kmat, what, tol=1e-14, max_iter=100_000):
    n = kmat.shape[0]
    v = np.full(n, 1.0 / n)
    rho = 1.0
    for it in range(max_iter):
        v_new = kmat @ v
        rho = float(v_new.sum())
        if rho <= 0.0 or not np.isfinite(rho):
            raise GibbsBuildError(f"power iteration for {what} degenerated "
                                  f"(eigenvalue {rho}) at sweep {it}")
        v_new /= rho
        delta = float(np.abs(v_new - v).sum())
        v = v_new
        if delta < tol:
            return v, rho
    raise GibbsBuildError(
        f"power iteration for {what} did not converge within {max_iter} "
        f"sweeps (last delta {delta:.3e})")


# ---------------------------------------------------------------------------
# cylinder masses


def cylinder_measure(model, map_spec, word):
    """mu(C_{j_1..j_k}) from the model CDF."""
    if not model.is_interval:
        raise ValueError("cylinder masses need an interval model")
    from .systems import cylinder_interval
    lo, hi = cylinder_interval(map_spec, word)
    return float(cdf_value(model, hi) - cdf_value(model, lo))


def level_endpoints(map_spec, level):
    """Sorted endpoints of all level-k cylinders (m^k + 1 points)."""
    pts = np.array([0.0, 1.0])
    for _ in range(level):
        parts = []
        m = map_spec.branch_count
        for j in range(m):
            img = np.asarray(map_spec.g(j, pts[:-1] if map_spec.signs[j] > 0
                                        else pts[1:]), dtype=np.float64)
            parts.append(np.sort(img) if map_spec.signs[j] < 0 else img)
        pts = np.concatenate(parts + [[1.0]])
    return pts


def level_masses(model, map_spec, level):
    """Masses of all level-k cylinders in word (lexicographic) order."""
    pts = level_endpoints(map_spec, level)
    masses = np.diff(cdf_value(model, pts))
    if any(s < 0 for s in map_spec.signs):
        # lexicographic word order differs from spatial order under
        # decreasing branches; recompute per-word via interval endpoints
        return _level_masses_by_word(model, map_spec, level)
    return masses


def _level_masses_by_word(model, map_spec, level):
    m = map_spec.branch_count
    lo = np.array([0.0])
    hi = np.array([1.0])
    for _ in range(level):
        los, his = [], []
        for j in range(m):
            a = np.asarray(map_spec.g(j, lo), dtype=np.float64)
            b = np.asarray(map_spec.g(j, hi), dtype=np.float64)
            los.append(np.minimum(a, b))
            his.append(np.maximum(a, b))
        lo = np.stack(los, axis=-1).reshape(-1)
        hi = np.stack(his, axis=-1).reshape(-1)
    return cdf_value(model, hi) - cdf_value(model, lo)


def quasi_bernoulli_constant(model, map_spec, total_level, mass_floor=0.0):
    """Smallest C with mu(C_{wv}) in [mu(C_w)mu(C_v)/C, C mu(C_w)mu(C_v)]
    over all word pairs with |w| + |v| <= total_level.

    Pairs whose concatenated cylinder mass falls below mass_floor are
    excluded: masses under the model's resolution error carry no signal.
    """
    cache = {k: np.asarray(level_masses(model, map_spec, k))
             for k in range(1, total_level + 1)}
    m = map_spec.branch_count
    worst_hi = 1.0
    worst_lo = 1.0
    for s in range(2, total_level + 1):
        joint = cache[s]
        for a in range(1, s):
            b = s - a
            grid = joint.reshape(m ** a, m ** b)
            prod = np.outer(cache[a], cache[b])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = grid / prod
            keep = np.isfinite(ratio) & (ratio > 0) & (grid >= mass_floor)
            ratio = ratio[keep]
            if ratio.size:
                worst_hi = max(worst_hi, float(ratio.max()))
                worst_lo = min(worst_lo, float(ratio.min()))
    return max(worst_hi, 1.0 / worst_lo)


def cylinder_decay_fit(model, map_spec, max_level):
    """Fit max cylinder mass <= C * lambda^-k; returns (C, lambda)."""
    ks = np.arange(1, max_level + 1)
    tops = np.array([float(np.max(level_masses(model, map_spec, int(k))))
                     for k in ks])
    slope, intercept = np.polyfit(ks, np.log(tops), 1)
    return float(np.exp(intercept)), float(np.exp(-slope))


# ---------------------------------------------------------------------------
# sampling and regularity probes


def sample_floats(model, rng, n):
    """n points distributed as mu: (n,) for interval models, (n, 2) torus."""
    if model.variant == LEBESGUE_TORUS:
        return rng.random((n, 2))
    if model.variant == LEBESGUE_INTERVAL:
        return rng.random(n)
    u = rng.random(n)
    g = model.cdf
    ncells = model.cell_masses.shape[0]
    idx = np.clip(np.searchsorted(g, u, side="right") - 1, 0, ncells - 1)
    gap = g[idx + 1] - g[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(gap > 0, (u - g[idx]) / gap, 0.5)
    return (idx + frac) / ncells


@dataclass
class RegularityReport:
    """Fitted envelope constants for ball-mass and annulus-mass bounds."""

    frostman_c: float
    frostman_s: float
    annuli_c: float
    annuli_alpha0: float
    r0: float
    samples: int
    degenerate: bool = False


def regularity_probe(model, samples=2000, seed=0, r_range=(1e-4, 0.05)):
    """Fit mu(B(x,r)) <= C r^s and mu(annulus(x,r,eps)) <= C eps^alpha0 by
    an upper-envelope line through per-bin maxima on log-log axes."""
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    xs = sample_floats(model, rng, samples)
    lo, hi = np.log(r_range[0]), np.log(r_range[1])
    rs = np.exp(rng.uniform(lo, hi, samples))
    masses = _mass_at(model, xs, rs)
    c_f, s_f, ok_f = _envelope_fit(np.log(rs), _safe_log(masses))

    # eps and r drawn independently (eps <= r <= r0), so every eps bin
    # sees the full range of r and the envelope has the right slope
    r0 = r_range[1]
    eps = np.exp(rng.uniform(np.log(1e-5), np.log(r0 / 2.0), samples))
    r_ann = rng.uniform(eps, r0)
    ann = _mass_at(model, xs, r_ann + eps) - _mass_at(model, xs, r_ann)
    c_a, a_a, ok_a = _envelope_fit(np.log(eps), _safe_log(ann))
    return RegularityReport(c_f, s_f, c_a, a_a, float(r_range[1]), samples,
                            degenerate=not (ok_f and ok_a))


def _mass_at(model, xs, rs):
    if model.variant == LEBESGUE_TORUS:
        return np.asarray(ball_mass(model, None, rs))
    return np.asarray(ball_mass(model, xs, rs))


def _safe_log(v):
    v = np.asarray(v, dtype=np.float64)
    return np.log(np.maximum(v, 1e-300))


def _envelope_fit(logx, logy, nbins=12):
    good = logy > np.log(1e-250)
    logx, logy = logx[good], logy[good]
    if logx.size < 50:
        return float("nan"), 0.0, False
    edges = np.linspace(logx.min(), logx.max() + 1e-12, nbins + 1)
    which = np.digitize(logx, edges) - 1
    xs, ys = [], []
    for b in range(nbins):
        mask = which == b
        if np.any(mask):
            top = np.argmax(logy[mask])
            xs.append(logx[mask][top])
            ys.append(logy[mask][top])
    if len(xs) < 5:
        return float("nan"), 0.0, False
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(np.exp(intercept)), float(slope), slope > 0


# ---------------------------------------------------------------------------
# binary sidecar


_MAGIC = b"RLABGM01"


def save_model(model, path):
    """Serialise a Gibbs model (versioned header + tables) for reuse."""
    if model.variant != GIBBS_INTERVAL:
        raise ValueError("only Gibbs models are serialised")
    meta = {
        "map_kind": model.map.kind,
        "branch_count": model.map.branch_count,
        "signs": list(model.map.signs),
        "amplitude": model.map.amplitude,
        "potential_kind": model.potential.kind,
        "potential_value": model.potential.value,
        "potential_weights": list(model.potential.weights),
        "potential_offset": model.potential.offset,
        "holder_exponent": model.potential.holder_exponent,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    n = model.cell_masses.shape[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIQdd", 1, model.grid_level, n,
                             model.error_bound, model.eig_residual))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.cdf, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(model.cell_masses, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(model.h, dtype=np.float64).tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a recurrence-lab measure file: {magic!r}")
        version, level, n, err, resid = struct.unpack("<IIQdd", fh.read(32))
        if version != 1:
            raise ValueError(f"unsupported sidecar version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(blob_len).decode())
        cdf = np.frombuffer(fh.read(8 * (n + 1)), dtype=np.float64)
        mu = np.frombuffer(fh.read(8 * n), dtype=np.float64)
        h = np.frombuffer(fh.read(8 * n), dtype=np.float64)
    map_spec = IntervalMapSpec(meta["map_kind"], meta["branch_count"],
                               tuple(meta["signs"]), meta["amplitude"])
    potential = PotentialSpec(meta["potential_kind"], meta["potential_value"],
                              tuple(meta["potential_weights"]),
                              meta["holder_exponent"], True,
                              meta["potential_offset"])
    return MeasureModel(GIBBS_INTERVAL, map=map_spec, potential=potential,
                        grid_level=level, cdf=cdf.copy(), cell_masses=mu.copy(),
                        h=h.copy(), error_bound=err, eig_residual=resid)
