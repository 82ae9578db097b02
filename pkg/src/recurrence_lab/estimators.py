"""Monte-Carlo estimators for return-event measures, pair correlations and
block variances, with the inequality bounds they are checked against.

All estimators are deterministic for a fixed seed and independent of the
thread count: sampling is split into fixed-size chunks, chunk c draws from
its own generator seeded by (seed, tag, c), and partial sums merge in
chunk order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .measures import (
    GIBBS_INTERVAL,
    LEBESGUE_TORUS,
    radius_at_points,
    sample_floats,
)
from .systems import TWO64, IntervalMapSpec, TorusAutomorphism

_CHUNK = 1 << 15
_TAG_EVENT, _TAG_PAIR, _TAG_BLOCK = 1, 2, 3


@dataclass(frozen=True)
class IndependentEventsSystem:
    """Synthetic null model: returns at different times are independent
    coin flips with P(hit at k) = M_k. Used to calibrate estimators."""


@dataclass
class EventEstimate:
    k: int
    estimate: float
    stderr: float
    samples: int
    target_mass: float


@dataclass
class PairEstimate:
    k: int
    l: int
    joint: float
    stderr: float
    product: float
    regime: str
    bound_mixing: float
    bound_srt: float
    bound_largel: float


@dataclass
class BlockVarianceEstimate:
    m: int
    n: int
    ratio: float            # None when the window has zero total mass
    stderr: float
    sum_masses: float
    samples: int


@dataclass
class DecayFit:
    rate: float
    constant: float
    residual: float
    at_floor: bool = False

    @property
    def ok(self):
        return (not self.at_floor) and self.rate is not None and self.rate > 0


@dataclass(frozen=True)
class BoundConstants:
    """Fitted constants filling the correlation inequalities; the library
    never assumes values, it fits and then checks stability."""

    C: float = 1.0
    tau: float = 0.5
    lam: float = 2.0
    delta: float = 1.0
    N: float = 0.0


def regime_tag(k, l, sigma):
    """Which of the three (k, l) regimes a pair belongs to."""
    if l <= np.log(k) ** 2:
        return "small-l"
    if k <= sigma * l:
        return "large-l"
    return "mid-l"


# ---------------------------------------------------------------------------
# deterministic chunked sampling


def _chunks(total):
    out = []
    idx = 0
    done = 0
    while done < total:
        size = min(_CHUNK, total - done)
        out.append((idx, size))
        idx += 1
        done += size
    return out


def _chunk_rng(seed, tag, idx):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, idx]))


def _map_chunks(fn, chunks, threads):
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def _draw_initial(system, model, rng, size):
    """Initial conditions for the orbit kernels, distributed as mu."""
    if isinstance(system, TorusAutomorphism):
        pts = rng.integers(0, TWO64, size=(size, 2), dtype=np.uint64)
        return pts[:, 0].copy(), pts[:, 1].copy()
    if system.exact and model.variant != GIBBS_INTERVAL:
        return rng.integers(0, TWO64, size=size, dtype=np.uint64)
    xs = sample_floats(model, rng, size)
    if system.exact:
        return np.minimum((xs * TWO64).round(), TWO64 - 1).astype(np.uint64)
    return xs


def _orbit_hits(system, model, x0, k, l, mass_k, mass_kl):
    """Indicator arrays for a return at time k and (optionally) k + l."""
    size = x0[0].shape[0] if isinstance(x0, tuple) else x0.shape[0]
    hit_k = np.zeros(size, dtype=np.uint8)
    hit_kl = np.zeros(size, dtype=np.uint8)
    if isinstance(system, TorusAutomorphism):
        xs, ys = x0
        r_k = radius_at_points(model, None, mass_k)
        r_kl = radius_at_points(model, None, mass_kl) if l > 0 else 0.0
        kernels.torus_event_joint(
            *(np.uint64(v % TWO64) for v in (system.a, system.b, system.c, system.d)),
            xs, ys, k, l, np.float64(r_k) ** 2, np.float64(r_kl) ** 2,
            hit_k, hit_kl)
        return hit_k, hit_kl
    if system.exact:
        x0f = x0.astype(np.float64) * 2.0 ** -64
        r_k = np.array(radius_at_points(model, x0f, mass_k), dtype=np.float64)
        r_kl = (np.array(radius_at_points(model, x0f, mass_kl), dtype=np.float64)
                if l > 0 else np.zeros(size))
        kernels.linear_event_joint(
            np.uint64(system.branch_count), system.branch_neg(), x0, k, l,
            r_k, r_kl, hit_k, hit_kl)
        return hit_k, hit_kl
    x = x0.copy()
    for _ in range(k):
        x = system.step(x)
    hit_k[:] = np.abs(x - x0) < radius_at_points(model, x0, mass_k)
    if l > 0:
        for _ in range(l):
            x = system.step(x)
        hit_kl[:] = np.abs(x - x0) < radius_at_points(model, x0, mass_kl)
    return hit_k, hit_kl


# ---------------------------------------------------------------------------
# estimators


def estimate_event_measure(system, model, schedule, k, samples, seed,
                           threads=1):
    """Frequency of T^k x landing in B(x, r_k(x)) for x ~ mu, with the
    binomial standard error."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    mass = float(schedule.masses(np.array([k]))[0])
    if mass == 0.0:
        return EventEstimate(k, 0.0, 0.0, samples, 0.0)
    if isinstance(system, IndependentEventsSystem):
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_EVENT, idx)
            return int(np.sum(rng.random(size) < mass))
    else:
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_EVENT, idx)
            x0 = _draw_initial(system, model, rng, size)
            hit, _ = _orbit_hits(system, model, x0, k, 0, mass, 0.0)
            return int(hit.sum())
    total = sum(_map_chunks(task, _chunks(samples), threads))
    p = total / samples
    return EventEstimate(k, p, _binom_se(p, samples), samples, mass)


def estimate_pair_joint(system, model, schedule, k, l, samples, seed,
                        sigma=0.25, constants=None, threads=1):
    """Joint frequency of returns at k and k+l on a shared orbit, with the
    regime tag and the three inequality bounds filled from `constants`."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if k < 1 or l < 1:
        raise ValueError("k and l must be >= 1")
    cons = constants or BoundConstants()
    mass_k = float(schedule.masses(np.array([k]))[0])
    mass_kl = float(schedule.masses(np.array([k + l]))[0])
    if mass_k == 0.0 or mass_kl == 0.0:
        return PairEstimate(k, l, 0.0, 0.0, 0.0, regime_tag(k, l, sigma),
                            *_pair_bounds(cons, k, l, 0.0, 0.0))
    if isinstance(system, IndependentEventsSystem):
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_PAIR, idx)
            a = rng.random(size) < mass_k
            b = rng.random(size) < mass_kl
            return np.array([np.sum(a & b), np.sum(a), np.sum(b)])
    else:
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_PAIR, idx)
            x0 = _draw_initial(system, model, rng, size)
            hit_k, hit_kl = _orbit_hits(system, model, x0, k, l, mass_k, mass_kl)
            return np.array([np.sum(hit_k & hit_kl),
                             np.sum(hit_k), np.sum(hit_kl)])
    joint_n, k_n, kl_n = np.sum(_map_chunks(task, _chunks(samples), threads),
                                axis=0)
    joint = joint_n / samples
    mu_k, mu_kl = k_n / samples, kl_n / samples
    return PairEstimate(k, l, joint, _binom_se(joint, samples), mu_k * mu_kl,
                        regime_tag(k, l, sigma),
                        *_pair_bounds(cons, k, l, mu_k, mu_kl))


def _pair_bounds(cons, k, l, mu_k, mu_kl):
    mixing = mu_k * mu_kl + cons.C * (np.exp(-cons.tau * k) + np.exp(-cons.tau * l))
    srt = (cons.C * mu_k ** (1.0 + cons.delta) * np.log(max(k, 2)) ** cons.N
           + mu_k * cons.lam ** -l)
    largel = (mu_k * mu_kl + cons.C * mu_kl * np.exp(-cons.tau * k)
              + cons.C * np.exp(-cons.tau * l))
    return float(mixing), float(srt), float(largel)


def _binom_se(p, n):
    return float(np.sqrt(max(p * (1.0 - p), 0.0) / n))


def estimate_block_variance(system, model, schedule, m, n, samples, seed,
                            threads=1):
    """Sample variance of the window count sum_{k=m..n} 1(return at k),
    divided by sum_{k=m..n} M_k: the hypothesis ratio of the variance
    lemma behind the error term."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if not 1 <= m <= n or n - m > 10 ** 4:
        raise ValueError("window must satisfy 1 <= m <= n, n - m <= 1e4")
    ks = np.arange(m, n + 1)
    masses = schedule.masses(ks)
    sum_masses = float(np.sum(masses))

    if isinstance(system, IndependentEventsSystem):
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_BLOCK, idx)
            counts = np.sum(rng.random((size, len(ks))) < masses, axis=1)
            return _moment_sums(counts)
    elif isinstance(system, TorusAutomorphism):
        radii = np.asarray([radius_at_points(model, None, float(v))
                            for v in masses])
        rsq = np.ascontiguousarray(radii * radii)
        mat = tuple(np.uint64(v % TWO64)
                    for v in (system.a, system.b, system.c, system.d))

        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_BLOCK, idx)
            xs, ys = _draw_initial(system, model, rng, size)
            counts = np.zeros(size, dtype=np.int64)
            kernels.torus_window_counts(*mat, xs, ys, m, rsq, counts)
            return _moment_sums(counts)
    else:
        def task(chunk):
            idx, size = chunk
            rng = _chunk_rng(seed, _TAG_BLOCK, idx)
            x0 = _draw_initial(system, model, rng, size)
            counts = _interval_window_counts(system, model, x0, m, masses)
            return _moment_sums(counts)

    s0, s1, s2, s3, s4 = np.sum(_map_chunks(task, _chunks(samples), threads),
                                axis=0)
    if sum_masses == 0.0:
        return BlockVarianceEstimate(m, n, None, 0.0, 0.0, samples)
    mean = s1 / s0
    var = (s2 - s0 * mean ** 2) / (s0 - 1)
    # centred fourth moment, for the standard error of the variance
    m4 = (s4 - 4 * mean * s3 + 6 * mean ** 2 * s2 - 3 * s0 * mean ** 4) / s0
    se_var = np.sqrt(max(m4 - var ** 2 * (s0 - 3) / (s0 - 1), 0.0) / s0)
    return BlockVarianceEstimate(m, n, float(var / sum_masses),
                                 float(se_var / sum_masses), sum_masses,
                                 samples)


def _moment_sums(counts):
    c = counts.astype(np.float64)
    return np.array([c.size, c.sum(), (c ** 2).sum(), (c ** 3).sum(),
                     (c ** 4).sum()])


def _interval_window_counts(system, model, x0, m, masses):
    size = x0.shape[0]
    counts = np.zeros(size, dtype=np.int64)
    if system.exact:
        x0f = x0.astype(np.float64) * 2.0 ** -64
        radii = np.empty((size, len(masses)))
        for j, mass in enumerate(masses):
            radii[:, j] = radius_at_points(model, x0f, float(mass))
        kernels.linear_window_counts(np.uint64(system.branch_count),
                                     system.branch_neg(), x0, m,
                                     radii, counts)
        return counts
    x = x0.copy()
    for _ in range(m - 1):
        x = system.step(x)
    for mass in masses:
        x = system.step(x)
        counts += np.abs(x - x0) < radius_at_points(model, x0, float(mass))
    return counts


# ---------------------------------------------------------------------------
# decay fitting


def fit_exponential_decay(points, floor=1e-15):
    """Least squares of log(excess) against separation.

    Excesses at or below the noise floor are excluded; if nothing is left,
    the decay sits below the measurable floor, which is a success marker
    with the rate absent.
    """
    pts = [(float(s), float(e)) for s, e in points]
    kept = [(s, e) for s, e in pts if e > floor]
    if not kept:
        return DecayFit(None, None, None, at_floor=True)
    if len(kept) < 5:
        raise ValueError("need at least 5 points above the noise floor")
    s = np.array([p[0] for p in kept])
    y = np.log([p[1] for p in kept])
    slope, intercept = np.polyfit(s, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * s + intercept)) ** 2)))
    return DecayFit(float(-slope), float(np.exp(intercept)), resid)


def calibrate_constants(system, model, schedule, ks, ls, samples, seed,
                        sigma=0.25, threads=1):
    """Fit BoundConstants from a grid of pair estimates: tau from the decay
    of |joint - product| in min(k, l), lam from the system expansion, C
    from the worst observed ratio against the mixing bound."""
    expansion = (system.lam if isinstance(system, TorusAutomorphism)
                 else getattr(system, "deriv_lo", 2.0))
    pts = []
    pairs = []
    for k in ks:
        for l in ls:
            est = estimate_pair_joint(system, model, schedule, k, l, samples,
                                      seed, sigma=sigma, threads=threads)
            pairs.append(est)
            excess = est.joint - est.product
            pts.append((min(k, l), max(excess, 0.0)))
    floor = max(3.0 * max(p.stderr for p in pairs), 1e-15)
    try:
        fit = fit_exponential_decay(pts, floor=floor)
    except ValueError:
        fit = DecayFit(None, None, None, at_floor=True)
    tau = fit.rate if fit.ok else float(np.log(expansion)) / 2.0
    c_fit = 1.0
    for est, (s, excess) in zip(pairs, pts):
        if excess > floor:
            c_fit = max(c_fit, excess / np.exp(-tau * s))
    return BoundConstants(C=float(c_fit), tau=float(tau),
                          lam=float(expansion), delta=1.0, N=0.0)
