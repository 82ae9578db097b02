"""Hit counts S_n, mass sums Phi(n), and normalised deviations.

A trace iterates one orbit and counts the returns d(T^k x, x) < r_k(x),
where r_k(x) inverts the prescribed target mass M_k. Torus and
integer-slope maps run in the exact fixed-point kernels; smooth interval
maps run as double-precision pseudo-orbits. Radii for a whole schedule
at a fixed x come from one monotone profile sweep instead of per-k
bisection.

The deviation statistic at a checkpoint n is

    D(n) = (S(n) - Phi(n)) / (Phi(n)^(1/2) * log(Phi(n))^(3/2 + eps)),

defined only when Phi(n) > e; a strong Borel-Cantelli law with the
corresponding error term makes |D| stay bounded as n grows.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .measures import LEBESGUE_TORUS, radii_for_masses
from .systems import TWO64, IntervalMapSpec, TorusAutomorphism, TorusPoint

_TORUS_CHUNK = 1 << 18
_INTERVAL_CHUNK = 1 << 12
_FLAGGED_CHUNK = 1 << 13


# ---------------------------------------------------------------------------
# target-mass schedules


@dataclass(frozen=True)
class RadiusSchedule:
    """Nonincreasing target masses M_k in (0, 1].

    decay_certified marks schedules with sup_{k>=3} M_k (log k)^2 finite,
    the decay regime under which the bounded-deviation statement applies.
    """

    kind: str
    c: float = 0.0
    k0: float = 0.0
    gamma: float = 0.0
    table: np.ndarray = None
    monotone_checked: bool = field(default=False, compare=False)
    decay_certified: bool = field(default=False, compare=False)

    def __post_init__(self):
        first = float(self.masses(np.array([1]))[0])
        if not 0.0 <= first <= 1.0:
            raise ValueError(f"M_1 = {first} outside [0, 1]")
        k_max = len(self.table) if self.kind == "table" else 10 ** 7
        ks = np.unique(np.concatenate([
            np.arange(1, min(1000, k_max + 1)),
            np.geomspace(min(1000, k_max), k_max, 200).astype(np.int64)]))
        vals = self.masses(ks)
        if np.any(np.diff(vals) > 1e-15) or np.any(vals < 0.0):
            raise ValueError("schedule must be nonincreasing and nonnegative")
        if self.kind != "table" and np.any(vals <= 0.0):
            raise ValueError("analytic schedules must stay positive")
        object.__setattr__(self, "monotone_checked", True)
        object.__setattr__(self, "decay_certified", self._certify_decay())

    def _certify_decay(self):
        if self.kind == "constant":
            return False
        if self.kind == "table":
            # finite table: envelope checked directly over its range
            k = np.arange(3, len(self.table) + 1)
            return bool(np.all(np.isfinite(self.table[2:] * np.log(k) ** 2)))
        return True  # log-squared, power, harmonic all have finite envelope

    def masses(self, ks):
        """M_k for an int array of times k >= 1."""
        ks = np.asarray(ks)
        if self.kind == "log-squared":
            return self.c / np.log(ks + self.k0) ** 2
        if self.kind == "power":
            return self.c * ks.astype(np.float64) ** -self.gamma
        if self.kind == "harmonic":
            return self.c / ks
        if self.kind == "constant":
            return np.full(ks.shape, self.c, dtype=np.float64)
        if self.kind == "table":
            if np.any(ks > len(self.table)):
                raise ValueError("time beyond custom table length")
            return self.table[ks - 1]
        raise ValueError(f"unknown schedule kind {self.kind!r}")


def log_squared_schedule(c=0.1, k0=10.0):
    return RadiusSchedule("log-squared", c=c, k0=k0)


def power_schedule(c=0.1, gamma=1.5):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return RadiusSchedule("power", c=c, gamma=gamma)


def harmonic_schedule(c=1.0):
    return RadiusSchedule("harmonic", c=c)


def constant_schedule(c):
    return RadiusSchedule("constant", c=c)


def table_schedule(values):
    table = np.asarray(values, dtype=np.float64)
    return RadiusSchedule("table", table=table)


def phi(schedule, n, upto_checkpoints=None):
    """Exact partial sums of M_k via chunked compensated summation.

    Returns Phi(n), or the array of Phi at the given checkpoints.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cps = [n] if upto_checkpoints is None else list(upto_checkpoints)
    out = np.empty(len(cps))
    partial = []
    prev = 0
    for i, c in enumerate(cps):
        for lo in range(prev, c, 1 << 20):
            hi = min(lo + (1 << 20), c)
            ks = np.arange(lo + 1, hi + 1)
            partial.append(math.fsum(schedule.masses(ks)))
        prev = c
        out[i] = math.fsum(partial)
    return float(out[0]) if upto_checkpoints is None else out


# ---------------------------------------------------------------------------
# traces


@dataclass
class RecurrenceTrace:
    """Checkpointed S, Phi and deviations for one initial point."""

    x: tuple
    checkpoints: np.ndarray
    S: np.ndarray
    Phi: np.ndarray
    D: np.ndarray           # nan where Phi <= e
    epsilon: float
    exact: bool             # orbit arithmetic exact (fixed point)?
    last_hit: int = -1      # -1 when the orbit never returned
    hits: list = None       # optional recorded hit times, capped

    def __post_init__(self):
        assert np.all(np.diff(self.S) >= 0)
        assert np.all((0 <= self.S) & (self.S <= self.checkpoints))


def deviation(S, Phi, epsilon):
    """The normalised deviation, nan when Phi <= e."""
    S = np.asarray(S, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = (S - Phi) / (np.sqrt(Phi) * np.log(Phi) ** (1.5 + epsilon))
    return np.where(Phi > np.e, d, np.nan)


def default_checkpoints(n):
    """Geometric spacing x2 from 64 up to n."""
    cps = []
    c = 64
    while c < n:
        cps.append(c)
        c *= 2
    cps.append(n)
    return sorted(set(cps))


def run_trace(system, model, schedule, x, n, checkpoints=None, epsilon=0.5,
              record_hits=False, hit_cap=100_000):
    """Trace a single initial point; see run_traces."""
    return run_traces(system, model, schedule, [x], n, checkpoints=checkpoints,
                      epsilon=epsilon, record_hits=record_hits,
                      hit_cap=hit_cap)[0]


def run_traces(system, model, schedule, xs, n, checkpoints=None, epsilon=0.5,
               record_hits=False, hit_cap=100_000, threads=1):
    """Iterate every orbit once, counting returns d(T^k x, x) < r_k(x).

    xs: TorusPoint / float-pair list for a torus system, floats in [0,1)
    for interval maps. Results are independent of the thread count.
    """
    if not 1 <= n <= 10 ** 8:
        raise ValueError("n must lie in [1, 1e8]")
    if not schedule.monotone_checked:
        raise ValueError("schedule must pass the monotonicity check")
    cps = list(checkpoints) if checkpoints else default_checkpoints(n)
    if cps[-1] != n or cps[0] < 1:
        raise ValueError("checkpoints must end at n and start at >= 1")
    phis = phi(schedule, n, upto_checkpoints=cps)

    if isinstance(system, TorusAutomorphism):
        runner = _TorusRunner(system, model, schedule)
    elif isinstance(system, IntervalMapSpec):
        runner = _IntervalRunner(system, model, schedule)
    else:
        raise TypeError(f"unsupported system {type(system).__name__}")
    x_raw = runner.prepare(xs)
    npts = len(xs)

    task_size = max(1, -(-npts // max(1, 4 * threads))) if threads > 1 else npts
    slices = [slice(i, min(i + task_size, npts)) for i in range(0, npts, task_size)]
    args = [(runner, x_raw, sl, cps, record_hits, hit_cap) for sl in slices]
    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _run_task(*a), args))
    else:
        parts = [_run_task(*a) for a in args]

    traces = []
    for sl, (S_all, last_all, hits_all) in zip(slices, parts):
        for i in range(S_all.shape[0]):
            S = S_all[i]
            traces.append(RecurrenceTrace(
                x=runner.describe(x_raw, sl.start + i),
                checkpoints=np.asarray(cps, dtype=np.int64),
                S=S, Phi=phis.copy(), D=deviation(S, phis, epsilon),
                epsilon=epsilon, exact=runner.exact,
                last_hit=int(last_all[i]),
                hits=hits_all[i] if record_hits else None))
    return traces


def _run_task(runner, x_raw, sl, cps, record_hits, hit_cap):
    return runner.run(x_raw, sl, cps, record_hits, hit_cap)


class _TorusRunner:
    def __init__(self, system, model, schedule):
        if model.variant != LEBESGUE_TORUS:
            raise ValueError("torus traces use the Lebesgue torus model")
        self.system = system
        self.model = model
        self.schedule = schedule
        self.exact = True
        self.mat = tuple(np.uint64(v % TWO64)
                         for v in (system.a, system.b, system.c, system.d))

    def prepare(self, xs):
        pts = []
        for x in xs:
            if not isinstance(x, TorusPoint):
                x = TorusPoint.from_floats(*x)
            pts.append((x.x, x.y))
        arr = np.array(pts, dtype=np.uint64)
        return arr[:, 0].copy(), arr[:, 1].copy()

    def describe(self, x_raw, i):
        return TorusPoint(int(x_raw[0][i]), int(x_raw[1][i])).to_floats()

    def radii_sq(self, ks):
        masses = self.schedule.masses(ks)
        r = radii_for_masses(self.model, None, masses)
        return r * r

    def run(self, x_raw, sl, cps, record_hits, hit_cap):
        x0, y0 = x_raw[0][sl], x_raw[1][sl]
        px, py = x0.copy(), y0.copy()
        npts = x0.shape[0]
        hits = np.zeros(npts, dtype=np.int64)
        last = np.full(npts, -1, dtype=np.int64)
        S_out = np.empty((npts, len(cps)), dtype=np.int64)
        hit_lists = [[] for _ in range(npts)] if record_hits else None
        chunk = _FLAGGED_CHUNK if record_hits else _TORUS_CHUNK
        prev = 0
        au, bu, cu, du = self.mat
        for ci, cp in enumerate(cps):
            for lo in range(prev, cp, chunk):
                hi = min(lo + chunk, cp)
                ks = np.arange(lo + 1, hi + 1, dtype=np.int64)
                rsq = self.radii_sq(ks)
                if record_hits:
                    flags = np.zeros((npts, hi - lo), dtype=np.uint8)
                    kernels.torus_orbit_hits_flagged(
                        au, bu, cu, du, x0, y0, px, py, rsq, hits, last,
                        lo + 1, flags)
                    _collect_hits(flags, lo + 1, hit_lists, hit_cap)
                else:
                    kernels.torus_orbit_hits(au, bu, cu, du, x0, y0, px, py,
                                             rsq, hits, last, lo + 1)
            prev = cp
            S_out[:, ci] = hits
        return S_out, last, hit_lists


class _IntervalRunner:
    def __init__(self, system, model, schedule):
        if not model.is_interval:
            raise ValueError("interval traces need an interval model")
        self.system = system
        self.model = model
        self.schedule = schedule
        self.exact = system.exact

    def prepare(self, xs):
        if self.system.exact:
            out = np.empty(len(xs), dtype=np.uint64)
            for i, x in enumerate(xs):
                out[i] = np.uint64(int(x) % TWO64) if isinstance(x, (int, np.integer)) \
                    else np.uint64(round((float(x) % 1.0) * TWO64) % TWO64)
            return out
        return np.array([float(x) % 1.0 for x in xs], dtype=np.float64)

    def describe(self, x_raw, i):
        if self.system.exact:
            return (float(int(x_raw[i]) * 2.0 ** -64),)
        return (float(x_raw[i]),)

    def run(self, x_raw, sl, cps, record_hits, hit_cap):
        x0 = x_raw[sl]
        npts = x0.shape[0]
        hits = np.zeros(npts, dtype=np.int64)
        last = np.full(npts, -1, dtype=np.int64)
        S_out = np.empty((npts, len(cps)), dtype=np.int64)
        hit_lists = [[] for _ in range(npts)] if record_hits else None
        if self.system.exact:
            x0f = x0.astype(np.float64) * 2.0 ** -64
            px = x0.copy()
        else:
            x0f = x0.copy()
            px = x0.copy()
        neg = self.system.branch_neg()
        mult = np.uint64(self.system.branch_count)
        prev = 0
        for ci, cp in enumerate(cps):
            for lo in range(prev, cp, _INTERVAL_CHUNK):
                hi = min(lo + _INTERVAL_CHUNK, cp)
                ks = np.arange(lo + 1, hi + 1, dtype=np.int64)
                masses = self.schedule.masses(ks)
                radii = np.empty((npts, hi - lo))
                for i in range(npts):
                    radii[i] = radii_for_masses(self.model, float(x0f[i]), masses)
                flags = (np.zeros((npts, hi - lo), dtype=np.uint8)
                         if record_hits else None)
                if self.system.exact:
                    if record_hits:
                        kernels.linear_orbit_hits_flagged(
                            mult, neg, x0, px, radii, hits, last, lo + 1, flags)
                    else:
                        kernels.linear_orbit_hits(mult, neg, x0, px, radii,
                                                  hits, last, lo + 1)
                else:
                    self._smooth_chunk(x0f, px, radii, hits, last, lo + 1, flags)
                if record_hits:
                    _collect_hits(flags, lo + 1, hit_lists, hit_cap)
            prev = cp
            S_out[:, ci] = hits
        return S_out, last, hit_lists

    def _smooth_chunk(self, x0f, px, radii, hits, last, k_start, flags):
        for j in range(radii.shape[1]):
            px[:] = self.system.step(px)
            hit = np.abs(px - x0f) < radii[:, j]
            hits += hit
            last[hit] = k_start + j
            if flags is not None:
                flags[:, j] = hit


def _collect_hits(flags, k_start, hit_lists, cap):
    rows, cols = np.nonzero(flags)
    for r, c in zip(rows.tolist(), cols.tolist()):
        if len(hit_lists[r]) < cap:
            hit_lists[r].append(k_start + c)


def run_trace_slow(system, model, schedule, x, n, checkpoints=None,
                   epsilon=0.5):
    """Reference path: re-iterates step by step and re-inverts the radius
    at every k with no caching or sweeping. Matches run_trace exactly."""
    from .measures import radius_for_mass
    from .systems import step_torus

    cps = list(checkpoints) if checkpoints else default_checkpoints(n)
    phis = phi(schedule, n, upto_checkpoints=cps)
    S_out = np.empty(len(cps), dtype=np.int64)
    scale = 2.0 ** -64

    if isinstance(system, TorusAutomorphism):
        p0 = x if isinstance(x, TorusPoint) else TorusPoint.from_floats(*x)
        p = p0
        exact = True
    else:
        exact = system.exact
        if exact:
            xu = np.uint64(round((float(x) % 1.0) * TWO64) % TWO64)
            x0f = float(xu) * scale
        else:
            x0f = float(x) % 1.0
        cur = xu if exact else x0f
    s = 0
    last = -1
    ci = 0
    for k in range(1, n + 1):
        m_k = float(schedule.masses(np.array([k]))[0])
        if isinstance(system, TorusAutomorphism):
            p = step_torus(system, p)
            r = radius_for_mass(model, None, m_k)
            dx = (p.x - p0.x) % TWO64
            dy = (p.y - p0.y) % TWO64
            fx = np.float64(min(dx, TWO64 - dx)) * scale
            fy = np.float64(min(dy, TWO64 - dy)) * scale
            hit = fx * fx + fy * fy < np.float64(r) * np.float64(r)
        else:
            if exact:
                j = (int(cur) * system.branch_count) >> 64
                v = (int(cur) * system.branch_count) % TWO64
                if system.signs[j] < 0:
                    v = (-v) % TWO64
                cur = v
                d = np.float64(abs(int(cur) - int(xu))) * scale
                xf = x0f
            else:
                cur = float(system.step(cur))
                d = abs(cur - x0f)
                xf = x0f
            r = radius_for_mass(model, xf, m_k)
            hit = d < r
        if hit:
            s += 1
            last = k
        if k == cps[ci]:
            S_out[ci] = s
            ci += 1
    return RecurrenceTrace(
        x=(p0.to_floats() if isinstance(system, TorusAutomorphism) else (x0f,)),
        checkpoints=np.asarray(cps, dtype=np.int64), S=S_out, Phi=phis,
        D=deviation(S_out, phis, epsilon), epsilon=epsilon, exact=exact,
        last_hit=last)


# ---------------------------------------------------------------------------
# deviation profiles


@dataclass
class ProfileRow:
    n: int
    phi: float
    epsilon: float
    median: float
    q05: float
    q25: float
    q75: float
    q95: float


@dataclass
class DeviationProfile:
    rows: list
    divergent: bool          # Phi passed the threshold within the horizon
    bounded: dict            # per epsilon: 95th pct stayed within 2x, or None
    phi_threshold: float


def deviation_profile(traces, epsilons=(0.5, 0.1), phi_threshold=20.0):
    """Quantiles of |D| across traces per checkpoint, plus the bounded flag:
    the 95th percentile of |D| at the last checkpoint must stay within 2x
    of its value at the first checkpoint past Phi > phi_threshold."""
    if len(traces) < 2:
        raise ValueError("need at least two traces")
    cps = traces[0].checkpoints
    for t in traces[1:]:
        if not np.array_equal(t.checkpoints, cps):
            raise ValueError("traces must share checkpoints")
    phis = traces[0].Phi
    S = np.stack([t.S for t in traces])
    rows = []
    bounded = {}
    start = np.argmax(phis > phi_threshold) if np.any(phis > phi_threshold) else None
    divergent = start is not None
    for eps in epsilons:
        absd = np.abs(deviation(S, phis[None, :], eps))
        q95_series = []
        for ci, n in enumerate(cps):
            col = absd[:, ci]
            col = col[np.isfinite(col)]
            if col.size == 0:
                q95_series.append(np.nan)
                continue
            qs = np.quantile(col, [0.05, 0.25, 0.5, 0.75, 0.95])
            rows.append(ProfileRow(int(n), float(phis[ci]), eps,
                                   float(qs[2]), float(qs[0]), float(qs[1]),
                                   float(qs[3]), float(qs[4])))
            q95_series.append(float(qs[4]))
        if divergent and np.isfinite(q95_series[start]) and q95_series[start] > 0:
            bounded[eps] = q95_series[-1] <= 2.0 * q95_series[start]
        else:
            bounded[eps] = None
    return DeviationProfile(rows, divergent, bounded, phi_threshold)
