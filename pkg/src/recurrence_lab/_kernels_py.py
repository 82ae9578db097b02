"""Pure-numpy fallback for the compiled kernels.

Semantics are bit-identical to the Cython module: orbits advance in
unsigned 64-bit wraparound arithmetic (exact mod 1) and distances are
formed with the same float64 operation order. Loops run over time steps
with every point/sample handled vectorially, so throughput is acceptable
when the caller batches points; the compiled module is preferred.
"""

import numpy as np

COMPILED = False

_SCALE = 2.0 ** -64
_U32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _torus_dist_sq(px, py, qx, qy):
    dx = px - qx
    dy = py - qy
    dx = np.minimum(dx, np.uint64(0) - dx)
    dy = np.minimum(dy, np.uint64(0) - dy)
    fx = dx.astype(np.float64) * _SCALE
    fy = dy.astype(np.float64) * _SCALE
    return fx * fx + fy * fy


def _line_dist(p, q):
    d = np.where(p > q, p - q, q - p)
    return d.astype(np.float64) * _SCALE


def _branch_index(x, mult):
    # floor(m * x) for x a 64-bit fraction: high word of x*m, m < 2**32
    lo = (x & _U32) * mult
    hi = (x >> _S32) * mult + (lo >> _S32)
    return (hi >> _S32).astype(np.int64)


def _linear_step(x, mult, branch_neg, any_neg):
    v = x * mult
    if any_neg:
        neg = branch_neg[_branch_index(x, mult)].astype(bool)
        v = np.where(neg, np.uint64(0) - v, v)
    return v


def torus_orbit_hits(au, bu, cu, du, x0, y0, px, py, rsq,
                     hits, last_hit, k_start, flags=None):
    au, bu, cu, du = (np.uint64(v) for v in (au, bu, cu, du))
    x, y = px.copy(), py.copy()
    for j in range(rsq.shape[0]):
        nx = au * x + bu * y
        y = cu * x + du * y
        x = nx
        hit = _torus_dist_sq(x, y, x0, y0) < rsq[j]
        hits += hit
        last_hit[hit] = k_start + j
        if flags is not None:
            flags[:, j] = hit
    px[:] = x
    py[:] = y


def torus_orbit_hits_flagged(au, bu, cu, du, x0, y0, px, py, rsq,
                             hits, last_hit, k_start, flags):
    torus_orbit_hits(au, bu, cu, du, x0, y0, px, py, rsq,
                     hits, last_hit, k_start, flags)


def linear_orbit_hits(mult, branch_neg, x0, px, radii,
                      hits, last_hit, k_start, flags=None):
    mult = np.uint64(mult)
    any_neg = bool(branch_neg.any())
    x = px.copy()
    for j in range(radii.shape[1]):
        x = _linear_step(x, mult, branch_neg, any_neg)
        hit = _line_dist(x, x0) < radii[:, j]
        hits += hit
        last_hit[hit] = k_start + j
        if flags is not None:
            flags[:, j] = hit
    px[:] = x


def linear_orbit_hits_flagged(mult, branch_neg, x0, px, radii,
                              hits, last_hit, k_start, flags):
    linear_orbit_hits(mult, branch_neg, x0, px, radii,
                      hits, last_hit, k_start, flags)


def torus_event_joint(au, bu, cu, du, x0, y0, k, l, rsq_k, rsq_kl,
                      hit_k, hit_kl):
    au, bu, cu, du = (np.uint64(v) for v in (au, bu, cu, du))
    x, y = x0.copy(), y0.copy()
    for _ in range(k):
        nx = au * x + bu * y
        y = cu * x + du * y
        x = nx
    hit_k[:] = _torus_dist_sq(x, y, x0, y0) < rsq_k
    if l > 0:
        for _ in range(l):
            nx = au * x + bu * y
            y = cu * x + du * y
            x = nx
        hit_kl[:] = _torus_dist_sq(x, y, x0, y0) < rsq_kl


def linear_event_joint(mult, branch_neg, x0, k, l, r_k, r_kl,
                       hit_k, hit_kl):
    mult = np.uint64(mult)
    any_neg = bool(branch_neg.any())
    x = x0.copy()
    for _ in range(k):
        x = _linear_step(x, mult, branch_neg, any_neg)
    hit_k[:] = _line_dist(x, x0) < r_k
    if l > 0:
        for _ in range(l):
            x = _linear_step(x, mult, branch_neg, any_neg)
        hit_kl[:] = _line_dist(x, x0) < r_kl


def torus_window_counts(au, bu, cu, du, x0, y0, win_start, rsq_window,
                        counts):
    au, bu, cu, du = (np.uint64(v) for v in (au, bu, cu, du))
    x, y = x0.copy(), y0.copy()
    for _ in range(win_start - 1):
        nx = au * x + bu * y
        y = cu * x + du * y
        x = nx
    counts[:] = 0
    for j in range(rsq_window.shape[0]):
        nx = au * x + bu * y
        y = cu * x + du * y
        x = nx
        counts += _torus_dist_sq(x, y, x0, y0) < rsq_window[j]


def linear_window_counts(mult, branch_neg, x0, win_start, r_window, counts):
    mult = np.uint64(mult)
    any_neg = bool(branch_neg.any())
    x = x0.copy()
    for _ in range(win_start - 1):
        x = _linear_step(x, mult, branch_neg, any_neg)
    counts[:] = 0
    for j in range(r_window.shape[1]):
        x = _linear_step(x, mult, branch_neg, any_neg)
        counts += _line_dist(x, x0) < r_window[:, j]


def torus_iterate(au, bu, cu, du, x, y, k):
    m = 1 << 64
    for _ in range(k):
        x, y = (au * x + bu * y) % m, (cu * x + du * y) % m
    return x, y
