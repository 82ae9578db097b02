# cython: boundscheck=False, wraparound=False, cdivision=True, nonecheck=False
"""Compiled hot loops: exact 64-bit fixed-point orbits and hit counting.

All dynamics run in unsigned 64-bit fractions of 1 (value = word / 2**64),
where integer-matrix and integer-slope maps are exact: wraparound is mod 1.
Distances are converted to float64 only for the comparison against the
target radius, in the same operation order as the numpy fallback, so both
backends produce bit-identical results.
"""

import numpy as np

cimport cython
from libc.stdint cimport uint8_t, uint16_t, int64_t, uint64_t

COMPILED = True

cdef double SCALE = 2.0 ** -64


cdef inline double torus_dist_sq(uint64_t px, uint64_t py,
                                 uint64_t qx, uint64_t qy) nogil:
    cdef uint64_t dx = px - qx
    cdef uint64_t dy = py - qy
    cdef uint64_t mx = 0 - dx
    cdef uint64_t my = 0 - dy
    if mx < dx:
        dx = mx
    if my < dy:
        dy = my
    cdef double fx = <double> dx * SCALE
    cdef double fy = <double> dy * SCALE
    return fx * fx + fy * fy


cdef inline double line_dist(uint64_t p, uint64_t q) nogil:
    cdef uint64_t d
    if p > q:
        d = p - q
    else:
        d = q - p
    return <double> d * SCALE


cdef inline uint64_t mul_hi(uint64_t x, uint64_t m) nogil:
    # high 64 bits of x*m for m < 2**32, via 32-bit split
    cdef uint64_t lo = (x & 0xFFFFFFFFu) * m
    cdef uint64_t hi = (x >> 32) * m + (lo >> 32)
    return hi >> 32


def torus_orbit_hits(uint64_t au, uint64_t bu, uint64_t cu, uint64_t du,
                     uint64_t[::1] x0, uint64_t[::1] y0,
                     uint64_t[::1] px, uint64_t[::1] py,
                     double[::1] rsq,
                     int64_t[::1] hits, int64_t[::1] last_hit,
                     int64_t k_start):
    """Advance every orbit through one chunk of steps, counting returns.

    Step j of the chunk is time k_start + j; a return at time k means
    dist(T^k x, x) < r_k, tested as squared distance < rsq[j].
    """
    cdef Py_ssize_t npts = px.shape[0]
    cdef Py_ssize_t nsteps = rsq.shape[0]
    cdef Py_ssize_t i, j
    cdef uint64_t x, y, nx
    cdef int64_t h, last
    with nogil:
        for i in range(npts):
            x = px[i]
            y = py[i]
            h = hits[i]
            last = last_hit[i]
            for j in range(nsteps):
                nx = au * x + bu * y
                y = cu * x + du * y
                x = nx
                if torus_dist_sq(x, y, x0[i], y0[i]) < rsq[j]:
                    h += 1
                    last = k_start + j
            px[i] = x
            py[i] = y
            hits[i] = h
            last_hit[i] = last


def torus_orbit_hits_flagged(uint64_t au, uint64_t bu, uint64_t cu, uint64_t du,
                             uint64_t[::1] x0, uint64_t[::1] y0,
                             uint64_t[::1] px, uint64_t[::1] py,
                             double[::1] rsq,
                             int64_t[::1] hits, int64_t[::1] last_hit,
                             int64_t k_start,
                             uint8_t[:, ::1] flags):
    """Same as torus_orbit_hits but records a per-step hit flag."""
    cdef Py_ssize_t npts = px.shape[0]
    cdef Py_ssize_t nsteps = rsq.shape[0]
    cdef Py_ssize_t i, j
    cdef uint64_t x, y, nx
    cdef int64_t h, last
    with nogil:
        for i in range(npts):
            x = px[i]
            y = py[i]
            h = hits[i]
            last = last_hit[i]
            for j in range(nsteps):
                nx = au * x + bu * y
                y = cu * x + du * y
                x = nx
                if torus_dist_sq(x, y, x0[i], y0[i]) < rsq[j]:
                    h += 1
                    last = k_start + j
                    flags[i, j] = 1
                else:
                    flags[i, j] = 0
            px[i] = x
            py[i] = y
            hits[i] = h
            last_hit[i] = last


def linear_orbit_hits(uint64_t mult, uint8_t[::1] branch_neg,
                      uint64_t[::1] x0, uint64_t[::1] px,
                      double[:, ::1] radii,
                      int64_t[::1] hits, int64_t[::1] last_hit,
                      int64_t k_start):
    """Chunked orbit of an integer-slope full-branch interval map.

    radii[i, j] is the return radius of point i at time k_start + j;
    branch_neg[j] = 1 marks decreasing branches (value is -m*x mod 1).
    """
    cdef Py_ssize_t npts = px.shape[0]
    cdef Py_ssize_t nsteps = radii.shape[1]
    cdef Py_ssize_t i, j
    cdef uint64_t x, v
    cdef int64_t h, last
    cdef int any_neg = 0
    for j in range(branch_neg.shape[0]):
        if branch_neg[j]:
            any_neg = 1
    with nogil:
        for i in range(npts):
            x = px[i]
            h = hits[i]
            last = last_hit[i]
            for j in range(nsteps):
                v = x * mult
                if any_neg and branch_neg[mul_hi(x, mult)]:
                    v = 0 - v
                x = v
                if line_dist(x, x0[i]) < radii[i, j]:
                    h += 1
                    last = k_start + j
            px[i] = x
            hits[i] = h
            last_hit[i] = last


def linear_orbit_hits_flagged(uint64_t mult, uint8_t[::1] branch_neg,
                              uint64_t[::1] x0, uint64_t[::1] px,
                              double[:, ::1] radii,
                              int64_t[::1] hits, int64_t[::1] last_hit,
                              int64_t k_start,
                              uint8_t[:, ::1] flags):
    cdef Py_ssize_t npts = px.shape[0]
    cdef Py_ssize_t nsteps = radii.shape[1]
    cdef Py_ssize_t i, j
    cdef uint64_t x, v
    cdef int64_t h, last
    cdef int any_neg = 0
    for j in range(branch_neg.shape[0]):
        if branch_neg[j]:
            any_neg = 1
    with nogil:
        for i in range(npts):
            x = px[i]
            h = hits[i]
            last = last_hit[i]
            for j in range(nsteps):
                v = x * mult
                if any_neg and branch_neg[mul_hi(x, mult)]:
                    v = 0 - v
                x = v
                if line_dist(x, x0[i]) < radii[i, j]:
                    h += 1
                    last = k_start + j
                    flags[i, j] = 1
                else:
                    flags[i, j] = 0
            px[i] = x
            hits[i] = h
            last_hit[i] = last


def torus_event_joint(uint64_t au, uint64_t bu, uint64_t cu, uint64_t du,
                      uint64_t[::1] x0, uint64_t[::1] y0,
                      int64_t k, int64_t l,
                      double rsq_k, double rsq_kl,
                      uint8_t[::1] hit_k, uint8_t[::1] hit_kl):
    """Per-sample indicator of a return at time k and (if l > 0) at k+l."""
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t i
    cdef int64_t step
    cdef uint64_t x, y, nx
    with nogil:
        for i in range(n):
            x = x0[i]
            y = y0[i]
            for step in range(k):
                nx = au * x + bu * y
                y = cu * x + du * y
                x = nx
            hit_k[i] = 1 if torus_dist_sq(x, y, x0[i], y0[i]) < rsq_k else 0
            if l > 0:
                for step in range(l):
                    nx = au * x + bu * y
                    y = cu * x + du * y
                    x = nx
                hit_kl[i] = 1 if torus_dist_sq(x, y, x0[i], y0[i]) < rsq_kl else 0


def linear_event_joint(uint64_t mult, uint8_t[::1] branch_neg,
                       uint64_t[::1] x0,
                       int64_t k, int64_t l,
                       double[::1] r_k, double[::1] r_kl,
                       uint8_t[::1] hit_k, uint8_t[::1] hit_kl):
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t i
    cdef int64_t step
    cdef uint64_t x, v
    cdef int any_neg = 0
    for i in range(branch_neg.shape[0]):
        if branch_neg[i]:
            any_neg = 1
    with nogil:
        for i in range(n):
            x = x0[i]
            for step in range(k):
                v = x * mult
                if any_neg and branch_neg[mul_hi(x, mult)]:
                    v = 0 - v
                x = v
            hit_k[i] = 1 if line_dist(x, x0[i]) < r_k[i] else 0
            if l > 0:
                for step in range(l):
                    v = x * mult
                    if any_neg and branch_neg[mul_hi(x, mult)]:
                        v = 0 - v
                    x = v
                hit_kl[i] = 1 if line_dist(x, x0[i]) < r_kl[i] else 0


def torus_window_counts(uint64_t au, uint64_t bu, uint64_t cu, uint64_t du,
                        uint64_t[::1] x0, uint64_t[::1] y0,
                        int64_t win_start, double[::1] rsq_window,
                        int64_t[::1] counts):
    """Count returns with win_start <= k < win_start + len(rsq_window)."""
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t i
    cdef int64_t step, wlen = rsq_window.shape[0]
    cdef uint64_t x, y, nx
    cdef int64_t cnt
    with nogil:
        for i in range(n):
            x = x0[i]
            y = y0[i]
            for step in range(win_start - 1):
                nx = au * x + bu * y
                y = cu * x + du * y
                x = nx
            cnt = 0
            for step in range(wlen):
                nx = au * x + bu * y
                y = cu * x + du * y
                x = nx
                if torus_dist_sq(x, y, x0[i], y0[i]) < rsq_window[step]:
                    cnt += 1
            counts[i] = cnt


def linear_window_counts(uint64_t mult, uint8_t[::1] branch_neg,
                         uint64_t[::1] x0,
                         int64_t win_start, double[:, ::1] r_window,
                         int64_t[::1] counts):
    cdef Py_ssize_t n = x0.shape[0]
    cdef Py_ssize_t i
    cdef int64_t step, wlen = r_window.shape[1]
    cdef uint64_t x, v
    cdef int64_t cnt
    cdef int any_neg = 0
    for i in range(branch_neg.shape[0]):
        if branch_neg[i]:
            any_neg = 1
    with nogil:
        for i in range(n):
            x = x0[i]
            for step in range(win_start - 1):
                v = x * mult
                if any_neg and branch_neg[mul_hi(x, mult)]:
                    v = 0 - v
                x = v
            cnt = 0
            for step in range(wlen):
                v = x * mult
                if any_neg and branch_neg[mul_hi(x, mult)]:
                    v = 0 - v
                x = v
                if line_dist(x, x0[i]) < r_window[i, step]:
                    cnt += 1
            counts[i] = cnt


def torus_iterate(uint64_t au, uint64_t bu, uint64_t cu, uint64_t du,
                  uint64_t x, uint64_t y, int64_t k):
    """Apply the matrix k times to a single fixed-point coordinate pair."""
    cdef uint64_t nx
    cdef int64_t step
    with nogil:
        for step in range(k):
            nx = au * x + bu * y
            y = cu * x + du * y
            x = nx
    return x, y
