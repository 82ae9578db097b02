"""Dynamical systems: hyperbolic toral automorphisms and expanding interval maps.

Torus dynamics run exactly on 64-bit fixed-point fractions (an integer
matrix mod 1 is wraparound arithmetic), so orbits of x -> Ax mod 1 carry
no floating error at all. The discretised map is a permutation of the
2^-64 grid whose cycle structure has astronomically long periods (the
order of A modulo 2^64 is on the scale of 3 * 2^62 for the cat map), far
beyond any experiment horizon used here, so fixed-point orbits behave as
genuine orbits of the continuous system.

Interval maps come in two flavours: integer-slope full-branch maps, which
are exact in the same fixed-point sense, and a smooth perturbed family
whose orbits are double-precision pseudo-orbits (all reported recurrence
statistics for smooth maps are statistics of the pseudo-orbit).
"""

from dataclasses import dataclass
from fractions import Fraction
from math import gcd, isqrt

import numpy as np

TWO64 = 1 << 64
_SCALE = 2.0 ** -64


# ---------------------------------------------------------------------------
# exact quadratic-surd arithmetic (p + q*sqrt(disc)) / r


@dataclass(frozen=True)
class QuadraticSurd:
    """Exact element (p + q*sqrt(disc))/r of a real quadratic field.

    Used for eigenvalues and eigendirections of 2x2 integer matrices so
    that expressions like lambda^k - 1 carry no accumulated float drift.
    """

    p: int
    q: int
    r: int
    disc: int

    def __post_init__(self):
        if self.r == 0:
            raise ZeroDivisionError("surd with zero denominator")
        if self.disc < 0:
            raise ValueError("complex surd not supported")
        p, q, r = self.p, self.q, self.r
        if r < 0:
            p, q, r = -p, -q, -r
        g = gcd(gcd(abs(p), abs(q)), r)
        if g > 1:
            p, q, r = p // g, q // g, r // g
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @classmethod
    def integer(cls, n, disc):
        return cls(n, 0, 1, disc)

    def _check(self, other):
        if self.disc != other.disc:
            raise ValueError("surds from different fields")

    def __add__(self, other):
        if isinstance(other, int):
            other = QuadraticSurd.integer(other, self.disc)
        self._check(other)
        return QuadraticSurd(self.p * other.r + other.p * self.r,
                             self.q * other.r + other.q * self.r,
                             self.r * other.r, self.disc)

    def __neg__(self):
        return QuadraticSurd(-self.p, -self.q, self.r, self.disc)

    def __sub__(self, other):
        if isinstance(other, int):
            other = QuadraticSurd.integer(other, self.disc)
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, int):
            other = QuadraticSurd.integer(other, self.disc)
        self._check(other)
        return QuadraticSurd(self.p * other.p + self.q * other.q * self.disc,
                             self.p * other.q + self.q * other.p,
                             self.r * other.r, self.disc)

    def inverse(self):
        # conjugate / norm
        norm_num = self.p * self.p - self.q * self.q * self.disc
        if norm_num == 0:
            raise ZeroDivisionError("surd has zero norm")
        return QuadraticSurd(self.p * self.r, -self.q * self.r,
                             norm_num, self.disc)

    def __truediv__(self, other):
        if isinstance(other, int):
            other = QuadraticSurd.integer(other, self.disc)
        return self * other.inverse()

    def sign(self):
        p, q = self.p, self.q
        if q == 0:
            s = (p > 0) - (p < 0)
        elif p == 0:
            s = (q > 0) - (q < 0)
        elif p > 0 and q > 0:
            s = 1
        elif p < 0 and q < 0:
            s = -1
        else:
            # compare p^2 with q^2*disc; sign decided by the larger term
            s = 1 if (p > 0) == (p * p > q * q * self.disc) else -1
        return s * ((self.r > 0) - (self.r < 0))

    def __float__(self):
        # split at 2^-200 precision via integer sqrt, then round once
        shift = 1 << 200
        root = isqrt(self.disc * shift * shift)
        num = self.p * shift + self.q * root
        return num / (self.r * shift)

    def abs(self):
        return self if self.sign() >= 0 else -self


# ---------------------------------------------------------------------------
# torus automorphisms


@dataclass(frozen=True)
class TorusPoint:
    """Point of T^2 stored as unsigned 64-bit fractions of 1."""

    x: int
    y: int

    def __post_init__(self):
        object.__setattr__(self, "x", self.x % TWO64)
        object.__setattr__(self, "y", self.y % TWO64)

    @classmethod
    def from_floats(cls, x, y):
        return cls(round((x % 1.0) * TWO64), round((y % 1.0) * TWO64))

    @classmethod
    def from_fractions(cls, fx, fy):
        fx, fy = Fraction(fx) % 1, Fraction(fy) % 1
        if (TWO64 % fx.denominator) or (TWO64 % fy.denominator):
            raise ValueError("coordinates not representable on the 2^-64 grid")
        return cls(int(fx * TWO64), int(fy * TWO64))

    def to_floats(self):
        return self.x * _SCALE, self.y * _SCALE


@dataclass(frozen=True)
class TorusAutomorphism:
    """Integer matrix [[a, b], [c, d]] with |det| = 1 and no eigenvalue on
    the unit circle, acting on T^2 by x -> Ax mod 1."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if det not in (1, -1):
            raise ValueError(f"matrix must have determinant +-1, got {det}")
        t = self.a + self.d
        # char. poly x^2 - t x + det: unit-circle eigenvalues occur exactly
        # when det=+1 and |t| <= 2, or det=-1 and t = 0
        if det == 1 and abs(t) <= 2:
            raise ValueError("matrix has an eigenvalue on the unit circle")
        if det == -1 and t == 0:
            raise ValueError("matrix has eigenvalues +-1")

    @property
    def det(self):
        return self.a * self.d - self.b * self.c

    @property
    def trace(self):
        return self.a + self.d

    @property
    def disc(self):
        return self.trace * self.trace - 4 * self.det

    def matrix(self):
        return ((self.a, self.b), (self.c, self.d))

    def matrix_power(self, k):
        """Exact integer entries of A^k (k >= 0)."""
        m = ((1, 0), (0, 1))
        base = self.matrix()
        while k:
            if k & 1:
                m = _matmul2(m, base)
            base = _matmul2(base, base)
            k >>= 1
        return m

    def eigenvalue(self, unstable=True):
        """Exact eigenvalue (t +- sqrt(disc))/2 in the field Q(sqrt(disc))."""
        s = 1 if unstable == (self.trace >= 0) else -1
        lam = QuadraticSurd(self.trace, s, 2, self.disc)
        if not unstable and abs(float(lam)) > 1.0:
            lam = QuadraticSurd(self.trace, -s, 2, self.disc)
        return lam

    def eigenvalue_power(self, k, unstable=True):
        """lambda^k as an exact surd, from the trace of A^k."""
        mk = self.matrix_power(k)
        tk = mk[0][0] + mk[1][1]
        detk = self.det ** k
        disc_k = tk * tk - 4 * detk
        m = isqrt(disc_k // self.disc)
        if m * m * self.disc != disc_k:
            raise ArithmeticError("discriminant scaling failed")
        lam_k = QuadraticSurd(tk, m, 2, self.disc)
        alt = QuadraticSurd(tk, -m, 2, self.disc)
        want_big = unstable
        if (abs(float(lam_k)) > 1.0) != want_big:
            lam_k = alt
        return lam_k

    @property
    def lam(self):
        """Spectral radius (the expansion rate), as a float > 1."""
        return abs(float(self.eigenvalue(unstable=True)))

    def eigenvector(self, unstable=True):
        """Unit eigenvector as floats, computed from exact surd components."""
        lam = self.eigenvalue(unstable)
        if self.b != 0:
            vx, vy = float(QuadraticSurd.integer(self.b, self.disc)), float(lam - self.a)
        elif self.c != 0:
            vx, vy = float(lam - self.d), float(self.c)
        else:
            # diagonal integer matrix with |det|=1 cannot be hyperbolic
            raise AssertionError("unreachable for hyperbolic matrices")
        n = float(np.hypot(vx, vy))
        return np.array([vx / n, vy / n])

    def eigenbasis(self):
        """Columns [stable, unstable] unit directions."""
        return np.column_stack([self.eigenvector(False), self.eigenvector(True)])


def _matmul2(m, n):
    return (
        (m[0][0] * n[0][0] + m[0][1] * n[1][0], m[0][0] * n[0][1] + m[0][1] * n[1][1]),
        (m[1][0] * n[0][0] + m[1][1] * n[1][0], m[1][0] * n[0][1] + m[1][1] * n[1][1]),
    )


def cat_map():
    """The standard hyperbolic example [[2, 1], [1, 1]]."""
    return TorusAutomorphism(2, 1, 1, 1)


def step_torus(system, p):
    """One exact step (a x + b y mod 1, c x + d y mod 1) in fixed point."""
    return TorusPoint((system.a * p.x + system.b * p.y) % TWO64,
                      (system.c * p.x + system.d * p.y) % TWO64)


def torus_distance(p, q):
    """Quotient Euclidean metric on T^2: min over lattice shifts of |p-q+v|.

    Accepts TorusPoint pairs (exact deltas) or float coordinate pairs.
    """
    if isinstance(p, TorusPoint):
        dx = (p.x - q.x) % TWO64
        dy = (p.y - q.y) % TWO64
        dx = min(dx, TWO64 - dx) * _SCALE
        dy = min(dy, TWO64 - dy) * _SCALE
    else:
        dx = abs(p[0] - q[0]) % 1.0
        dy = abs(p[1] - q[1]) % 1.0
        dx = min(dx, 1.0 - dx)
        dy = min(dy, 1.0 - dy)
    return float(np.hypot(dx, dy))


# ---------------------------------------------------------------------------
# periodic points of A^k via exact integer diagonalisation


def _diagonalize_integer_matrix(m):
    """Return unimodular U, V and diagonal D with D = U @ M @ V (exact)."""
    m = [list(row) for row in m]
    u = [[1, 0], [0, 1]]
    v = [[1, 0], [0, 1]]

    def clear_below(mat, left):
        a, c = mat[0][0], mat[1][0]
        if c == 0:
            return
        if a == 0:
            mat[0], mat[1] = mat[1], mat[0]
            left[0], left[1] = left[1], left[0]
            return
        if c % a == 0:
            q = c // a
            mat[1] = [mat[1][j] - q * mat[0][j] for j in range(2)]
            left[1] = [left[1][j] - q * left[0][j] for j in range(2)]
            return
        g, s, t = _xgcd(a, c)
        r0 = [s * mat[0][j] + t * mat[1][j] for j in range(2)]
        r1 = [(-c // g) * mat[0][j] + (a // g) * mat[1][j] for j in range(2)]
        mat[0], mat[1] = r0, r1
        l0 = [s * left[0][j] + t * left[1][j] for j in range(2)]
        l1 = [(-c // g) * left[0][j] + (a // g) * left[1][j] for j in range(2)]
        left[0], left[1] = l0, l1

    def clear_right(mat, right):
        a, b = mat[0][0], mat[0][1]
        if b == 0:
            return
        if a == 0:
            for row in (mat[0], mat[1], right[0], right[1]):
                row[0], row[1] = row[1], row[0]
            return
        if b % a == 0:
            q = b // a
            for row in (mat[0], mat[1], right[0], right[1]):
                row[1] -= q * row[0]
            return
        g, s, t = _xgcd(a, b)
        for row in (mat[0], mat[1], right[0], right[1]):
            c0 = s * row[0] + t * row[1]
            c1 = (-b // g) * row[0] + (a // g) * row[1]
            row[0], row[1] = c0, c1

    for _ in range(64):
        if m[1][0] == 0 and m[0][1] == 0:
            break
        clear_below(m, u)
        clear_right(m, v)
    assert m[1][0] == 0 and m[0][1] == 0, "diagonalisation did not terminate"
    # positive diagonal
    for i in range(2):
        if m[i][i] < 0:
            m[i][i] = -m[i][i]
            for j in range(2):
                u[i][j] = -u[i][j]
    return u, (m[0][0], m[1][1]), v


def _xgcd(a, b):
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        qt = old_r // r
        old_r, r = r, old_r - qt * r
        old_s, s = s, old_s - qt * s
        old_t, t = t, old_t - qt * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


MAX_PERIODIC_ENTRY = 1 << 62


def periodic_points_torus(system, k):
    """All rational fixed points of A^k on T^2, as Fraction coordinate pairs.

    Solves (A^k - I)x in Z^2 by exact integer diagonalisation; the count
    always equals |det(A^k - I)|. Rejects k whose matrix powers leave the
    64-bit range the fixed-point kernels rely on.
    """
    if k < 1:
        raise ValueError("period must be >= 1")
    mk = system.matrix_power(k)
    if max(abs(e) for row in mk for e in row) >= MAX_PERIODIC_ENTRY:
        raise OverflowError(f"entries of A^{k} exceed the supported 64-bit range")
    m = ((mk[0][0] - 1, mk[0][1]), (mk[1][0], mk[1][1] - 1))
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    assert det != 0, "A^k - I singular; matrix not hyperbolic"
    _, (d1, d2), v = _diagonalize_integer_matrix(m)
    points = []
    for i in range(d1):
        for j in range(d2):
            w1 = Fraction(i, d1)
            w2 = Fraction(j, d2)
            x = (v[0][0] * w1 + v[0][1] * w2) % 1
            y = (v[1][0] * w1 + v[1][1] * w2) % 1
            points.append((x, y))
    points.sort()
    assert len(points) == abs(det)
    return points


def periodic_point_count(system, k):
    """|det(A^k - I)| without enumerating."""
    mk = system.matrix_power(k)
    m00, m01 = mk[0][0] - 1, mk[0][1]
    m10, m11 = mk[1][0], mk[1][1] - 1
    return abs(m00 * m11 - m01 * m10)


# ---------------------------------------------------------------------------
# interval maps


LINEAR_KIND = "piecewise-linear-exact"
SMOOTH_KIND = "smooth-float"


@dataclass(frozen=True)
class IntervalMapSpec:
    """Full-branch expanding map of [0, 1] with equal-width branches.

    Two families are supported:

    * kind="piecewise-linear-exact": T(x) = +-(m x) mod 1 per branch, slope
      sign per branch in `signs`; exact in 64-bit fixed point.
    * kind="smooth-float": inverse branches g_j(y) = (j + y + a sin(pi y))/m,
      a > 0 small; double-precision pseudo-orbits.

    Branch domains are C_j = [j/m, (j+1)/m), half-open (right-continuity
    resolves endpoint membership ties).
    """

    kind: str
    branch_count: int
    signs: tuple = ()
    amplitude: float = 0.0

    def __post_init__(self):
        m = self.branch_count
        if m < 2:
            raise ValueError("need at least two branches")
        if self.kind == LINEAR_KIND:
            if not self.signs:
                object.__setattr__(self, "signs", (1,) * m)
            if len(self.signs) != m or any(s not in (1, -1) for s in self.signs):
                raise ValueError("signs must be +-1 per branch")
            if m < 3:
                raise ValueError("expansion |T'| >= 3 requires slope >= 3")
        elif self.kind == SMOOTH_KIND:
            a = self.amplitude
            if not 0.0 < a < 1.0 / np.pi:
                raise ValueError("amplitude must lie in (0, 1/pi)")
            object.__setattr__(self, "signs", (1,) * m)
            if self.deriv_lo < 3.0:
                raise ValueError("derivative lower bound below 3")
        else:
            raise ValueError(f"unknown map kind {self.kind!r}")

    @property
    def deriv_lo(self):
        if self.kind == LINEAR_KIND:
            return float(self.branch_count)
        return self.branch_count / (1.0 + self.amplitude * np.pi)

    @property
    def deriv_hi(self):
        """The constant D with |T'| <= D."""
        if self.kind == LINEAR_KIND:
            return float(self.branch_count)
        return self.branch_count / (1.0 - self.amplitude * np.pi)

    @property
    def exact(self):
        return self.kind == LINEAR_KIND

    def branch_neg(self):
        """uint8 mask of decreasing branches, for the kernels."""
        return np.array([1 if s < 0 else 0 for s in self.signs], dtype=np.uint8)

    # --- inverse branches -------------------------------------------------

    def g(self, j, y):
        """Inverse branch g_j: [0,1] -> closure(C_j), vectorised over y."""
        y = np.asarray(y, dtype=np.float64)
        m = self.branch_count
        if self.kind == LINEAR_KIND:
            if self.signs[j] > 0:
                return (j + y) / m
            return (j + 1 - y) / m
        return (j + y + self.amplitude * np.sin(np.pi * y)) / m

    def g_prime(self, j, y):
        y = np.asarray(y, dtype=np.float64)
        m = self.branch_count
        if self.kind == LINEAR_KIND:
            return np.full_like(y, self.signs[j] / m)
        return (1.0 + self.amplitude * np.pi * np.cos(np.pi * y)) / m

    # --- forward map ------------------------------------------------------

    def branch_of(self, x):
        x = np.asarray(x, dtype=np.float64)
        j = np.floor(x * self.branch_count).astype(np.int64)
        return np.clip(j, 0, self.branch_count - 1)

    def branch_T(self, j, x, newton_tol=1e-14):
        """T restricted to branch j (valid for x in closure(C_j))."""
        x = np.asarray(x, dtype=np.float64)
        m = self.branch_count
        if self.kind == LINEAR_KIND:
            s = np.array(self.signs)[np.asarray(j)]
            return np.where(s > 0, m * x - j, (j + 1) - m * x)
        # solve g_j(y) = x for y via monotone Newton with bisection safeguard
        j = np.asarray(j)
        target = m * x - j  # y + a sin(pi y) = target, target in [0, 1]
        y = np.clip(np.asarray(target, dtype=np.float64).copy(), 0.0, 1.0)
        a = self.amplitude
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        for _ in range(60):
            f = y + a * np.sin(np.pi * y) - target
            lo = np.where(f <= 0, y, lo)
            hi = np.where(f > 0, y, hi)
            fp = 1.0 + a * np.pi * np.cos(np.pi * y)
            step = f / fp
            y_new = y - step
            bad = (y_new < lo) | (y_new > hi)
            y_new = np.where(bad, 0.5 * (lo + hi), y_new)
            done = np.all(np.abs(step) < newton_tol)
            y = y_new
            if done:
                break
        return y

    def step(self, x):
        """T(x), branch located by right-continuity."""
        scalar = np.isscalar(x)
        x = np.asarray(x, dtype=np.float64)
        j = self.branch_of(x)
        out = self.branch_T(j, x)
        return float(out) if scalar else out


def linear_map(m, signs=None):
    """Integer-slope full-branch map; signs of +-1 select branch orientation."""
    return IntervalMapSpec(LINEAR_KIND, m, tuple(signs) if signs else ())


def perturbed_map(m=5, amplitude=0.1):
    """Smooth full-branch map with inverse branches (j + y + a sin(pi y))/m."""
    return IntervalMapSpec(SMOOTH_KIND, m, amplitude=amplitude)


def step_interval(map_spec, x):
    """One forward step of the interval map (float pseudo-orbit for smooth)."""
    return map_spec.step(x)


def interval_orbit_u64(map_spec, x_u64, k):
    """Exact fixed-point orbit value after k steps (linear maps only)."""
    if not map_spec.exact:
        raise ValueError("fixed-point orbits require an integer-slope map")
    m = map_spec.branch_count
    neg = map_spec.branch_neg()
    x = int(x_u64) % TWO64
    for _ in range(k):
        j = (x * m) >> 64
        v = (x * m) % TWO64
        if neg[j]:
            v = (-v) % TWO64
        x = v
    return x


# ---------------------------------------------------------------------------
# cylinders


def validate_word(map_spec, word):
    word = tuple(int(j) for j in word)
    if not word:
        raise ValueError("empty cylinder word")
    if any(j < 0 or j >= map_spec.branch_count for j in word):
        raise ValueError("digit outside branch range")
    return word


def cylinder_interval(map_spec, word):
    """Endpoints of C_{j_1..j_k}: inverse branches composed outward.

    The empty word denotes the whole space [0, 1].
    """
    if len(word) == 0:
        return 0.0, 1.0
    word = validate_word(map_spec, word)
    lo, hi = 0.0, 1.0
    for j in reversed(word):
        a, b = float(map_spec.g(j, lo)), float(map_spec.g(j, hi))
        lo, hi = (a, b) if a <= b else (b, a)
    return lo, hi


def cylinder_interval_exact(map_spec, word):
    """Fraction endpoints (linear maps only, used as an oracle elsewhere)."""
    if not map_spec.exact:
        raise ValueError("exact cylinders require a linear map")
    word = validate_word(map_spec, word)
    m = map_spec.branch_count
    lo, hi = Fraction(0), Fraction(1)
    for j in reversed(word):
        if map_spec.signs[j] > 0:
            lo, hi = (j + lo) / m, (j + hi) / m
        else:
            lo, hi = (j + 1 - hi) / m, (j + 1 - lo) / m
    return lo, hi


def periodic_point_of_cylinder(map_spec, word, tol=1e-14):
    """The unique fixed point of T^k inside closure(C_{j_1..j_k}).

    Iterates the composed inverse-branch contraction (factor at most
    3^-k), then polishes with Newton on T^k_w(t) - t so the forward
    residual sits at the float evaluation floor, which for smooth maps
    grows like D^k * eps.
    """
    word = validate_word(map_spec, word)
    z = 0.5
    for _ in range(300):
        z_new = z
        for j in reversed(word):
            z_new = float(map_spec.g(j, z_new))
        if abs(z_new - z) < tol:
            z = z_new
            break
        z = z_new
    for _ in range(3):
        t, deriv = z, 1.0
        for j in word:
            deriv /= float(map_spec.g_prime(j, float(map_spec.branch_T(j, t))))
            t = float(map_spec.branch_T(j, t))
        f = t - z
        if f == 0.0 or abs(deriv - 1.0) < 1e-9:
            break
        z = min(max(z - f / (deriv - 1.0), 0.0), 1.0)
    return z
