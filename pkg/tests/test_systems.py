"""Systems: exact torus dynamics, interval maps, cylinders, periodic points."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recurrence_lab.systems import (
    QuadraticSurd,
    TorusAutomorphism,
    TorusPoint,
    cat_map,
    cylinder_interval,
    cylinder_interval_exact,
    interval_orbit_u64,
    linear_map,
    periodic_point_count,
    periodic_point_of_cylinder,
    periodic_points_torus,
    perturbed_map,
    step_interval,
    step_torus,
    torus_distance,
)


def rational_step_oracle(matrix, p):
    """Exact A p mod 1 on Fraction pairs."""
    (a, b), (c, d) = matrix
    x, y = p
    return ((a * x + b * y) % 1, (c * x + d * y) % 1)


class TestTorusStep:
    def test_fixed_point_of_linear_map(self):
        A = cat_map()
        p = TorusPoint(0, 0)
        assert step_torus(A, p) == p

    def test_half_half(self):
        A = cat_map()
        p = TorusPoint.from_floats(0.5, 0.5)
        assert step_torus(A, p).to_floats() == (0.5, 0.0)

    def test_quarter_half_matches_rational_oracle(self):
        A = cat_map()
        expect = rational_step_oracle(A.matrix(), (Fraction(1, 4), Fraction(1, 2)))
        assert expect == (Fraction(0), Fraction(3, 4))
        p = TorusPoint.from_fractions(Fraction(1, 4), Fraction(1, 2))
        assert step_torus(A, p).to_floats() == (0.0, 0.75)

    def test_matches_rational_oracle_on_dyadics(self):
        A = TorusAutomorphism(1, 1, 1, 0)
        rng = np.random.default_rng(3)
        for _ in range(50):
            num_x, num_y = rng.integers(0, 1 << 20, 2)
            fx, fy = Fraction(int(num_x), 1 << 20), Fraction(int(num_y), 1 << 20)
            p = TorusPoint.from_fractions(fx, fy)
            q = step_torus(A, p)
            ex, ey = rational_step_oracle(A.matrix(), (fx, fy))
            assert q.x == int(ex * (1 << 64)) and q.y == int(ey * (1 << 64))

    def test_composition_equals_matrix_power(self):
        A = cat_map()
        p = TorusPoint(12345678901234567, 98765432109876543)
        q = p
        for _ in range(1000):
            q = step_torus(A, q)
        mk = A.matrix_power(1000)
        ex = (mk[0][0] * p.x + mk[0][1] * p.y) % (1 << 64)
        ey = (mk[1][0] * p.x + mk[1][1] * p.y) % (1 << 64)
        assert (q.x, q.y) == (ex, ey)


class TestHyperbolicity:
    def test_rejects_parabolic(self):
        with pytest.raises(ValueError):
            TorusAutomorphism(1, 1, 0, 1)

    def test_rejects_unit_circle_det_minus_one(self):
        with pytest.raises(ValueError):
            TorusAutomorphism(0, 1, 1, 0)

    def test_rejects_non_unimodular(self):
        with pytest.raises(ValueError):
            TorusAutomorphism(2, 0, 0, 2)

    def test_spectral_radius(self):
        A = cat_map()
        assert A.lam == pytest.approx((3 + np.sqrt(5)) / 2, abs=1e-15)
        B = TorusAutomorphism(1, 1, 1, 0)
        assert B.lam == pytest.approx((1 + np.sqrt(5)) / 2, abs=1e-15)
        assert B.det == -1

    def test_eigenvectors_are_eigen(self):
        for A in (cat_map(), TorusAutomorphism(2, 1, 3, 2), TorusAutomorphism(1, 1, 1, 0)):
            mat = np.array(A.matrix(), dtype=float)
            for unstable in (True, False):
                v = A.eigenvector(unstable)
                lam = float(A.eigenvalue(unstable))
                assert np.allclose(mat @ v, lam * v, atol=1e-12)
                assert abs(lam) > 1 if unstable else abs(lam) < 1


class TestSurd:
    def test_arithmetic_against_floats(self):
        a = QuadraticSurd(3, 1, 2, 5)
        b = QuadraticSurd(-1, 2, 3, 5)
        fa, fb = float(a), float(b)
        assert float(a + b) == pytest.approx(fa + fb, rel=1e-15)
        assert float(a * b) == pytest.approx(fa * fb, rel=1e-15)
        assert float(a / b) == pytest.approx(fa / fb, rel=1e-15)
        assert (a - a).sign() == 0
        assert (a * b).sign() == (1 if fa * fb > 0 else -1)

    def test_eigenvalue_power(self):
        A = cat_map()
        for k in (1, 2, 5, 9):
            assert float(A.eigenvalue_power(k)) == pytest.approx(A.lam ** k, rel=1e-13)


class TestTorusDistance:
    def test_wraparound(self):
        assert torus_distance((0.9, 0.0), (0.1, 0.0)) == pytest.approx(0.2, abs=1e-12)

    def test_identity(self):
        p = TorusPoint(123, 456)
        assert torus_distance(p, p) == 0.0

    def test_diagonal(self):
        assert torus_distance((0.0, 0.0), (0.5, 0.5)) == pytest.approx(
            np.sqrt(0.5), abs=1e-12)

    @given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
           st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True))
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_bounded(self, ax, ay, bx, by):
        d1 = torus_distance((ax, ay), (bx, by))
        d2 = torus_distance((bx, by), (ax, ay))
        assert d1 == pytest.approx(d2, abs=1e-12)
        assert 0.0 <= d1 <= np.sqrt(0.5) + 1e-12


class TestPeriodicPoints:
    def test_count_matches_determinant_oracle(self):
        A = cat_map()
        for k in range(1, 13):
            mk = A.matrix_power(k)
            det = (mk[0][0] - 1) * (mk[1][1] - 1) - mk[0][1] * mk[1][0]
            assert len(periodic_points_torus(A, k)) == abs(det)
            assert periodic_point_count(A, k) == abs(det)

    def test_cat_map_sequence(self):
        A = cat_map()
        counts = [len(periodic_points_torus(A, k)) for k in range(1, 6)]
        assert counts == [1, 5, 16, 45, 121]

    def test_k1_single_fixed_point(self):
        assert periodic_points_torus(cat_map(), 1) == [(Fraction(0), Fraction(0))]

    def test_k2_brute_force_oracle(self):
        # det(A^2 - I) = -5, so solutions have coordinates in (1/5)Z^2
        A = cat_map()
        m2 = A.matrix_power(2)
        brute = set()
        for i in range(5):
            for j in range(5):
                x, y = Fraction(i, 5), Fraction(j, 5)
                fx = (m2[0][0] * x + m2[0][1] * y) % 1
                fy = (m2[1][0] * x + m2[1][1] * y) % 1
                if (fx, fy) == (x, y):
                    brute.add((x, y))
        assert set(periodic_points_torus(A, 2)) == brute
        assert len(brute) == 5

    def test_points_exactly_periodic(self):
        A = TorusAutomorphism(2, 1, 3, 2)
        for k in (1, 2, 3, 4):
            for p in periodic_points_torus(A, k):
                q = p
                for _ in range(k):
                    q = rational_step_oracle(A.matrix(), q)
                assert q == p

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            periodic_points_torus(cat_map(), 50)


class TestIntervalMaps:
    def test_times_three_step(self):
        m3 = linear_map(3)
        assert step_interval(m3, 0.2) == pytest.approx(0.6, abs=1e-14)
        assert step_interval(m3, 0.5) == 0.5

    def test_branch_tie_right_continuity(self):
        m4 = linear_map(4)
        # 0.25 is exactly representable: it belongs to branch 1, so T=4x-1
        assert step_interval(m4, 0.25) == 0.0

    def test_perturbed_round_trip(self):
        pm = perturbed_map()
        x = float(pm.g(2, 0.5))
        assert x == pytest.approx(0.52, abs=1e-15)
        assert step_interval(pm, x) == pytest.approx(0.5, abs=1e-13)

    def test_perturbed_derivative_bounds(self):
        pm = perturbed_map()
        assert 3.0 <= pm.deriv_lo <= pm.deriv_hi <= 7.3
        # dense-grid check of 3 <= |T'| <= D via the inverse branches
        y = np.linspace(0, 1, 10001)
        for j in range(pm.branch_count):
            deriv = 1.0 / np.abs(pm.g_prime(j, y))
            assert deriv.min() >= 3.0
            assert deriv.max() <= pm.deriv_hi + 1e-12

    def test_mixed_sign_full_branches(self):
        sw = linear_map(3, signs=(1, -1, 1))
        # decreasing middle branch: T = 2 - 3x on [1/3, 2/3]
        assert step_interval(sw, 0.5) == pytest.approx(0.5, abs=1e-14)
        assert step_interval(sw, 0.4) == pytest.approx(0.8, abs=1e-14)

    def test_exact_orbit_matches_float_for_linear(self):
        m3 = linear_map(3)
        x0 = (1 << 64) // 7
        xk = interval_orbit_u64(m3, x0, 5)
        approx = x0 * 2.0 ** -64
        for _ in range(5):
            approx = step_interval(m3, approx)
        assert xk * 2.0 ** -64 == pytest.approx(approx, abs=1e-9)


class TestCylinders:
    def test_first_level(self):
        m3 = linear_map(3)
        lo, hi = cylinder_interval(m3, (0,))
        assert (lo, hi) == (0.0, pytest.approx(1 / 3, abs=1e-15))

    def test_base3_digit_oracle(self):
        m3 = linear_map(3)
        rng = np.random.default_rng(11)
        for _ in range(30):
            k = int(rng.integers(1, 9))
            word = tuple(int(d) for d in rng.integers(0, 3, k))
            # oracle: digits of the base-3 expansion
            lo_expect = sum(d * Fraction(1, 3 ** (i + 1)) for i, d in enumerate(word))
            lo, hi = cylinder_interval(m3, word)
            assert lo == pytest.approx(float(lo_expect), abs=1e-12)
            assert hi == pytest.approx(float(lo_expect + Fraction(1, 3 ** k)), abs=1e-12)
            elo, ehi = cylinder_interval_exact(m3, word)
            assert (elo, ehi) == (lo_expect, lo_expect + Fraction(1, 3 ** k))

    def test_perturbed_first_level(self):
        pm = perturbed_map()
        lo, hi = cylinder_interval(pm, (2,))
        assert lo == pytest.approx(0.4, abs=1e-15)
        assert hi == pytest.approx(0.6, abs=1e-15)

    def test_nesting_and_tiling(self):
        for spec in (linear_map(3), perturbed_map(), linear_map(3, signs=(1, -1, 1))):
            m = spec.branch_count
            rng = np.random.default_rng(5)
            for _ in range(20):
                k = int(rng.integers(1, 6))
                word = tuple(int(d) for d in rng.integers(0, m, k))
                lo, hi = cylinder_interval(spec, word)
                assert hi - lo <= 3.0 ** -k + 1e-12
                for j in range(m):
                    clo, chi = cylinder_interval(spec, word + (j,))
                    assert lo - 1e-12 <= clo <= chi <= hi + 1e-12
            # level-2 cylinders tile [0, 1]
            words = [(i, j) for i in range(m) for j in range(m)]
            ivals = sorted(cylinder_interval(spec, w) for w in words)
            assert ivals[0][0] == pytest.approx(0.0, abs=1e-12)
            assert ivals[-1][1] == pytest.approx(1.0, abs=1e-12)
            for (plo, phi), (nlo, nhi) in zip(ivals, ivals[1:]):
                assert nlo == pytest.approx(phi, abs=1e-12)

    def test_empty_word_is_whole_space(self):
        assert cylinder_interval(linear_map(3), ()) == (0.0, 1.0)


class TestPeriodicPointOfCylinder:
    def test_times_three_values(self):
        m3 = linear_map(3)
        assert periodic_point_of_cylinder(m3, (0,)) == pytest.approx(0.0, abs=1e-13)
        assert periodic_point_of_cylinder(m3, (1,)) == pytest.approx(0.5, abs=1e-13)
        # oracle: fixed point of T^2 in C_{0,1} solves 9x - 1 = x
        assert periodic_point_of_cylinder(m3, (0, 1)) == pytest.approx(1 / 8, abs=1e-13)

    def test_residual_bound(self):
        rng = np.random.default_rng(4)
        for spec in (linear_map(3), perturbed_map(), linear_map(3, signs=(1, -1, 1))):
            # smooth maps evaluate T^k with noise ~ D^k * eps, so the exact
            # 1e-12 residual bound only applies to integer-slope maps
            tol = 1e-12 if spec.exact else 1e-10
            for _ in range(25):
                k = int(rng.integers(1, 7))
                word = tuple(int(d) for d in rng.integers(0, spec.branch_count, k))
                p = periodic_point_of_cylinder(spec, word)
                q = p
                for d in word:
                    q = float(spec.branch_T(d, q))
                assert abs(q - p) <= tol
                lo, hi = cylinder_interval(spec, word)
                assert lo - 1e-12 <= p <= hi + 1e-12
