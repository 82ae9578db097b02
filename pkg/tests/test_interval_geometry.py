"""Interval event components, covers, mass bounds, exact joints."""

import numpy as np
import pytest

from recurrence_lab.interval_geometry import (
    check_component_mass,
    check_three_ball_cover,
    event_components,
    exact_event_mass_linear,
    exact_joint_measure,
    pooled_short_return_fit,
    short_return_check,
)
from recurrence_lab.measures import (
    PotentialSpec,
    build_gibbs,
    lebesgue_interval,
    radius_at_points,
)
from recurrence_lab.recurrence import constant_schedule
from recurrence_lab.systems import linear_map, perturbed_map

M3 = linear_map(3)
LI = lebesgue_interval()


class TestEventComponents:
    def test_k1_closed_form_values(self):
        comps = {c.word: c for c in event_components(M3, LI, 1, 0.1)}
        c0 = comps[(0,)]
        assert c0.a == 0.0
        assert c0.p == pytest.approx(0.0, abs=1e-13)
        assert c0.b == pytest.approx(1 / 30, abs=1e-12)
        assert c0.mass == pytest.approx(1 / 30, abs=1e-12)
        assert c0.image_mass == pytest.approx(0.1, abs=1e-10)
        c1 = comps[(1,)]
        assert c1.a == pytest.approx(0.475, abs=1e-12)
        assert c1.b == pytest.approx(0.525, abs=1e-12)
        assert c1.image_mass == pytest.approx(0.15, abs=1e-10)
        c2 = comps[(2,)]
        assert c2.a == pytest.approx(29 / 30, abs=1e-12)
        assert c2.b == 1.0
        assert c2.p == pytest.approx(1.0, abs=1e-13)

    def test_zero_mass_degenerates(self):
        comps = event_components(M3, LI, 2, 0.0)
        assert all(c.mass == 0.0 and c.a == c.b == c.p for c in comps)

    def test_total_is_exact_event_mass(self):
        total = sum(c.mass for c in event_components(M3, LI, 1, 0.1))
        assert total == pytest.approx(7 / 60, abs=1e-12)

    def test_generic_matches_closed_form(self):
        for k in (2, 4, 6, 8):
            generic = sum(c.mass for c in event_components(M3, LI, k, 0.05))
            closed = exact_event_mass_linear(M3, LI, k, 0.05)
            assert generic == pytest.approx(closed, abs=1e-11)

    def test_root_residuals(self):
        comps = event_components(M3, LI, 4, 0.03)
        for c in comps:
            lo, hi = c.word_interval if hasattr(c, "word_interval") else (None, None)
            for t, clamped in ((c.a, c.a in (0.0,) or c.a == c.p),
                               (c.b, c.b in (1.0,) or c.b == c.p)):
                x = t
                for d in c.word:
                    x = float(M3.branch_T(d, x))
                gap = abs(abs(x - t) - float(radius_at_points(LI, np.array([t]), 0.03)[0]))
                # interior roots solve the equation; clamped ends need not
                if not clamped and 0.0 < t < 1.0:
                    ints = abs(t * 3 ** 4 - round(t * 3 ** 4))
                    if ints > 1e-9:  # not at a cylinder edge
                        assert gap <= 1e-10

    def test_exhaustive_against_grid(self):
        # pointwise indicator on a dyadic grid, exact in float for slope 3^k
        mass = 0.04
        for k in (2, 4, 6):
            comps = event_components(M3, LI, k, mass)
            n = 1 << 20
            x = np.arange(n) / n
            tk = np.mod(3.0 ** k * x, 1.0)
            hit = np.abs(tk - x) < radius_at_points(LI, x, mass)
            inside = np.zeros(n, dtype=bool)
            for c in comps:
                inside |= (x > c.a) & (x < c.b)
            # disagreement only within a grid step of component boundaries
            assert np.mean(hit != inside) <= len(comps) * 4 / n

    def test_word_cap(self):
        with pytest.raises(ValueError):
            event_components(M3, LI, 13, 0.01)


class TestThreeBallCover:
    def test_x3_ratios_bounded_by_three(self):
        for k in (1, 3, 5, 7):
            rep = check_three_ball_cover(M3, LI, k, 0.05)
            assert rep.max_ratio <= 3.0 + 1e-9
            assert rep.cover_ok

    def test_zero_mass(self):
        rep = check_three_ball_cover(M3, LI, 3, 0.0)
        assert rep.max_ratio == 0.0 and rep.cover_ok

    def test_mixed_sign_orientation_cases(self):
        sw = linear_map(3, signs=(1, -1, 1))
        for k in (2, 3, 4):
            rep = check_three_ball_cover(sw, LI, k, 0.02)
            assert rep.max_ratio <= 3.0 + 1e-9
            assert rep.cover_ok

    def test_negative_word_single_ball(self):
        # decreasing branch composition: image sits inside the middle ball
        sw = linear_map(3, signs=(1, -1, 1))
        comps = event_components(sw, LI, 1, 0.06)
        comp = next(c for c in comps if not c.increasing)
        r_p = float(radius_at_points(LI, np.array([comp.p]), 0.06)[0])
        img = [float(sw.branch_T(comp.word[0], comp.a)),
               float(sw.branch_T(comp.word[0], comp.b))]
        assert min(img) >= comp.p - r_p - 1e-12
        assert max(img) <= comp.p + r_p + 1e-12
        assert comp.image_mass <= 0.06 + 1e-12


class TestComponentMass:
    def test_x3_constant_near_one(self):
        for k in (2, 5, 8):
            rep = check_component_mass(M3, LI, k, 0.05)
            assert 0.9 <= rep.max_constant <= 1.6

    def test_gibbs_constant_finite_stable(self):
        gb = build_gibbs(M3, PotentialSpec.branch_log_weights((0.5, 0.3, 0.2)),
                         grid_level=14)
        floor = 5 * gb.error_bound
        consts = [check_component_mass(M3, gb, k, 0.05, cyl_floor=floor).max_constant
                  for k in (3, 5, 7)]
        assert all(0.1 < c < 20 for c in consts)
        assert max(consts) <= 2.5 * min(consts)


class TestExactJoint:
    def test_dyadic_grid_oracle(self):
        mass = 0.05
        k, l = 2, 2
        joint = exact_joint_measure(M3, LI, k, l, mass, mass)
        n = 1 << 22
        x = np.arange(n) / n
        r = radius_at_points(LI, x, mass)
        hit_k = np.abs(np.mod(9.0 * x, 1.0) - x) < r
        hit_kl = np.abs(np.mod(81.0 * x, 1.0) - x) < r
        grid = np.mean(hit_k & hit_kl)
        assert joint == pytest.approx(grid, abs=2e-4)

    def test_generic_matches_linear_fast_path(self):
        gb = build_gibbs(M3, PotentialSpec.constant(-np.log(3.0)), grid_level=12)
        for k, l in [(2, 1), (3, 2), (4, 3)]:
            fast = exact_joint_measure(M3, LI, k, l, 0.05, 0.05)
            generic = exact_joint_measure(M3, gb, k, l, 0.05, 0.05)
            assert generic == pytest.approx(fast, abs=5e-7)

    def test_independence_floor_large_gap(self):
        mass = 0.05
        joint = exact_joint_measure(M3, LI, 5, 6, mass, mass)
        mu5 = exact_event_mass_linear(M3, LI, 5, mass)
        mu11 = exact_event_mass_linear(M3, LI, 11, mass)
        assert joint == pytest.approx(mu5 * mu11, rel=0.15)

    def test_zero_mass(self):
        assert exact_joint_measure(M3, LI, 3, 2, 0.05, 0.0) == 0.0


class TestShortReturn:
    def test_rows_and_fit(self):
        rep = short_return_check(M3, LI, constant_schedule(0.05), 5, 6)
        assert len(rep.rows) == 6
        assert rep.mass_k == pytest.approx(
            exact_event_mass_linear(M3, LI, 5, 0.05), abs=1e-12)
        assert rep.c_fit > 0

    def test_pooled_fit_stable(self):
        reports = [short_return_check(M3, LI, constant_schedule(0.05), k, 6)
                   for k in (4, 5, 6)]
        lam, consts, decay = pooled_short_return_fit(reports)
        assert lam is not None and lam > 1.0
        assert max(consts) <= 2.0 * min(consts)

    def test_bound_holds_with_fitted_constants(self):
        rep = short_return_check(M3, LI, constant_schedule(0.05), 4, 6)
        lam = rep.lam_fit if rep.lam_fit and rep.lam_fit > 1 else 3.0
        for row in rep.rows:
            bound = rep.c_fit * (rep.mass_k * row.mass_kl
                                 + row.mass_kl * lam ** -row.l)
            assert row.joint <= bound * (1 + 1e-9)
