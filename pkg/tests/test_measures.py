"""Measures: ball masses, radius inversion, Gibbs builds, regularity probes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recurrence_lab.measures import (
    PotentialSpec,
    ball_mass,
    build_gibbs,
    cdf_value,
    cylinder_decay_fit,
    cylinder_measure,
    lebesgue_interval,
    lebesgue_torus,
    level_masses,
    load_model,
    quasi_bernoulli_constant,
    radii_for_masses,
    radius_for_mass,
    regularity_probe,
    sample_floats,
    save_model,
)
from recurrence_lab.systems import linear_map, perturbed_map

M3 = linear_map(3)
PM = perturbed_map()
BERNOULLI = (0.5, 0.3, 0.2)


def bernoulli_mass_oracle(word):
    out = 1.0
    for d in word:
        out *= BERNOULLI[d]
    return out


@pytest.fixture(scope="module")
def bernoulli_model():
    return build_gibbs(M3, PotentialSpec.branch_log_weights(BERNOULLI), grid_level=14)


@pytest.fixture(scope="module")
def acip_model():
    return build_gibbs(PM, PotentialSpec.neg_log_deriv(), grid_level=14)


class TestBallMass:
    def test_interval_interior(self):
        assert ball_mass(lebesgue_interval(), 0.5, 0.05) == pytest.approx(0.1, abs=1e-15)

    def test_interval_boundary_clip(self):
        assert ball_mass(lebesgue_interval(), 0.0, 0.1) == pytest.approx(0.1, abs=1e-15)

    def test_torus_disk(self):
        assert ball_mass(lebesgue_torus(), None, 0.056419) == pytest.approx(
            0.01, abs=1e-6)

    def test_torus_full_mass_at_diameter(self):
        lt = lebesgue_torus()
        assert ball_mass(lt, None, np.sqrt(0.5)) == 1.0
        assert ball_mass(lt, None, 0.6) < 1.0

    def test_monotone_in_radius(self, acip_model):
        rs = np.linspace(0, 1, 300)
        masses = ball_mass(acip_model, 0.37, rs)
        assert np.all(np.diff(masses) >= -1e-15)


class TestRadiusForMass:
    def test_interval_interior(self):
        assert radius_for_mass(lebesgue_interval(), 0.5, 0.1) == pytest.approx(
            0.05, abs=1e-15)

    def test_interval_boundary(self):
        assert radius_for_mass(lebesgue_interval(), 0.0, 0.1) == pytest.approx(
            0.1, abs=1e-15)

    def test_torus_disk_inversion(self):
        assert radius_for_mass(lebesgue_torus(), None, 0.01) == pytest.approx(
            np.sqrt(0.01 / np.pi), abs=1e-12)

    def test_torus_clipped_inversion(self):
        lt = lebesgue_torus()
        r = radius_for_mass(lt, None, 0.97)
        assert ball_mass(lt, None, r) == pytest.approx(0.97, abs=1e-9)

    def test_rejects_bad_mass(self):
        with pytest.raises(ValueError):
            radius_for_mass(lebesgue_interval(), 0.5, 0.0)
        with pytest.raises(ValueError):
            radius_for_mass(lebesgue_interval(), 0.5, 1.5)

    def test_generalized_inverse(self, acip_model):
        rng = np.random.default_rng(8)
        for model in (lebesgue_interval(), acip_model):
            for _ in range(40):
                x = float(rng.random())
                m = float(rng.uniform(1e-4, 0.5))
                r = radius_for_mass(model, x, m)
                assert ball_mass(model, x, r) >= m - 1e-9
                if r > 2e-9:
                    assert ball_mass(model, x, r - 1e-9) < m

    def test_radius_is_one_lipschitz(self, acip_model, bernoulli_model):
        rng = np.random.default_rng(9)
        for model in (lebesgue_interval(), acip_model, bernoulli_model):
            for _ in range(60):
                x, y = rng.random(2)
                m = float(rng.uniform(1e-3, 0.4))
                rx = radius_for_mass(model, float(x), m)
                ry = radius_for_mass(model, float(y), m)
                assert abs(rx - ry) <= abs(x - y) + 1e-8

    def test_sweep_matches_bisection_oracle(self, acip_model):
        rng = np.random.default_rng(10)
        x = 0.613
        masses = np.sort(rng.uniform(1e-4, 0.6, 100))[::-1].copy()
        swept = radii_for_masses(acip_model, x, masses)
        for m, r in zip(masses, swept):
            lo, hi = 0.0, 1.0
            for _ in range(60):  # independent slow path
                mid = 0.5 * (lo + hi)
                if ball_mass(acip_model, x, mid) >= m:
                    hi = mid
                else:
                    lo = mid
            assert abs(r - hi) <= 1e-9

    @given(st.floats(1e-6, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=150, deadline=None)
    def test_interval_inverse_property(self, mass, x):
        r = radius_for_mass(lebesgue_interval(), x, mass)
        assert ball_mass(lebesgue_interval(), x, r) == pytest.approx(mass, abs=1e-12)


class TestGibbsBuild:
    def test_constant_potential_recovers_lebesgue(self):
        model = build_gibbs(M3, PotentialSpec.constant(-np.log(3)), grid_level=10)
        t = np.linspace(0, 1, 257)
        assert np.max(np.abs(cdf_value(model, t) - t)) <= 1e-10
        assert model.eig_residual <= 1e-8

    def test_bernoulli_matches_product_oracle(self, bernoulli_model):
        tol = 2 * bernoulli_model.error_bound
        for word in [(0,), (0, 1), (2, 2), (1,), (1, 0, 2)]:
            assert cylinder_measure(bernoulli_model, M3, word) == pytest.approx(
                bernoulli_mass_oracle(word), abs=tol)

    def test_acip_normalisation(self, acip_model):
        assert acip_model.eig_residual <= 1e-8
        assert acip_model.cell_masses.sum() == pytest.approx(1.0, abs=1e-10)
        assert acip_model.h.min() > 0.0
        assert np.isfinite(acip_model.h.max())
        assert acip_model.potential.normalized

    def test_cdf_consistency_level_sums(self, bernoulli_model, acip_model):
        for model, spec in ((bernoulli_model, M3), (acip_model, PM)):
            for k in range(1, 7):
                total = float(np.sum(level_masses(model, spec, k)))
                tol = spec.branch_count ** k * 2 * model.error_bound + 1e-10
                assert abs(total - 1.0) <= tol

    def test_children_sum_to_parent(self, acip_model):
        rng = np.random.default_rng(3)
        for _ in range(20):
            k = int(rng.integers(1, 5))
            word = tuple(int(d) for d in rng.integers(0, 5, k))
            parent = cylinder_measure(acip_model, PM, word)
            kids = sum(cylinder_measure(acip_model, PM, word + (j,)) for j in range(5))
            assert abs(parent - kids) <= 2 * acip_model.error_bound + 1e-12

    def test_empty_word_full_mass(self, acip_model):
        assert cylinder_measure(acip_model, PM, ()) == pytest.approx(1.0, abs=1e-12)
        assert cylinder_measure(lebesgue_interval(), M3, ()) == 1.0

    def test_quasi_bernoulli_stable_between_levels(self, acip_model):
        floor = 5 * acip_model.error_bound
        c6 = quasi_bernoulli_constant(acip_model, PM, 6, floor)
        c8 = quasi_bernoulli_constant(acip_model, PM, 8, floor)
        assert c8 <= 1.2 * c6 and c6 <= 1.2 * c8

    def test_cylinder_decay(self, bernoulli_model, acip_model):
        for model, spec in ((bernoulli_model, M3), (acip_model, PM)):
            c, lam = cylinder_decay_fit(model, spec, 6)
            assert lam > 1.0
            assert c > 0.0

    def test_grid_level_guard(self):
        with pytest.raises(ValueError):
            build_gibbs(M3, PotentialSpec.constant(0.0), grid_level=25)


class TestRegularityProbe:
    def test_torus_exponents(self):
        rep = regularity_probe(lebesgue_torus(), 3000, seed=1)
        assert rep.frostman_s == pytest.approx(2.0, rel=0.1)
        assert rep.annuli_alpha0 == pytest.approx(1.0, rel=0.1)
        assert not rep.degenerate

    def test_interval_exponents(self):
        rep = regularity_probe(lebesgue_interval(), 3000, seed=1)
        assert rep.frostman_s == pytest.approx(1.0, rel=0.1)
        assert rep.annuli_alpha0 == pytest.approx(1.0, rel=0.1)

    def test_bernoulli_reported_only(self, bernoulli_model):
        # local dimension of the envelope sits near log(1/0.5)/log(3)
        rep = regularity_probe(bernoulli_model, 3000, seed=1)
        assert 0.4 <= rep.frostman_s <= 1.05
        assert rep.samples == 3000

    def test_rejects_tiny_sample(self):
        with pytest.raises(ValueError):
            regularity_probe(lebesgue_torus(), 50)


class TestSamplingAndSidecar:
    def test_sampling_deterministic(self, acip_model):
        a = sample_floats(acip_model, np.random.default_rng(5), 100)
        b = sample_floats(acip_model, np.random.default_rng(5), 100)
        assert np.array_equal(a, b)

    def test_gibbs_samples_follow_cdf(self, acip_model):
        xs = sample_floats(acip_model, np.random.default_rng(6), 200_000)
        for t in (0.2, 0.5, 0.8):
            assert np.mean(xs <= t) == pytest.approx(
                float(cdf_value(acip_model, t)), abs=5e-3)

    def test_sidecar_roundtrip(self, acip_model, tmp_path):
        path = tmp_path / "acip.rlgm"
        save_model(acip_model, path)
        back = load_model(path)
        assert back.grid_level == acip_model.grid_level
        assert np.array_equal(back.cdf, acip_model.cdf)
        assert np.array_equal(back.cell_masses, acip_model.cell_masses)
        assert np.array_equal(back.h, acip_model.h)
        assert back.error_bound == acip_model.error_bound
        assert back.map == PM
        assert back.potential.kind == "neg-log-deriv"

    def test_sidecar_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.rlgm"
        path.write_bytes(b"NOTMAGIC" + b"0" * 64)
        with pytest.raises(ValueError):
            load_model(path)
