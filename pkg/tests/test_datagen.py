"""Synthetic scene generators: random fields, scaling scenes, topography."""

import math

import numpy as np
import pytest

from twolmm import (
    Dsm,
    GrfSpec,
    apply_noise,
    dsm_to_geometry,
    generate_2lmm_scene,
    generate_grf_abundances,
    generate_hapke_scene,
    hapke_invert,
    hapke_relative_reflectance,
    smoothed_random_dsm,
    synthetic_endmembers,
)


def spatial_autocorrelation(field: np.ndarray, lag: int) -> float:
    a = field[:, :-lag].ravel()
    b = field[:, lag:].ravel()
    a = a - a.mean()
    b = b - b.mean()
    return float((a * b).mean() / (a.std() * b.std() + 1e-30))


class TestGrfAbundances:
    def test_single_endmember_is_all_ones(self):
        ab = generate_grf_abundances(GrfSpec(width=6, height=5, k=1, seed=0))
        np.testing.assert_array_equal(ab.data, np.ones((1, 30)))

    def test_columns_on_simplex(self):
        ab = generate_grf_abundances(GrfSpec(width=20, height=10, k=4, seed=1))
        assert ab.data.min() >= 0.0
        np.testing.assert_allclose(ab.data.sum(axis=0), 1.0, atol=1e-12)
        assert ab.normalized

    def test_spatial_correlation_decays_with_lag(self):
        lag = 5
        near, far = [], []
        for seed in range(10):
            ab = generate_grf_abundances(
                GrfSpec(width=60, height=60, correlation_length=float(lag), k=2, seed=seed)
            )
            field = ab.data[0].reshape(60, 60)
            near.append(spatial_autocorrelation(field, lag))
            far.append(spatial_autocorrelation(field, 4 * lag))
        assert np.mean(near) > np.mean(far)

    def test_deterministic(self):
        spec = GrfSpec(width=12, height=12, k=3, seed=7)
        a1 = generate_grf_abundances(spec)
        a2 = generate_grf_abundances(spec)
        np.testing.assert_array_equal(a1.data, a2.data)


class TestGenerate2lmmScene:
    def test_degenerate_draw_is_exact_lmm(self):
        em = synthetic_endmembers(30, 3, seed=2)
        ab = generate_grf_abundances(GrfSpec(width=8, height=8, k=3, seed=3))
        scene = generate_2lmm_scene(em, ab, s_range=(1.0, 1.0), snr_db=None, seed=4)
        np.testing.assert_allclose(scene.image.data, em.data @ ab.data, atol=1e-14)
        np.testing.assert_array_equal(scene.scaling.s_e, 1.0)

    def test_recomposition_identity(self):
        em = synthetic_endmembers(40, 3, seed=5)
        ab = generate_grf_abundances(GrfSpec(width=10, height=10, k=3, seed=6))
        scene = generate_2lmm_scene(em, ab, snr_db=20.0, seed=7, width=10, height=10)
        rebuilt = (em.data * scene.scaling.s_e) @ (ab.data * scene.scaling.s_x)
        np.testing.assert_array_equal(scene.clean.data, rebuilt)
        noise = scene.image.data - scene.clean.data
        assert np.abs(noise).max() > 0.0

    def test_achieved_snr_within_tolerance(self):
        em = synthetic_endmembers(60, 3, seed=8)
        ab = generate_grf_abundances(GrfSpec(width=100, height=100, k=3, seed=9))
        scene = generate_2lmm_scene(em, ab, snr_db=40.0, seed=10, width=100, height=100)
        noise = scene.image.data - scene.clean.data
        achieved = 10.0 * np.log10(np.mean(scene.clean.data**2) / np.mean(noise**2))
        assert abs(achieved - 40.0) <= 0.2

    def test_scaling_draws_within_range(self):
        em = synthetic_endmembers(20, 3, seed=11)
        ab = generate_grf_abundances(GrfSpec(width=15, height=15, k=3, seed=12))
        scene = generate_2lmm_scene(em, ab, s_range=(0.5, 2.0), snr_db=None, seed=13)
        assert scene.scaling.s_e.min() >= 0.5
        assert scene.scaling.s_e.max() <= 2.0
        assert scene.scaling.s_x.min() >= 0.5
        assert scene.scaling.s_x.max() <= 2.0

    def test_deterministic(self):
        em = synthetic_endmembers(20, 2, seed=14)
        ab = generate_grf_abundances(GrfSpec(width=6, height=6, k=2, seed=15))
        s1 = generate_2lmm_scene(em, ab, snr_db=30.0, seed=16)
        s2 = generate_2lmm_scene(em, ab, snr_db=30.0, seed=16)
        np.testing.assert_array_equal(s1.image.data, s2.image.data)


class TestHapkeModel:
    def test_white_panel_normalization(self):
        assert hapke_relative_reflectance(1.0, 0.7, 0.3) == pytest.approx(1.0)

    def test_black_is_black(self):
        assert hapke_relative_reflectance(0.0, 0.5, 0.5) == 0.0

    def test_hand_evaluated_point(self):
        # w = 0.64 gives sqrt(1-w) = 0.6 and denominator 2.2 * 2.2.
        got = hapke_relative_reflectance(0.64, 1.0, 1.0)
        assert got == pytest.approx(0.64 / 4.84, rel=1e-12)

    def test_inverse_of_hand_point(self):
        w = hapke_invert(0.64 / 4.84, 1.0, 1.0)
        assert w == pytest.approx(0.64, abs=1e-12)

    def test_endpoints(self):
        assert hapke_invert(1.0, 0.8, 0.9) == pytest.approx(1.0)
        assert hapke_invert(0.0, 0.8, 0.9) == pytest.approx(0.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(17)
        w = rng.uniform(0.0, 1.0, size=100)
        mu = rng.uniform(0.05, 1.0, size=100)
        mu0 = rng.uniform(0.05, 1.0, size=100)
        back = hapke_invert(hapke_relative_reflectance(w, mu, mu0), mu, mu0)
        np.testing.assert_allclose(back, w, atol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError, match="albedo"):
            hapke_relative_reflectance(1.2, 0.5, 0.5)
        with pytest.raises(ValueError, match="cosines"):
            hapke_relative_reflectance(0.5, 0.0, 0.5)
        with pytest.raises(ValueError, match="reflectance"):
            hapke_invert(1.5, 0.5, 0.5)

    def test_reflectance_increases_as_incidence_drops(self):
        # At fixed albedo the relative reflectance is monotone in mu0.
        w = 0.5
        values = [hapke_relative_reflectance(w, 1.0, mu0) for mu0 in (0.2, 0.5, 1.0)]
        assert values[0] > values[1] > values[2]


class TestDsmGeometry:
    def test_flat_zenith_sun(self):
        geom = dsm_to_geometry(Dsm(np.zeros((5, 5))), sun_dir=(0, 0, 1))
        np.testing.assert_allclose(geom.mu, 1.0)
        np.testing.assert_allclose(geom.mu0, 1.0)
        assert not geom.shadowed.any()

    def test_flat_oblique_sun(self):
        zen = math.radians(60.0)
        geom = dsm_to_geometry(
            Dsm(np.zeros((4, 4))), sun_dir=(math.sin(zen), 0.0, math.cos(zen))
        )
        np.testing.assert_allclose(geom.mu0, 0.5, atol=1e-12)

    def test_ramp_matches_analytic_cosine(self):
        slope = 0.3  # dz/dx
        cell = 2.0
        cols = np.arange(20) * cell * slope
        heights = np.tile(cols, (20, 1))
        geom = dsm_to_geometry(Dsm(heights, cell_size=cell), sun_dir=(0, 0, 1))
        expected = 1.0 / math.sqrt(1.0 + slope**2)
        mu0 = geom.mu0.reshape(20, 20)[:, 1:-1]  # skip one-sided edges
        np.testing.assert_allclose(mu0, expected, atol=1e-6)

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError, match="3x3"):
            dsm_to_geometry(Dsm(np.zeros((2, 5))), sun_dir=(0, 0, 1))


class TestGenerateHapkeScene:
    def make_inputs(self, width=8, height=8, k=3, seed=18):
        em = synthetic_endmembers(30, k, seed=seed, reflectance_range=(0.05, 0.6))
        ab = generate_grf_abundances(GrfSpec(width=width, height=height, k=k, seed=seed + 1))
        return em, ab

    def test_reference_geometry_reduces_to_lmm(self):
        em, ab = self.make_inputs()
        scene = generate_hapke_scene(
            em, ab, Dsm(np.zeros((8, 8))), sun_dir=(0, 0, 1), snr_db=None, seed=19
        )
        np.testing.assert_allclose(scene.clean.data, em.data @ ab.data, atol=1e-12)

    def test_pixel_endmembers_returned_for_oracle_use(self):
        em, ab = self.make_inputs()
        dsm = smoothed_random_dsm(8, 8, relief=15.0, smoothness=3.0, seed=20)
        scene = generate_hapke_scene(
            em, ab, dsm, sun_dir=(0.3, 0.0, 0.954), snr_db=None, seed=21
        )
        rebuilt = np.einsum("pkn,kn->pn", scene.endmembers_per_pixel, ab.data)
        np.testing.assert_allclose(scene.clean.data, rebuilt, atol=1e-14)

    def test_spectra_vary_monotonically_along_curved_ramp(self):
        em, ab = self.make_inputs()
        # Quadratic height profile: the slope (and hence mu0) varies
        # monotonically along x, so the rendered spectra must too.
        x = np.arange(8) * 10.0
        dsm = Dsm(np.tile(0.05 * x**2, (8, 1)), cell_size=10.0)
        scene = generate_hapke_scene(
            em, ab, dsm, sun_dir=(0.0, 0.0, 1.0), snr_db=None, seed=22
        )
        mu0 = scene.geometry.mu0.reshape(8, 8)[4, 1:7]
        assert (np.diff(mu0) < 0).all()
        e_tensor = scene.endmembers_per_pixel.reshape(30, 3, 8, 8)
        interior = e_tensor[:, :, 4, 1:7]
        diffs = np.diff(interior, axis=2)
        assert (diffs > 0).all() or (diffs < 0).all()

    def test_self_shadow_rejected_with_indices(self):
        em, ab = self.make_inputs()
        # A steep ramp facing away from a low sun self-shadows.
        steep = np.tile(np.arange(8) * 50.0, (8, 1))
        zen = math.radians(70.0)
        with pytest.raises(ValueError, match="self-shadowed"):
            generate_hapke_scene(
                em,
                ab,
                Dsm(steep, cell_size=10.0),
                sun_dir=(math.sin(zen), 0.0, math.cos(zen)),
                snr_db=None,
                seed=23,
            )

    def test_out_of_range_reflectance_rejected(self):
        em, ab = self.make_inputs()
        bad = type(em)(em.data * 3.0)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            generate_hapke_scene(bad, ab, Dsm(np.zeros((8, 8))), snr_db=None)


class TestApplyNoise:
    def test_infinite_snr_returns_clean(self):
        em = synthetic_endmembers(20, 2, seed=24)
        ab = generate_grf_abundances(GrfSpec(width=5, height=5, k=2, seed=25))
        scene = generate_2lmm_scene(em, ab, snr_db=None, seed=26)
        noisy = apply_noise(scene.clean, None, seed=0)
        np.testing.assert_array_equal(noisy.data, scene.clean.data)

    def test_noise_is_seeded(self):
        em = synthetic_endmembers(20, 2, seed=27)
        ab = generate_grf_abundances(GrfSpec(width=5, height=5, k=2, seed=28))
        scene = generate_2lmm_scene(em, ab, snr_db=None, seed=29)
        n1 = apply_noise(scene.clean, 30.0, seed=5)
        n2 = apply_noise(scene.clean, 30.0, seed=5)
        np.testing.assert_array_equal(n1.data, n2.data)


class TestSyntheticEndmembers:
    def test_within_range_and_labeled(self):
        em = synthetic_endmembers(50, 4, seed=30, reflectance_range=(0.1, 0.7))
        assert em.data.min() >= 0.1 - 1e-12
        assert em.data.max() <= 0.7 + 1e-12
        assert len(em.labels) == 4

    def test_spectra_are_distinct(self):
        from twolmm import sad

        em = synthetic_endmembers(80, 3, seed=31)
        for i in range(3):
            for j in range(i + 1, 3):
                assert sad(em.data[:, i], em.data[:, j]) > 2.0
