"""Reduction factor, its temperature average, and visibility curves."""

from dataclasses import replace

import numpy as np
import pytest
from scipy.special import sici

from c70beam.constants import C_M_S, HBAR_EV_S
from c70beam.cooling import TemperatureDistribution
from c70beam.decoherence import (InterferometerGeometry, mean_reduction,
                                 predict_visibility_curve, reduction_factor,
                                 reduction_factors, talbot_length,
                                 time_loss_profile)
from c70beam.spectra import AbsorptionCrossSection, EmitterModel, \
    total_photon_rate

EV = 1.0 / HBAR_EV_S

NO_COOLING = lambda t: np.zeros_like(np.asarray(t, dtype=float))


@pytest.fixture(scope="module")
def geom(config):
    return InterferometerGeometry.for_band(config, 190.0)


def test_talbot_length_consistency(config):
    # L/L_T near 1 at 190 m/s (first order) and near 2 at 100 m/s (second)
    lt190 = talbot_length(config.grating_period_m, 190.0)
    lt100 = talbot_length(config.grating_period_m, 100.0)
    assert config.grating_separation_m / lt190 == pytest.approx(1.0, abs=0.1)
    assert config.grating_separation_m / lt100 == pytest.approx(2.0, abs=0.2)


def test_no_emission_no_decoherence(geom):
    dead = EmitterModel(cross_section=AbsorptionCrossSection(
        np.array([1.6, 6.0]), np.array([0.0, 0.0])))
    assert reduction_factor(2500.0, geom, dead) == 1.0


def test_unheated_molecules_keep_coherence(config, model):
    for v in (100.0, 190.0):
        g = InterferometerGeometry.for_band(config, v)
        assert reduction_factor(900.0, g, model) > 0.99


def test_monochromatic_constant_rate_closed_form(geom):
    # narrow emission line, cooling disabled: the time integral of
    # 1 - sinc over the triangular path profile is 2(L - Si(kL)/k)/v
    e0, half_w = 2.5, 5e-4
    xs = AbsorptionCrossSection(np.array([e0 - half_w, e0, e0 + half_w]),
                                np.array([0.0, 3e-17, 0.0]))
    m = EmitterModel(cross_section=xs, omega_min=(e0 - 2 * half_w) * EV,
                     omega_max=(e0 + 2 * half_w) * EV)
    t0 = 2400.0
    gamma0 = total_photon_rate(t0, m)
    kappa = e0 * EV * geom.grating_period_m / (C_M_S * geom.talbot_length_m)
    si, _ = sici(kappa * geom.grating_separation_m)
    loss = 2.0 * gamma0 / geom.velocity \
        * (geom.grating_separation_m - si / kappa)
    expected = np.exp(-loss)
    got = reduction_factor(t0, geom, m, flux=NO_COOLING)
    assert got == pytest.approx(expected, rel=1e-6)


def test_time_profile_symmetry_without_cooling(geom, model):
    t, profile = time_loss_profile(2600.0, geom, model, flux=NO_COOLING)
    np.testing.assert_allclose(profile, profile[::-1], rtol=1e-9)


def test_first_half_dominates_with_cooling(geom, model):
    t, profile = time_loss_profile(2600.0, geom, model)
    n = t.size // 2
    first = np.trapezoid(profile[:n + 1], t[:n + 1])
    second = np.trapezoid(profile[n:], t[n:])
    assert first > 1.5 * second


def test_reduction_monotone_in_temperature(geom, model):
    t0s = np.array([1500.0, 2000.0, 2500.0, 3000.0, 3500.0])
    r = reduction_factors(t0s, geom, model)
    assert np.all(np.diff(r) < 0)
    assert np.all((r > 0) & (r <= 1))


def test_long_wavelength_gate(geom, model):
    # growing the grating period shrinks w d/c * path/L_T ~ 1/d, so the
    # emitted photons stop resolving the paths and R returns to 1
    opened = replace(geom, grating_period_m=geom.grating_period_m * 1e3)
    assert reduction_factor(2800.0, opened, model) > 0.999
    assert reduction_factor(2800.0, geom, model) < 0.1


def test_mean_reduction_delta_and_mixture(geom, model, config):
    edges = config.t_edges()
    d1 = TemperatureDistribution.point_mass(2200.0, edges)
    r1 = mean_reduction(d1, geom, model)
    assert r1 == pytest.approx(
        reduction_factor(d1.centers[np.argmax(d1.masses)], geom, model),
        rel=1e-12)
    d2 = TemperatureDistribution.point_mass(2800.0, edges)
    r2 = mean_reduction(d2, geom, model)
    mix_masses = 0.3 * d1.masses + 0.7 * d2.masses
    mix = TemperatureDistribution(edges, mix_masses)
    # exact convex combination up to the trajectory-batch ODE tolerance
    assert mean_reduction(mix, geom, model) == pytest.approx(
        0.3 * r1 + 0.7 * r2, rel=1e-6)


def test_mean_reduction_vs_sampling(geom, model, config, rng):
    edges = config.t_edges()
    centers = 0.5 * (edges[:-1] + edges[1:])
    weights = np.exp(-0.5 * ((centers - 2300.0) / 220.0) ** 2)
    weights /= weights.sum()
    dist = TemperatureDistribution(edges, weights)
    binned = mean_reduction(dist, geom, model)

    n = 2000
    samples = rng.choice(centers, p=weights, size=n) + rng.uniform(-2.5, 2.5, n)
    r_samples = reduction_factors(samples, geom, model)
    se = r_samples.std(ddof=1) / np.sqrt(n)
    assert abs(binned - r_samples.mean()) <= 3.0 * se


def test_model_threshold_at_2900k(config, model):
    # with the calibrated emitter, molecules entering at 2900 K have lost
    # essentially all fringe contrast in both bands
    for v in (100.0, 190.0):
        g = InterferometerGeometry.for_band(config, v)
        assert reduction_factor(2900.0, g, model) < 0.1


def test_visibility_curve_anchored_and_monotone(config, model):
    preds = predict_visibility_curve(config, 190.0, [0.0, 4.0, 8.0],
                                     model=model)
    assert preds[0].visibility == pytest.approx(0.47, abs=1e-12)
    vis = [p.visibility for p in preds]
    assert vis[0] > vis[1] > vis[2]
    assert all(p.visibility <= config.baseline_visibility + 1e-12
               for p in preds)
    assert all(0.0 <= p.r_mean <= 1.0 for p in preds)


def test_geometry_validation(config):
    with pytest.raises(ValueError):
        InterferometerGeometry(grating_period_m=-1e-6,
                               grating_separation_m=0.38, velocity=100.0)
    with pytest.raises(ValueError):
        InterferometerGeometry(grating_period_m=1e-6,
                               grating_separation_m=0.38, velocity=100.0,
                               baseline_visibility=1.4)
    with pytest.raises(ValueError):
        reduction_factor(-5.0, InterferometerGeometry.for_band(config, 190.0),
                         None)
