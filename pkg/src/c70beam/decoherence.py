"""Visibility loss from thermal photon emission inside the interferometer.

A photon emitted at time t after the first grating carries which-path
information if its wavelength resolves the local separation of the
interfering paths.  For the symmetric three-grating geometry the
separation profile is triangular int, peaking at the central grating,
and the fringe reduction factor for a molecule entering at temperature T0
is

    R(T0, v) = exp( - int_0^{2L/v} dt int dw rate(w, T(t; T0))
                     * [1 - sinc(w d / c * (L - |v t - L|) / L_T)] )

with T(t; T0) the radiative cooling trajectory.  Band-averaged
predictions weight R over the temperature distribution at the first
grating and are reported relative to the unheated baseline, which pins
the zero-power visibility to the observed 47%.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .beamline import BeamlineConfig, build_transport_plan, run_plan
from .constants import C70_MASS_U, C_M_S, H_J_S, AMU_KG
from .cooling import TemperatureDistribution
from .spectra import EmitterModel, default_emitter_model, flux_function, gauss_grid
from .thermometry import temperature_distribution_at_g1

__all__ = [
    "InterferometerGeometry",
    "VisibilityPrediction",
    "talbot_length",
    "reduction_factor",
    "reduction_factors",
    "mean_reduction",
    "predict_visibility_curve",
    "time_loss_profile",
]


def talbot_length(grating_period_m: float, velocity: float,
                  mass_u: float = C70_MASS_U) -> float:
    """Near-field self-imaging distance d^2 / lambda_dB = d^2 m v / h."""
    return grating_period_m ** 2 * mass_u * AMU_KG * velocity / H_J_S


@dataclass(frozen=True)
class InterferometerGeometry:
    grating_period_m: float
    grating_separation_m: float
    velocity: float
    baseline_visibility: float = 0.47
    mass_u: float = C70_MASS_U

    def __post_init__(self):
        if self.grating_period_m <= 0 or self.grating_separation_m <= 0 \
                or self.velocity <= 0:
            raise ValueError("geometry lengths and velocity must be positive")
        if not 0.0 <= self.baseline_visibility <= 1.0:
            raise ValueError("baseline visibility must lie in [0, 1]")

    @property
    def talbot_length_m(self) -> float:
        return talbot_length(self.grating_period_m, self.velocity, self.mass_u)

    @property
    def transit_time_s(self) -> float:
        return 2.0 * self.grating_separation_m / self.velocity

    @classmethod
    def for_band(cls, config: BeamlineConfig, velocity: float,
                 **kw) -> "InterferometerGeometry":
        return cls(grating_period_m=config.grating_period_m,
                   grating_separation_m=config.grating_separation_m,
                   velocity=velocity,
                   baseline_visibility=config.baseline_visibility,
                   mass_u=config.molecule_mass_u, **kw)


@dataclass(frozen=True)
class VisibilityPrediction:
    power_w: float
    r_mean: float                   # temperature-averaged reduction factor
    visibility: float               # V0 * r_mean / r_mean(power=0)
    mean_t_g1: float                # K
    surviving_fraction: float

    def __post_init__(self):
        if not (0.0 <= self.r_mean <= 1.0 + 1e-12):
            raise ValueError("reduction factor must lie in [0, 1]")


def _time_quadrature(transit: float, n_panels: int):
    """Composite Simpson nodes/weights on [0, transit], split at the kink."""
    n_half = max(32, n_panels // 2)
    if n_half % 2:
        n_half += 1
    nodes = []
    weights = []
    for a, b in ((0.0, 0.5 * transit), (0.5 * transit, transit)):
        x = np.linspace(a, b, n_half + 1)
        w = np.ones(n_half + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= (b - a) / n_half / 3.0
        nodes.append(x)
        weights.append(w)
    t = np.concatenate([nodes[0], nodes[1][1:]])
    w = np.concatenate([weights[0][:-1],
                        [weights[0][-1] + weights[1][0]],
                        weights[1][1:]])
    return t, w


def _spectral_arrays(geom: InterferometerGeometry, model: EmitterModel):
    from .constants import C_CM_S, HBAR_EV_S

    omega, gw = gauss_grid(model)
    sigma = model.cross_section.sigma_at_omega(omega)
    spec_w = (omega * omega) / (np.pi ** 2 * C_CM_S ** 2) * sigma * gw
    hw = HBAR_EV_S * omega
    sinc_arg = omega * geom.grating_period_m / C_M_S
    return hw, spec_w, sinc_arg


def _trajectories(t0_values, transit, t_nodes, model, flux=None):
    """Cooling trajectories for a batch of initial temperatures."""
    t0_values = np.atleast_1d(np.asarray(t0_values, dtype=float))
    if flux is None:
        phi = flux_function(model)
    else:
        phi = flux
    c_v = model.heat_capacity

    test = np.asarray(phi(t0_values))
    if np.all(test == 0.0):
        return np.tile(t0_values[:, None], (1, t_nodes.size))

    def rhs(_t, temp):
        return -np.asarray(phi(np.maximum(temp, 1e-6))) / c_v

    sol = solve_ivp(rhs, (0.0, transit), t0_values, method="RK45",
                    rtol=1e-8, atol=1e-6, t_eval=t_nodes)
    if not sol.success:
        raise RuntimeError(f"trajectory integration failed: {sol.message}")
    return sol.y


def reduction_factors(t0_values, geom: InterferometerGeometry,
                      model: EmitterModel, flux=None,
                      n_time_panels: int = 128) -> np.ndarray:
    """Vectorized reduction factor over a batch of initial temperatures."""
    t0_values = np.atleast_1d(np.asarray(t0_values, dtype=float))
    if np.any(t0_values <= 0) or not np.all(np.isfinite(t0_values)):
        raise ValueError("initial temperatures must be positive and finite")
    transit = geom.transit_time_s
    t_nodes, t_w = _time_quadrature(transit, n_time_panels)
    path = (geom.grating_separation_m
            - np.abs(geom.velocity * t_nodes - geom.grating_separation_m)) \
        / geom.talbot_length_m
    trajs = _trajectories(t0_values, transit, t_nodes, model, flux)
    hw, spec_w, sinc_arg = _spectral_arrays(geom, model)
    losses = _kernels.decoherence_loss(trajs, t_w, hw, spec_w, sinc_arg, path,
                                       model.stat_coef)
    return np.exp(-losses)


def reduction_factor(t0: float, geom: InterferometerGeometry,
                     model: EmitterModel, flux=None,
                     n_time_panels: int = 128) -> float:
    """Fringe-visibility reduction factor for one initial temperature."""
    return float(reduction_factors([t0], geom, model, flux=flux,
                                   n_time_panels=n_time_panels)[0])


def time_loss_profile(t0: float, geom: InterferometerGeometry,
                      model: EmitterModel, flux=None,
                      n_time_panels: int = 128):
    """Per-time-node decoherence integrand (for structural checks).

    Returns (t_nodes, integrand): the frequency-integrated loss rate along
    the transit.  Without cooling the profile is symmetric about the
    central grating; with cooling the first half dominates.
    """
    from .constants import K_B_EV

    transit = geom.transit_time_s
    t_nodes, _ = _time_quadrature(transit, n_time_panels)
    path = (geom.grating_separation_m
            - np.abs(geom.velocity * t_nodes - geom.grating_separation_m)) \
        / geom.talbot_length_m
    traj = _trajectories([t0], transit, t_nodes, model, flux)[0]
    hw, spec_w, sinc_arg = _spectral_arrays(geom, model)
    u = np.outer(path, sinc_arg)
    with np.errstate(invalid="ignore", divide="ignore"):
        oms = 1.0 - np.sinc(u / np.pi)
    small = np.abs(u) < 1e-4
    if small.any():
        u2 = u[small] ** 2
        oms[small] = u2 / 6.0 * (1.0 - u2 / 20.0)
    x = np.outer(1.0 / (K_B_EV * traj), hw)
    rate = np.exp(-x - model.stat_coef * x * x) * spec_w
    return t_nodes, (rate * oms).sum(axis=1)


def mean_reduction(f_g1: TemperatureDistribution, geom: InterferometerGeometry,
                   model: EmitterModel, flux=None) -> float:
    """Temperature-averaged reduction factor sum_bins f(T0) R(T0)."""
    total = f_g1.total_mass()
    if abs(total - 1.0) > 1e-6:
        raise ValueError("f_g1 must be normalized to unit mass")
    mask = f_g1.masses > 0.0
    if not mask.any():
        raise ValueError("empty distribution")
    r = reduction_factors(f_g1.centers[mask], geom, model, flux=flux)
    return float((f_g1.masses[mask] * r).sum())


def predict_visibility_curve(config: BeamlineConfig, velocity: float,
                             powers_w, params: dict = None,
                             model: EmitterModel = None,
                             n_beams: int = None):
    """Visibility predictions over a heating-power sweep for one band.

    The reported visibility is V0 * <R>(P) / <R>(0): the observed
    zero-power fringe contrast already contains whatever negligible
    decoherence the unheated 900 K beam suffers, so the curve is anchored
    there exactly.
    """
    if model is None:
        model = default_emitter_model()
    band = config.band(velocity)
    if n_beams is None:
        n_beams = band.n_beams
    geom = InterferometerGeometry.for_band(config, velocity)
    plan = build_transport_plan(config, model, velocity, n_beams)

    dists = []
    for p in powers_w:
        if p < 0:
            raise ValueError("power must be non-negative")
        dist, surv = temperature_distribution_at_g1(
            config, velocity, p / config.power_reference_w, n_beams,
            params=params, plan=plan)
        dists.append((p, dist, surv))
    dist0, _ = temperature_distribution_at_g1(config, velocity, 0.0, n_beams,
                                              params=params, plan=plan)

    occupied = dist0.masses > 0.0
    for _, dist, _ in dists:
        occupied |= dist.masses > 0.0
    centers = dist0.centers
    r_values = np.zeros(centers.size)
    r_values[occupied] = reduction_factors(centers[occupied], geom, model)

    r0 = float((dist0.masses * r_values).sum())
    out = []
    for p, dist, surv in dists:
        r_mean = float((dist.masses * r_values).sum())
        out.append(VisibilityPrediction(
            power_w=p, r_mean=r_mean,
            visibility=geom.baseline_visibility * r_mean / r0,
            mean_t_g1=dist.mean(), surviving_fraction=surv))
    return out
