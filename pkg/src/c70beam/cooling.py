"""Radiative cooling: ODE integration, closed-form decay-law fits, and the
induced pushforward of temperature distributions.

A hot molecule cools as dT/dt = -Phi(T)/C_V.  For a flux close to a power
law Phi ~ T^(n+1) the decay is captured extremely well by

    T(t; T0) = T0 * (1 + (T0/T_inf)^n)^(-1/n)

with duration-dependent parameters (n, T_inf); any initial temperature
distribution is then bounded above by T_inf after the segment.  The
distribution transform follows from the inverse map and its Jacobian; on
the uniform grid used here it is realized as a mass-conserving linear
pushforward of bin intervals (each image interval is narrower than a bin,
so it splits over at most two destination bins).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from . import _kernels
from .constants import C70_HEAT_CAPACITY_EV_K
from .spectra import EmitterModel, flux_function

__all__ = [
    "CoolingLaw",
    "TemperatureDistribution",
    "integrate_cooling",
    "fit_cooling_law",
    "apply_cooling",
    "power_law_flux",
]


def power_law_flux(prefactor: float, exponent: float):
    """Radiant flux prefactor * T^exponent in eV/s, as a callable."""

    def phi(temperature):
        return prefactor * np.asarray(temperature, dtype=float) ** exponent

    return phi


def _resolve_flux(model, heat_capacity):
    """Accept an EmitterModel or a plain flux callable Phi(T)->eV/s."""
    if isinstance(model, EmitterModel):
        return flux_function(model), model.heat_capacity
    if callable(model):
        return model, heat_capacity or C70_HEAT_CAPACITY_EV_K
    raise TypeError("model must be an EmitterModel or a flux callable")


@dataclass(frozen=True)
class CoolingLaw:
    """Fitted decay-law parameters for one free-flight segment."""

    n: float
    t_infinity: float
    duration: float                  # s
    max_residual_k: float = math.nan
    t0_range: tuple = ()

    def __post_init__(self):
        if self.n <= 0 or self.t_infinity <= 0 or self.duration < 0:
            raise ValueError("cooling law requires n, T_inf > 0 and duration >= 0")

    def temperature(self, t0):
        """Endpoint temperature after the full segment, K (vectorized)."""
        t0 = np.asarray(t0, dtype=float)
        return t0 * (1.0 + (t0 / self.t_infinity) ** self.n) ** (-1.0 / self.n)

    def temperature_at(self, t, t0):
        """Temperature a time t <= duration into the segment.

        Within the power-law family the bound scales as
        T_inf(t) = T_inf * (duration/t)^(1/n), which is what this evaluates.
        """
        t0 = np.asarray(t0, dtype=float)
        if self.duration == 0.0:
            return t0 + 0.0
        frac = t / self.duration
        return t0 * (1.0 + frac * (t0 / self.t_infinity) ** self.n) ** (-1.0 / self.n)

    def initial_temperature(self, t_end):
        """Inverse endpoint map; defined for t_end < t_infinity."""
        t_end = np.asarray(t_end, dtype=float)
        if np.any(t_end >= self.t_infinity):
            raise ValueError("inverse map defined only below t_infinity")
        return t_end * (1.0 - (t_end / self.t_infinity) ** self.n) ** (-1.0 / self.n)

    @classmethod
    def from_distance(cls, n, t_infinity, distance, velocity, **kw):
        return cls(n=n, t_infinity=t_infinity, duration=distance / velocity, **kw)


@dataclass(frozen=True)
class TemperatureDistribution:
    """Mass per temperature bin on a uniform grid.

    Total mass may be below 1 after ionization losses; it never exceeds 1.
    """

    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise ValueError("need len(bin_edges) == len(masses) + 1")
        widths = np.diff(edges)
        if np.any(widths <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if not np.allclose(widths, widths[0], rtol=1e-9):
            raise ValueError("bin grid must be uniform")
        if np.any(masses < -1e-15):
            raise ValueError("masses must be non-negative")
        if masses.sum() > 1.0 + 1e-9:
            raise ValueError("total mass must not exceed 1")
        edges.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "masses", masses)

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def total_mass(self) -> float:
        return float(self.masses.sum())

    def mean(self) -> float:
        """Mass-weighted mean temperature, K."""
        total = self.masses.sum()
        if total <= 0:
            return math.nan
        return float((self.centers * self.masses).sum() / total)

    @classmethod
    def point_mass(cls, temperature, bin_edges, mass=1.0):
        """All mass in the bin containing the given temperature."""
        edges = np.asarray(bin_edges, dtype=float)
        masses = np.zeros(edges.size - 1)
        idx = min(np.searchsorted(edges, temperature, side="right") - 1,
                  masses.size - 1)
        if idx < 0:
            raise ValueError("temperature below the grid")
        masses[idx] = mass
        return cls(edges, masses)

    @classmethod
    def uniform_grid(cls, t_max=10000.0, bin_width=5.0):
        edges = np.arange(0.0, t_max + 0.5 * bin_width, bin_width)
        return edges


def integrate_cooling(t0: float, duration: float, model,
                      heat_capacity: float = None, rtol: float = 1e-8,
                      t_eval=None):
    """Integrate dT/dt = -Phi(T)/C_V from T0 over the given duration.

    model may be an EmitterModel or a flux callable (then heat_capacity
    applies, defaulting to the C70 value).  Returns (times, temperatures)
    arrays; temperatures are monotone non-increasing.
    """
    if not (t0 > 0 and np.isfinite(t0)):
        raise ValueError("t0 must be positive and finite")
    if duration < 0:
        raise ValueError("duration must be non-negative")
    flux, c_v = _resolve_flux(model, heat_capacity)
    if t_eval is None:
        t_eval = np.linspace(0.0, duration, 201)
    if duration == 0.0:
        return np.array([0.0]), np.array([t0])

    def rhs(_t, temp):
        return -np.minimum(flux(np.maximum(temp, 1e-6)), np.inf) / c_v

    sol = solve_ivp(rhs, (0.0, duration), [t0], method="RK45",
                    rtol=rtol, atol=t0 * 1e-12, t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"cooling integration failed: {sol.message}")
    temps = np.minimum.accumulate(sol.y[0])
    return sol.t, temps


def cooling_endpoints(t0_values, duration: float, model, heat_capacity=None,
                      rtol: float = 1e-8):
    """Endpoint temperatures for a batch of initial temperatures.

    Integrates the independent scalar ODEs as one vector system; the shared
    adaptive step control keeps every component well inside the requested
    tolerance for this monotone, smooth decay.
    """
    t0_values = np.asarray(t0_values, dtype=float)
    if duration == 0.0:
        return t0_values.copy()
    flux, c_v = _resolve_flux(model, heat_capacity)

    def rhs(_t, temp):
        return -flux(np.maximum(temp, 1e-6)) / c_v

    sol = solve_ivp(rhs, (0.0, duration), t0_values, method="RK45",
                    rtol=rtol, atol=float(t0_values.min()) * 1e-12)
    if not sol.success:
        raise RuntimeError(f"cooling integration failed: {sol.message}")
    return sol.y[:, -1]


def fit_cooling_law(model, duration: float, t0_range=(1000.0, 3500.0),
                    n_samples: int = 17, heat_capacity=None) -> CoolingLaw:
    """Least-squares fit of (n, T_inf) against ODE endpoint temperatures.

    Samples >= 15 initial temperatures across t0_range, integrates each to
    the end of the segment, and fits the closed-form decay law in
    log-parameters.  The maximum endpoint residual in K is recorded on the
    returned law.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    lo, hi = t0_range
    if not (0 < lo < hi):
        raise ValueError("invalid t0_range")
    n_samples = max(15, n_samples)
    t0s = np.linspace(lo, hi, n_samples)
    ends = cooling_endpoints(t0s, duration, model, heat_capacity)

    def residuals(params):
        n, t_inf = np.exp(params)
        law = t0s * (1.0 + (t0s / t_inf) ** n) ** (-1.0 / n)
        return law - ends

    x0 = np.log([10.0, max(ends.max() * 1.05, hi * 0.01)])
    fit = least_squares(residuals, x0, method="lm", xtol=1e-15, ftol=1e-15,
                        max_nfev=400)
    if not fit.success and np.max(np.abs(fit.fun)) > 1.0:
        raise RuntimeError(
            f"cooling-law fit did not converge; final residual "
            f"{np.max(np.abs(fit.fun)):.3g} K")
    n, t_inf = np.exp(fit.x)
    return CoolingLaw(n=float(n), t_infinity=float(t_inf), duration=duration,
                      max_residual_k=float(np.max(np.abs(fit.fun))),
                      t0_range=(float(lo), float(hi)))


def pushforward_arrays(bin_edges: np.ndarray, law: CoolingLaw):
    """Destination indices and split fractions for the law's endpoint map.

    Each source bin [a, b) maps to the interval [T(a), T(b)); the map is a
    contraction, so the image overlaps at most two destination bins.
    Returns (dst, frac_hi): integer start bin and the mass fraction that
    spills into dst+1.
    """
    width = bin_edges[1] - bin_edges[0]
    img_lo = law.temperature(bin_edges[:-1]) / width
    img_hi = law.temperature(bin_edges[1:]) / width
    nt = bin_edges.size - 1
    dst = np.clip(np.floor(img_lo).astype(np.int64), 0, nt - 1)
    span = img_hi - img_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = (img_hi - (dst + 1.0)) / span
    frac_hi = np.where(span > 1e-12, np.clip(frac, 0.0, 1.0), 0.0)
    return dst, frac_hi


def apply_cooling(dist: TemperatureDistribution, law: CoolingLaw) -> TemperatureDistribution:
    """Push a temperature distribution through one cooling segment.

    Mass-conserving: every bin's image lies strictly below T_inf and is
    split linearly over the destination bins.
    """
    dst, frac_hi = pushforward_arrays(dist.bin_edges, law)
    ones = np.ones_like(dist.masses)
    out, _ = _kernels.cool_scatter(dist.masses[None, :].copy(), dst, frac_hi, ones)
    return TemperatureDistribution(dist.bin_edges, out[0])
