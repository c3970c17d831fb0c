"""Inverse problem: recover the triplet absorption cross section and the
ionization prefactor from normalized ion-yield curves.

The forward model is the full beamline transport; the two unknowns enter
simply (mean photon numbers scale with sigma, survival exponents with
A_ion), so one frozen TransportPlan per scenario serves the entire
search.  The fit runs weighted least squares on log-parameters from a 3x3
multistart grid spanning the bounds; A_ion is only weakly constrained by
the data, which the curvature-based sensitivities make visible.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .beamline import BeamlineConfig, TransportPlan, build_transport_plan, run_plan
from .cooling import TemperatureDistribution
from .spectra import EmitterModel, default_emitter_model

__all__ = [
    "Scenario",
    "Observation",
    "FitProblem",
    "FitResult",
    "forward_curves",
    "fit_parameters",
    "temperature_distribution_at_g1",
    "load_observations",
    "save_observations",
]

SIGMA_BOUNDS_CM2 = (1e-18, 1e-16)
A_ION_BOUNDS = (1e7, 1e13)
_REL_FLOOR = 1e-3


@dataclass(frozen=True)
class Scenario:
    velocity: float         # m/s
    power_scale: float      # P / P0, dimensionless
    n_beams: int

    def power_w(self, config: BeamlineConfig) -> float:
        return self.power_scale * config.power_reference_w


@dataclass(frozen=True)
class Observation:
    scenario: Scenario
    value: float            # normalized ion yield
    weight: float = 1.0


@dataclass(frozen=True)
class FitProblem:
    observations: tuple
    sigma_bounds: tuple = SIGMA_BOUNDS_CM2
    a_ion_bounds: tuple = A_ION_BOUNDS

    def __post_init__(self):
        obs = tuple(self.observations)
        if len(obs) < 2:
            raise ValueError("need at least two observations")
        powers = {o.scenario.power_scale for o in obs}
        velocities = {o.scenario.velocity for o in obs}
        if len(powers) < 2 or len(velocities) < 2:
            raise ValueError(
                "identifiability requires observations spanning at least "
                "two powers and two velocities")
        object.__setattr__(self, "observations", obs)


@dataclass(frozen=True)
class FitResult:
    sigma_t1_cm2: float
    a_ion: float
    residual_norm: float
    sensitivity: dict               # curvature of the objective per log10 param
    converged: bool
    n_evaluations: int
    objective_history: tuple = ()

    def params(self) -> dict:
        return {"sigma_t1_cm2": self.sigma_t1_cm2, "a_ion": self.a_ion}


def build_plans(config: BeamlineConfig, scenarios, model: EmitterModel = None):
    """One TransportPlan per unique (velocity, n_beams)."""
    if model is None:
        model = default_emitter_model()
    plans = {}
    for sc in scenarios:
        key = (sc.velocity, sc.n_beams)
        if key not in plans:
            plans[key] = build_transport_plan(config, model, sc.velocity,
                                              sc.n_beams)
    return plans


def forward_curves(params: dict, scenarios, config: BeamlineConfig,
                   model: EmitterModel = None, plans: dict = None,
                   n_jobs: int = 2) -> np.ndarray:
    """Normalized ion yield for each scenario (one transport per scenario)."""
    scenarios = list(scenarios)
    if plans is None:
        plans = build_plans(config, scenarios, model)
    sigma = params["sigma_t1_cm2"]
    a_ion = params["a_ion"]

    def one(sc):
        plan = plans[(sc.velocity, sc.n_beams)]
        return run_plan(plan, sc.power_scale, sigma, a_ion,
                        with_detector=False).ion_yield

    if n_jobs and n_jobs > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return np.array(list(pool.map(one, scenarios)))
    return np.array([one(sc) for sc in scenarios])


def _multistart_grid(bounds_a, bounds_b):
    """3x3 interior grid of the bounded log-parameter box."""
    def interior(lo, hi):
        l0, l1 = math.log10(lo), math.log10(hi)
        return [l0 + (i + 0.5) * (l1 - l0) / 3.0 for i in range(3)]

    return [(a, b) for a in interior(*bounds_a) for b in interior(*bounds_b)]


def fit_parameters(problem: FitProblem, config: BeamlineConfig,
                   model: EmitterModel = None, n_jobs: int = 2,
                   max_nfev: int = 40) -> FitResult:
    """Weighted least squares on log10(sigma), log10(A_ion), multistarted.

    Residuals are relative: (model - observed) / max(observed, 1e-3),
    scaled by sqrt(weight); the curves span decades so absolute residuals
    would let the largest yields dominate.
    """
    if model is None:
        model = default_emitter_model()
    scenarios = [o.scenario for o in problem.observations]
    observed = np.array([o.value for o in problem.observations])
    sqw = np.sqrt(np.array([o.weight for o in problem.observations]))
    denom = np.maximum(np.abs(observed), _REL_FLOOR)
    plans = build_plans(config, scenarios, model)
    history = []

    def residuals(logp):
        params = {"sigma_t1_cm2": 10.0 ** logp[0], "a_ion": 10.0 ** logp[1]}
        yields = forward_curves(params, scenarios, config, plans=plans,
                                n_jobs=n_jobs)
        r = (yields - observed) / denom * sqw
        history.append(float(r @ r))
        return r

    lb = [math.log10(problem.sigma_bounds[0]), math.log10(problem.a_ion_bounds[0])]
    ub = [math.log10(problem.sigma_bounds[1]), math.log10(problem.a_ion_bounds[1])]
    best = None
    any_success = False
    for start in _multistart_grid(problem.sigma_bounds, problem.a_ion_bounds):
        fit = least_squares(residuals, np.array(start), bounds=(lb, ub),
                            method="trf", xtol=1e-10, ftol=1e-8,
                            max_nfev=max_nfev, diff_step=1e-4)
        any_success = any_success or fit.success
        if best is None or fit.cost < best.cost:
            best = fit
    if best is None:
        raise RuntimeError("all fit starts failed")

    # curvature of the half-sum-of-squares objective along each log10 axis
    h = 0.05
    f0 = best.cost
    sens = {}
    for i, name in enumerate(("sigma_t1_cm2", "a_ion")):
        xp = best.x.copy()
        xm = best.x.copy()
        xp[i] += h
        xm[i] -= h
        fp = 0.5 * float(np.sum(residuals(xp) ** 2))
        fm = 0.5 * float(np.sum(residuals(xm) ** 2))
        sens[name] = (fp - 2.0 * f0 + fm) / h ** 2

    if not any_success:
        raise RuntimeError(
            f"no fit start converged; best residual norm "
            f"{math.sqrt(2.0 * best.cost):.3g} at "
            f"sigma={10.0 ** best.x[0]:.3g} cm^2, a_ion={10.0 ** best.x[1]:.3g}")

    return FitResult(
        sigma_t1_cm2=10.0 ** best.x[0], a_ion=10.0 ** best.x[1],
        residual_norm=float(math.sqrt(2.0 * best.cost)),
        sensitivity=sens, converged=bool(best.success),
        n_evaluations=len(history), objective_history=tuple(history))


def temperature_distribution_at_g1(config: BeamlineConfig, velocity: float,
                                   power_scale: float, n_beams: int,
                                   params: dict = None,
                                   model: EmitterModel = None,
                                   plan: TransportPlan = None):
    """Temperature distribution entering the interferometer.

    Returns (distribution normalized to unit mass, surviving fraction).
    The vertical coordinate is irrelevant for interference, so the state
    is marginalized over y.
    """
    params = params or {}
    sigma = params.get("sigma_t1_cm2", config.sigma_t1_cm2)
    a_ion = params.get("a_ion", config.a_ion)
    if plan is None:
        if model is None:
            model = default_emitter_model()
        plan = build_transport_plan(config, model, velocity, n_beams)
    res = run_plan(plan, power_scale, sigma, a_ion, with_detector=False)
    marginal = res.state_at_g1.temperature_marginal()
    surviving = marginal.total_mass()
    if surviving <= 0:
        raise RuntimeError("no surviving mass at the first grating")
    return (TemperatureDistribution(marginal.bin_edges,
                                    marginal.masses / surviving), surviving)


# ---------------------------------------------------------------------------
# measured-curve CSV
# ---------------------------------------------------------------------------

_CSV_HEADER = "v_mps,power_W,n_beams,ion_yield_normalized"


def load_observations(path, config: BeamlineConfig):
    """Read `v_mps,power_W,n_beams,ion_yield_normalized[,weight]` rows."""
    obs = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    header_seen = False
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if not line.replace(" ", "").startswith(_CSV_HEADER):
                raise ValueError(f"{path}: line {ln}: expected header "
                                 f"'{_CSV_HEADER}[,weight]', got {line!r}")
            header_seen = True
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (4, 5):
            raise ValueError(f"{path}: line {ln}: expected 4 or 5 fields, "
                             f"got {len(parts)}")
        names = ("v_mps", "power_W", "n_beams", "ion_yield_normalized", "weight")
        vals = []
        for name, part in zip(names, parts):
            try:
                vals.append(float(part))
            except ValueError:
                raise ValueError(f"{path}: line {ln}: field {name} not a "
                                 f"number: {part!r}") from None
        weight = vals[4] if len(vals) == 5 else 1.0
        obs.append(Observation(
            scenario=Scenario(velocity=vals[0],
                              power_scale=vals[1] / config.power_reference_w,
                              n_beams=int(vals[2])),
            value=vals[3], weight=weight))
    if not header_seen:
        raise ValueError(f"{path}: missing header line")
    return obs


def save_observations(path, observations, config: BeamlineConfig,
                      header_comment: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(_CSV_HEADER + ",weight\n")
        for o in observations:
            fh.write(f"{o.scenario.velocity:.10g},"
                     f"{o.scenario.power_w(config):.10g},"
                     f"{o.scenario.n_beams},{o.value:.10g},{o.weight:.10g}\n")
