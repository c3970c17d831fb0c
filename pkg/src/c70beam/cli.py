"""Scenario runner: config-driven sweeps written as CSV plus plot stubs.

Every run resolves its full configuration, executes one subcommand, and
writes the outputs together with a reproducibility record (resolved
config, library versions, seed).  Identical manifests produce
byte-identical CSV files; nothing is written if the run fails.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .beamline import BeamlineConfig, build_transport_plan, monte_carlo_oracle, \
    run_plan
from .cooling import fit_cooling_law, integrate_cooling
from .decoherence import predict_visibility_curve
from .spectra import AbsorptionCrossSection, C70_FLUX_POWER_LAW, EmitterModel, \
    calibrate_cross_section, default_cross_section_template, \
    spectral_emission_rate
from .thermometry import fit_parameters, FitProblem, load_observations, \
    temperature_distribution_at_g1

__all__ = ["RunManifest", "run", "main"]


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


@dataclass
class RunManifest:
    """Resolved invocation: subcommand, inputs, outputs, overrides, seed."""

    subcommand: str
    out_dir: Path
    config_path: Path = None
    cross_section_path: Path = None
    seed: int = 0
    overrides: tuple = ()
    options: dict = field(default_factory=dict)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _parse_list(text, cast=float):
    try:
        return [cast(p) for p in str(text).split(",") if p.strip() != ""]
    except ValueError:
        raise CliError("usage-error", f"cannot parse list argument: {text!r}")


def _load_config(manifest: RunManifest) -> BeamlineConfig:
    if manifest.config_path is None:
        cfg = BeamlineConfig()
    else:
        path = Path(manifest.config_path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError("config-error", f"{path}: no such file")
        except json.JSONDecodeError as exc:
            raise CliError("config-error",
                           f"{path}: line {exc.lineno}: {exc.msg}")
        try:
            cfg = BeamlineConfig.from_dict(raw)
        except (ValueError, TypeError, KeyError) as exc:
            raise CliError("config-error", f"{path}: {exc}")
    if manifest.overrides:
        d = cfg.to_dict()
        for item in manifest.overrides:
            if "=" not in item:
                raise CliError("usage-error",
                               f"--set expects key=value, got {item!r}")
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in d or key in ("beams", "bands"):
                raise CliError("config-error",
                               f"--set: unknown or non-scalar field {key!r}")
            try:
                d[key] = json.loads(value)
            except json.JSONDecodeError:
                raise CliError("config-error",
                               f"--set {key}: cannot parse value {value!r}")
        try:
            cfg = BeamlineConfig.from_dict(d)
        except (ValueError, TypeError) as exc:
            raise CliError("config-error", f"--set: {exc}")
    return cfg


def _load_model(manifest: RunManifest) -> EmitterModel:
    """Emitter model: calibrated built-in template, or the user's table as-is."""
    if manifest.cross_section_path is None:
        template = default_cross_section_template()
        calibrated, _ = calibrate_cross_section(template, C70_FLUX_POWER_LAW)
        return EmitterModel(cross_section=calibrated)
    try:
        table = AbsorptionCrossSection.from_csv(manifest.cross_section_path)
    except FileNotFoundError:
        raise CliError("data-error",
                       f"{manifest.cross_section_path}: no such file")
    except ValueError as exc:
        raise CliError("data-error", str(exc))
    return EmitterModel(cross_section=table)


def _header(manifest, cfg, extra: dict) -> str:
    lines = [f"# c70beam {manifest.subcommand} v{__version__}"]
    for k, v in extra.items():
        lines.append(f"# {k}={_fmt(v)}")
    lines.append(f"# seed={manifest.seed}")
    lines.append("# model=colored-emitter thermal emission, "
                 "finite-heat-capacity correction, Arrhenius ionization")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands (each returns {relative filename: text content})
# ---------------------------------------------------------------------------

def _cmd_spectrum(manifest, cfg, model):
    temps = _parse_list(manifest.options.get("temperatures", "2000,2250,2500,2750,3000"))
    n_omega = int(manifest.options.get("n_omega", 400))
    omegas = np.linspace(model.omega_min, model.omega_max, n_omega)
    rows = ["omega_rad_s,T_K,rate_per_rad"]
    for t in temps:
        rates = spectral_emission_rate(omegas, t, model)
        rows.extend(f"{_fmt(w)},{_fmt(t)},{_fmt(r)}"
                    for w, r in zip(omegas, rates))
    head = _header(manifest, cfg, {"n_omega": n_omega,
                                   "temperatures_K": ",".join(map(_fmt, temps))})
    plot = _plot_stub("spectrum.csv", "omega_rad_s", "rate_per_rad",
                      group="T_K", logy=True,
                      title="spectral photon emission rate")
    return {"spectrum.csv": head + "\n".join(rows) + "\n",
            "plot_spectrum.py": plot}


def _segment_catalogue(cfg, velocity):
    return [
        ("inter_beam", cfg.inter_beam_distance_m / velocity),
        ("to_g1", cfg.heating_to_grating_m / velocity),
        ("g1_to_detector", 2.0 * cfg.grating_separation_m / velocity),
        ("detector_span", cfg.ionization_span_m / velocity),
    ]


def _cmd_cool(manifest, cfg, model):
    t0 = float(manifest.options.get("t0", 3000.0))
    velocity = float(manifest.options.get("velocity", 100.0))
    out = {}
    laws = {}
    for name, duration in _segment_catalogue(cfg, velocity):
        times, temps = integrate_cooling(t0, duration, model)
        rows = ["t_s,T_K"] + [f"{_fmt(t)},{_fmt(T)}" for t, T in zip(times, temps)]
        head = _header(manifest, cfg, {"segment": name, "t0_K": t0,
                                       "velocity_mps": velocity,
                                       "duration_s": duration})
        out[f"cooling_trajectory_{name}.csv"] = head + "\n".join(rows) + "\n"
        law = fit_cooling_law(model, duration)
        laws[name] = {"n": law.n, "t_infinity_K": law.t_infinity,
                      "duration_s": law.duration,
                      "max_residual_K": law.max_residual_k,
                      "t0_range_K": list(law.t0_range)}
    out["cooling_laws.json"] = json.dumps(
        {"velocity_mps": velocity, "segments": laws}, indent=2, sort_keys=True) + "\n"
    return out


def _cmd_ion_yield(manifest, cfg, model):
    velocities = _parse_list(manifest.options.get("velocities",
                                                  "60,80,100,120,140,160,180,200,220,240"))
    powers = _parse_list(manifest.options.get("powers", "2,3,4,5,6,8,10"))
    n_beams = int(manifest.options.get("n_beams", 10))
    plans = {v: build_transport_plan(cfg, model, v, n_beams) for v in velocities}
    out = {}
    for p in powers:
        rows = ["v_mps,value"]
        for v in velocities:
            res = run_plan(plans[v], p / cfg.power_reference_w,
                           cfg.sigma_t1_cm2, cfg.a_ion, with_detector=False)
            rows.append(f"{_fmt(v)},{_fmt(res.ion_yield)}")
        head = _header(manifest, cfg, {"power_W": p, "n_beams": n_beams,
                                       "sigma_t1_cm2": cfg.sigma_t1_cm2,
                                       "a_ion_s": cfg.a_ion})
        out[f"ion_yield_P{_fmt(p)}W_N{n_beams}.csv"] = head + "\n".join(rows) + "\n"
    out["plot_ion_yield.py"] = _plot_stub("ion_yield_P*W_N*.csv", "v_mps",
                                          "value", logy=True,
                                          title="normalized ion yield")
    return out


def _cmd_detector(manifest, cfg, model):
    velocity = float(manifest.options.get("velocity", 100.0))
    beam_counts = _parse_list(manifest.options.get("n_beams", "1,2,4,10"), int)
    powers = _parse_list(manifest.options.get(
        "powers", "0,1,2,3,4,5,6,7,8,9,10"))
    out = {}
    for nb in beam_counts:
        plan = build_transport_plan(cfg, model, velocity, nb)
        rows = ["power_W,value"]
        for p in powers:
            res = run_plan(plan, p / cfg.power_reference_w, cfg.sigma_t1_cm2,
                           cfg.a_ion)
            rows.append(f"{_fmt(p)},{_fmt(res.detector_rate_change)}")
        head = _header(manifest, cfg, {"velocity_mps": velocity, "n_beams": nb})
        out[f"detector_N{nb}.csv"] = head + "\n".join(rows) + "\n"
    out["plot_detector.py"] = _plot_stub("detector_N*.csv", "power_W", "value",
                                         title="relative detection-rate change")
    return out


def _cmd_fit(manifest, cfg, model):
    data = manifest.options.get("data")
    if not data:
        raise CliError("usage-error", "fit requires --data <measured-curves.csv>")
    try:
        obs = load_observations(data, cfg)
    except FileNotFoundError:
        raise CliError("data-error", f"{data}: no such file")
    except ValueError as exc:
        raise CliError("data-error", str(exc))
    try:
        problem = FitProblem(tuple(obs))
    except ValueError as exc:
        raise CliError("data-error", f"{data}: {exc}")
    fit = fit_parameters(problem, cfg, model=model)
    payload = {
        "sigma_t1_cm2": fit.sigma_t1_cm2,
        "a_ion_s": fit.a_ion,
        "residual_norm": fit.residual_norm,
        "sensitivity": fit.sensitivity,
        "converged": fit.converged,
        "n_evaluations": fit.n_evaluations,
        "n_observations": len(obs),
    }
    return {"fit_result.json": json.dumps(payload, indent=2, sort_keys=True) + "\n"}


def _cmd_tempdist(manifest, cfg, model):
    velocity = float(manifest.options.get("velocity", 100.0))
    powers = _parse_list(manifest.options.get("powers", "0,2,4,6,8,10"))
    n_beams = int(manifest.options.get("n_beams",
                                       cfg.band(velocity).n_beams
                                       if any(abs(b.center - velocity) < 1e-9
                                              for b in cfg.bands) else 10))
    plan = build_transport_plan(cfg, model, velocity, n_beams)
    out = {}
    for p in powers:
        dist, surv = temperature_distribution_at_g1(
            cfg, velocity, p / cfg.power_reference_w, n_beams, plan=plan)
        rows = ["T_K,mass"]
        rows.extend(f"{_fmt(c)},{_fmt(m)}"
                    for c, m in zip(dist.centers, dist.masses))
        head = _header(manifest, cfg, {
            "velocity_mps": velocity, "power_W": p, "n_beams": n_beams,
            "surviving_fraction": surv, "mean_T_K": dist.mean()})
        out[f"tempdist_P{_fmt(p)}W.csv"] = head + "\n".join(rows) + "\n"
    out["plot_tempdist.py"] = _plot_stub("tempdist_P*W.csv", "T_K", "mass",
                                         title="temperature distribution at G1")
    return out


def _cmd_visibility(manifest, cfg, model):
    velocities = _parse_list(manifest.options.get(
        "velocities", ",".join(_fmt(b.center) for b in cfg.bands)))
    powers = _parse_list(manifest.options.get(
        "powers", "0,1,2,3,4,5,6,7,8,9,10"))
    out = {}
    for v in velocities:
        try:
            band = cfg.band(v)
        except KeyError as exc:
            raise CliError("config-error", str(exc))
        preds = predict_visibility_curve(cfg, v, powers, model=model)
        rows = ["power_W,mean_T_G1_K,R,visibility"]
        rows.extend(
            f"{_fmt(p.power_w)},{_fmt(p.mean_t_g1)},{_fmt(p.r_mean)},"
            f"{_fmt(p.visibility)}" for p in preds)
        head = _header(manifest, cfg, {
            "velocity_mps": v, "n_beams": band.n_beams,
            "talbot_order": band.talbot_order,
            "baseline_visibility": cfg.baseline_visibility})
        out[f"visibility_{_fmt(v)}mps.csv"] = head + "\n".join(rows) + "\n"
    out["plot_visibility.py"] = _plot_stub(
        "visibility_*mps.csv", "power_W", "visibility",
        title="fringe visibility vs heating power")
    return out


def _cmd_oracle(manifest, cfg, model):
    velocity = float(manifest.options.get("velocity", 100.0))
    power = float(manifest.options.get("power", 4.0))
    n_beams = int(manifest.options.get("n_beams", 10))
    samples = int(manifest.options.get("samples", 100000))
    scale = power / cfg.power_reference_w
    plan = build_transport_plan(cfg, model, velocity, n_beams)
    res = run_plan(plan, scale, cfg.sigma_t1_cm2, cfg.a_ion)
    mc = monte_carlo_oracle(cfg, velocity, scale, n_beams,
                            n_samples=samples, seed=manifest.seed, model=model)
    marg = res.state_at_g1.temperature_marginal()
    rows = ["quantity,grid,mc,mc_se"]
    rows.append(f"ion_yield,{_fmt(res.ion_yield)},{_fmt(mc['ion_yield'])},"
                f"{_fmt(mc['ion_yield_se'])}")
    rows.append(f"f_g1_mean_K,{_fmt(marg.mean())},{_fmt(mc['f_g1_mean'])},"
                f"{_fmt(mc['f_g1_mean_se'])}")
    rows.append(f"detector_rate_change,{_fmt(res.detector_rate_change)},"
                f"{_fmt(mc['detector_rate_change'])},nan")
    head = _header(manifest, cfg, {"velocity_mps": velocity, "power_W": power,
                                   "n_beams": n_beams, "samples": samples})
    return {"oracle.csv": head + "\n".join(rows) + "\n"}


def _plot_stub(pattern, x, y, group=None, logy=False, title="") -> str:
    """Plain-text matplotlib script referencing the CSV outputs."""
    lines = [
        "#!/usr/bin/env python3",
        f'"""Plot {title} from {pattern}."""',
        "import glob",
        "import numpy as np",
        "import matplotlib.pyplot as plt",
        "",
        f"for path in sorted(glob.glob({pattern!r})):",
        "    data = np.genfromtxt(path, delimiter=',', names=True, comments='#')",
    ]
    if group:
        lines += [
            f"    for val in np.unique(data[{group!r}]):",
            f"        sel = data[{group!r}] == val",
            f"        plt.plot(data[{x!r}][sel], data[{y!r}][sel], "
            f"label=f'{{path}} {group}={{val:g}}')",
        ]
    else:
        lines.append(f"    plt.plot(data[{x!r}], data[{y!r}], label=path)")
    lines += [
        f"plt.xlabel({x!r})",
        f"plt.ylabel({y!r})",
    ]
    if logy:
        lines.append("plt.yscale('log')")
    lines += [
        f"plt.title({title!r})",
        "plt.legend(fontsize=6)",
        "plt.tight_layout()",
        "plt.savefig('plot.png', dpi=160)",
        "print('wrote plot.png')",
    ]
    return "\n".join(lines) + "\n"


_COMMANDS = {
    "spectrum": _cmd_spectrum,
    "cool": _cmd_cool,
    "ion-yield": _cmd_ion_yield,
    "detector": _cmd_detector,
    "fit": _cmd_fit,
    "tempdist": _cmd_tempdist,
    "visibility": _cmd_visibility,
    "oracle": _cmd_oracle,
}


def run(manifest: RunManifest) -> list:
    """Execute one subcommand; returns the list of written paths.

    All content is rendered before anything touches the filesystem, so a
    failing run leaves no partial outputs.
    """
    if manifest.subcommand not in _COMMANDS:
        raise CliError("usage-error", f"unknown subcommand {manifest.subcommand!r}")
    cfg = _load_config(manifest)
    model = _load_model(manifest)
    try:
        files = _COMMANDS[manifest.subcommand](manifest, cfg, model)
    except CliError:
        raise
    except (ValueError, KeyError, RuntimeError) as exc:
        raise CliError("runtime-error", str(exc))

    record = {
        "subcommand": manifest.subcommand,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "kernel_backend": _kernels.BACKEND,
        "seed": manifest.seed,
        "overrides": list(manifest.overrides),
        "options": {k: str(v) for k, v in sorted(manifest.options.items())},
        "resolved_config": cfg.to_dict(),
    }
    files["run_record.json"] = json.dumps(record, indent=2, sort_keys=True) + "\n"

    out_dir = Path(manifest.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, content in sorted(files.items()):
            path = out_dir / name
            path.write_text(content, encoding="utf-8")
            written.append(path)
    except OSError as exc:
        raise CliError("runtime-error", f"cannot write outputs: {exc}")
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c70beam",
        description="Laser-heated C70 beamline: emission, cooling, "
                    "thermometry and visibility predictions.")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON beamline config (defaults built in)")
    parser.add_argument("--cross-section", type=Path, default=None,
                        help="absorption cross-section CSV "
                             "(photon_energy_eV,sigma_cm2)")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")
    parser.add_argument("--seed", type=int, default=0,
                        help="random seed for sampling oracles")
    parser.add_argument("--set", action="append", default=[], metavar="K=V",
                        help="override a scalar config field (repeatable)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("spectrum", help="emission-rate table over omega x T")
    sp.add_argument("--temperatures", default="2000,2250,2500,2750,3000")
    sp.add_argument("--n-omega", default=400, type=int)

    sp = sub.add_parser("cool", help="cooling trajectories and fitted laws")
    sp.add_argument("--t0", default=3000.0, type=float)
    sp.add_argument("--velocity", default=100.0, type=float)

    sp = sub.add_parser("ion-yield", help="normalized ion yield vs velocity")
    sp.add_argument("--velocities", default="60,80,100,120,140,160,180,200,220,240")
    sp.add_argument("--powers", default="2,3,4,5,6,8,10")
    sp.add_argument("--n-beams", default=10, type=int)

    sp = sub.add_parser("detector", help="detection-rate change vs power")
    sp.add_argument("--velocity", default=100.0, type=float)
    sp.add_argument("--n-beams", default="1,2,4,10")
    sp.add_argument("--powers", default="0,1,2,3,4,5,6,7,8,9,10")

    sp = sub.add_parser("fit", help="invert measured ion-yield curves")
    sp.add_argument("--data", required=True)

    sp = sub.add_parser("tempdist", help="temperature distribution at G1")
    sp.add_argument("--velocity", default=100.0, type=float)
    sp.add_argument("--powers", default="0,2,4,6,8,10")
    sp.add_argument("--n-beams", default=None, type=int)

    sp = sub.add_parser("visibility", help="visibility vs power per band")
    sp.add_argument("--velocities", default=None)
    sp.add_argument("--powers", default="0,1,2,3,4,5,6,7,8,9,10")

    sp = sub.add_parser("oracle", help="Monte Carlo cross-check of the grid")
    sp.add_argument("--velocity", default=100.0, type=float)
    sp.add_argument("--power", default=4.0, type=float)
    sp.add_argument("--n-beams", default=10, type=int)
    sp.add_argument("--samples", default=100000, type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    options = {k.replace("-", "_"): v for k, v in vars(args).items()
               if k not in {"config", "cross_section", "out", "seed", "set",
                            "subcommand"} and v is not None}
    manifest = RunManifest(
        subcommand=args.subcommand, out_dir=args.out,
        config_path=args.config, cross_section_path=args.cross_section,
        seed=args.seed, overrides=tuple(args.set), options=options)
    try:
        written = run(manifest)
    except CliError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
