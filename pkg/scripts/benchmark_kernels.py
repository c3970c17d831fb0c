#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot kernels (Poisson heating convolution, cooling
pushforward scatter, decoherence double integral) and one full transport
evaluation on both backends.  The numpy path is the one selected by
setting C70BEAM_NO_NUMBA=1 in the environment.

Usage:
    python scripts/benchmark_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from c70beam import _kernels
from c70beam.beamline import BeamlineConfig, _poisson_weights, \
    build_transport_plan, run_plan
from c70beam.spectra import default_emitter_model


def timeit(fn, repeats):
    fn()  # warm up / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy path exists")
        return

    rng = np.random.default_rng(0)
    rows = []

    # Poisson heating convolution on a realistic mid-stage grid
    grid = rng.random((61, 2000))
    grid /= grid.sum()
    nbar = 8.0 * np.exp(-2.0 * np.linspace(-1.5, 1.5, 61) ** 2)
    pois_w, kmax = _poisson_weights(nbar)
    rows.append(("poisson_heat",
                 timeit(lambda: _kernels.poisson_heat_numpy(grid, pois_w, kmax, 27.7),
                        args.repeats),
                 timeit(lambda: _kernels.poisson_heat_numba(grid, pois_w, kmax, 27.7),
                        args.repeats)))

    # cooling/ionization pushforward
    nt = grid.shape[1]
    dst = np.minimum((np.arange(nt) * 0.95).astype(np.int64), nt - 1)
    frac = rng.random(nt)
    surv = np.exp(-rng.random(nt))
    rows.append(("cool_scatter",
                 timeit(lambda: _kernels.cool_scatter_numpy(grid, dst, frac, surv),
                        args.repeats),
                 timeit(lambda: _kernels.cool_scatter_numba(grid, dst, frac, surv),
                        args.repeats)))

    # decoherence loss: 200 trajectories x 129 time nodes x 2k frequencies
    trajs = 1500.0 + 1500.0 * rng.random((200, 129))
    t_w = np.full(129, 3e-5)
    hw = np.linspace(1.6, 6.0, 2000)
    spec_w = rng.random(2000) * 1e-3
    sinc_arg = np.linspace(1.0, 30.0, 2000)
    path = np.concatenate([np.linspace(0, 1.8, 65), np.linspace(1.8, 0, 64)])
    rows.append(("decoherence_loss",
                 timeit(lambda: _kernels.decoherence_loss_numpy(
                     trajs, t_w, hw, spec_w, sinc_arg, path, 1 / 404.0), 3),
                 timeit(lambda: _kernels.decoherence_loss_numba(
                     trajs, t_w, hw, spec_w, sinc_arg, path, 1 / 404.0), 3)))

    # one full beamline evaluation through both kernel sets
    cfg = BeamlineConfig()
    model = default_emitter_model()
    plan = build_transport_plan(cfg, model, 100.0, 10)

    def full(heat, scatter):
        saved = _kernels.poisson_heat, _kernels.cool_scatter
        _kernels.poisson_heat, _kernels.cool_scatter = heat, scatter
        try:
            return run_plan(plan, 6.0 / 10.8, 2e-17, 5e9).ion_yield
        finally:
            _kernels.poisson_heat, _kernels.cool_scatter = saved

    y_np = full(_kernels.poisson_heat_numpy, _kernels.cool_scatter_numpy)
    y_nb = full(_kernels.poisson_heat_numba, _kernels.cool_scatter_numba)
    assert abs(y_np - y_nb) < 1e-12, "backends disagree"
    rows.append(("full transport step",
                 timeit(lambda: full(_kernels.poisson_heat_numpy,
                                     _kernels.cool_scatter_numpy), 5),
                 timeit(lambda: full(_kernels.poisson_heat_numba,
                                     _kernels.cool_scatter_numba), 5)))

    print(f"{'kernel':24s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, t_np, t_nb in rows:
        print(f"{name:24s} {t_np * 1e3:9.2f} ms {t_nb * 1e3:9.2f} ms "
              f"{t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
