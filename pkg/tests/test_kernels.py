"""Backend equivalence and incomplete-gamma validation."""

import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn, gammaincc

from c70beam import _kernels
from c70beam.beamline import _poisson_weights


@pytest.mark.parametrize("n", [4.27, 6.2, 9.0, 10.5, 12.7])
@pytest.mark.parametrize("x", [0.0, 0.5, 3.0, 9.9, 11.1, 23.0, 70.0, 350.0])
def test_gamma_upper_matches_scipy(n, x):
    ours = _kernels.gamma_upper(n, x)
    ref = gammaincc(n, x) * gamma_fn(n)
    assert ours == pytest.approx(ref, rel=1e-12, abs=1e-280)


@pytest.mark.parametrize("n,x", [(6.2, 8.0), (10.5, 23.0), (9.7, 70.0)])
def test_gamma_upper_matches_quadrature(n, x):
    # direct numerical quadrature of the defining integral
    ref, err = quad(lambda t: t ** (n - 1) * np.exp(-t), x, x + 200.0,
                    epsrel=1e-13, limit=400)
    assert _kernels.gamma_upper(n, x) == pytest.approx(ref, rel=1e-10)


def test_gamma_upper_diff_narrow_interval():
    # cancellation regime: interval width 1e-8 of the argument
    n, x1 = 9.0, 25.0
    x2 = x1 * (1.0 + 1e-8)
    ref, _ = quad(lambda t: t ** (n - 1) * np.exp(-t), x1, x2, epsrel=1e-13)
    got = _kernels.gamma_upper_diff(n, x1, x2)
    assert got == pytest.approx(ref, rel=1e-9)


def test_gamma_upper_diff_wide_interval():
    n, x1, x2 = 10.5, 23.0, 31.0
    ref, _ = quad(lambda t: t ** (n - 1) * np.exp(-t), x1, x2, epsrel=1e-13)
    assert _kernels.gamma_upper_diff(n, x1, x2) == pytest.approx(ref, rel=1e-10)


def test_gamma_upper_extreme_underflow():
    assert _kernels.gamma_upper(10.0, 28000.0) == 0.0
    assert _kernels.gamma_upper_diff(10.0, 27000.0, 28000.0) == 0.0


def _random_grid(rng, ny=13, nt=400):
    grid = rng.random((ny, nt))
    grid[rng.random((ny, nt)) < 0.3] = 0.0
    grid /= grid.sum() * 1.2
    return np.ascontiguousarray(grid)


def test_poisson_heat_backends_agree(rng):
    grid = _random_grid(rng)
    nbar = 6.0 * np.exp(-np.linspace(-2, 2, grid.shape[0]) ** 2)
    pois_w, kmax = _poisson_weights(nbar)
    a = _kernels.poisson_heat_numpy(grid, pois_w, kmax, 27.71)
    b = _kernels.poisson_heat(grid, pois_w, kmax, 27.71)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    assert a.sum() == pytest.approx(grid.sum(), abs=1e-11)


def test_poisson_heat_integer_shift(rng):
    grid = _random_grid(rng)
    nbar = np.full(grid.shape[0], 2.5)
    pois_w, kmax = _poisson_weights(nbar)
    a = _kernels.poisson_heat_numpy(grid, pois_w, kmax, 10.0)
    b = _kernels.poisson_heat(grid, pois_w, kmax, 10.0)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_cool_scatter_backends_agree(rng):
    grid = _random_grid(rng)
    nt = grid.shape[1]
    dst = np.minimum((np.arange(nt) * 0.93).astype(np.int64), nt - 1)
    frac = rng.random(nt)
    surv = rng.random(nt)
    a, ia = _kernels.cool_scatter_numpy(grid, dst, frac, surv)
    b, ib = _kernels.cool_scatter(grid, dst, frac, surv)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(ia, ib, rtol=0, atol=1e-15)
    # exact bookkeeping: kept + ionized = input
    assert a.sum() + ia.sum() == pytest.approx(grid.sum(), abs=1e-12)


def test_decoherence_loss_backends_agree(rng):
    trajs = 2000.0 + 800.0 * rng.random((7, 33))
    t_w = rng.random(33) * 1e-5
    hw = np.linspace(1.6, 5.0, 64)
    spec_w = rng.random(64) * 1e-3
    sinc_arg = np.linspace(0.1, 40.0, 64)
    path = np.concatenate([np.linspace(0, 1.8, 17), np.linspace(1.8, 0, 16)])
    a = _kernels.decoherence_loss_numpy(trajs, t_w, hw, spec_w, sinc_arg, path, 1 / 404.0)
    b = _kernels.decoherence_loss(trajs, t_w, hw, spec_w, sinc_arg, path, 1 / 404.0)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, C70BEAM_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from c70beam import _kernels; print(_kernels.BACKEND)"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"
