"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: a ``*_numpy`` reference implementation built on
vectorized numpy, and (when numba is importable) a compiled ``*_numba``
variant.  The public names (``poisson_heat``, ``cool_scatter``,
``decoherence_loss``, ``gamma_upper``, ``gamma_upper_diff_vec``) are bound
to one set at import time:

* default: numba, compiled lazily with ``cache=True``;
* ``C70BEAM_NO_NUMBA=1`` in the environment, or numba missing: numpy.

``BACKEND`` records which set is active.  The two paths are asserted
equivalent in the test suite and timed against each other in
``scripts/benchmark_kernels.py``.
"""

import math
import os

import numpy as np

from .constants import K_B_EV

_ENV_FLAG = os.environ.get("C70BEAM_NO_NUMBA", "").strip().lower()
_DISABLED = _ENV_FLAG in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled via C70BEAM_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    njit = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# upper incomplete gamma
# ---------------------------------------------------------------------------

def _gamma_upper_impl(n, x):
    """Unnormalized upper incomplete gamma integral(x..inf) t^(n-1) e^-t dt.

    Series for x <= n+1, Lentz continued fraction for x > n+1.  Arguments
    here reach n ~ 6-12 and x up to T_ion/T ~ 1e4; underflow to 0 is the
    correct limit for large x.
    """
    if x < 0.0 or n <= 0.0:
        return math.nan
    gamma_n = math.exp(math.lgamma(n))
    if x == 0.0:
        return gamma_n
    lpre = n * math.log(x) - x - math.lgamma(n)
    if x <= n + 1.0:
        term = 1.0 / n
        total = term
        a = n
        for _ in range(500):
            a += 1.0
            term *= x / a
            total += term
            if term < total * 1e-16:
                break
        low_reg = math.exp(lpre) * total if lpre > -700.0 else 0.0
        return gamma_n * (1.0 - low_reg)
    tiny = 1e-300
    b = x + 1.0 - n
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - n)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    if lpre + math.log(abs(h)) < -700.0:
        return 0.0
    return gamma_n * math.exp(lpre) * h


if HAVE_NUMBA:
    _GAMMA_UPPER = njit(cache=True, nogil=True)(_gamma_upper_impl)
else:
    _GAMMA_UPPER = _gamma_upper_impl


def _gamma_upper_diff_impl(n, x1, x2):
    """gamma_upper(n, x1) - gamma_upper(n, x2) for x2 >= x1.

    For narrow intervals the direct difference cancels catastrophically,
    so below a relative width of 1e-6 the integrand t^(n-1) e^-t is
    integrated with a 3-point Gauss rule on [x1, x2] instead.
    """
    if x2 <= x1:
        return 0.0
    if (x2 - x1) < 1e-6 * (1.0 + x1):
        half = 0.5 * (x2 - x1)
        mid = 0.5 * (x1 + x2)
        g = half * math.sqrt(0.6)
        total = 0.0
        le = (n - 1.0) * math.log(mid - g) - (mid - g)
        if le > -700.0:
            total += (5.0 / 9.0) * math.exp(le)
        le = (n - 1.0) * math.log(mid) - mid
        if le > -700.0:
            total += (8.0 / 9.0) * math.exp(le)
        le = (n - 1.0) * math.log(mid + g) - (mid + g)
        if le > -700.0:
            total += (5.0 / 9.0) * math.exp(le)
        return half * total
    return _GAMMA_UPPER(n, x1) - _GAMMA_UPPER(n, x2)


if HAVE_NUMBA:
    _GAMMA_DIFF = njit(cache=True, nogil=True)(_gamma_upper_diff_impl)
else:
    _GAMMA_DIFF = _gamma_upper_diff_impl


def _gamma_upper_diff_vec_impl(n, x1, x2, out):
    for i in range(x1.shape[0]):
        out[i] = _GAMMA_DIFF(n, x1[i], x2[i])


# ---------------------------------------------------------------------------
# Poisson heating convolution
# ---------------------------------------------------------------------------

def poisson_heat_numpy(grid, pois_w, kmax, shift):
    """Convolve each row's temperature axis with a Poisson comb of kicks.

    grid     : (ny, nt) mass per (y-node, T-bin)
    pois_w   : (ny, kcap) Poisson weights per y-node
    kmax     : (ny,) number of comb terms per row (<= kcap)
    shift    : kick size in units of the bin width (float > 0)

    Mass shifted past the top bin is clamped into the top bin, so the total
    is conserved to the Poisson truncation (1e-12).
    """
    ny, nt = grid.shape
    out = np.zeros_like(grid)
    for y in range(ny):
        row = grid[y]
        km = int(kmax[y])
        if km <= 1 and pois_w[y, 0] >= 1.0:
            out[y] += row
            continue
        if not row.any():
            continue
        for k in range(km):
            w = pois_w[y, k]
            if w <= 0.0:
                continue
            ks = k * shift
            s = int(ks)
            f = ks - s
            if s >= nt - 1:
                out[y, nt - 1] += w * row.sum()
                continue
            nsrc = nt - s
            out[y, s:] += (w * (1.0 - f)) * row[:nsrc]
            if f > 0.0:
                out[y, s + 1:] += (w * f) * row[:nsrc - 1]
                out[y, nt - 1] += w * f * row[nsrc - 1]
            if nsrc < nt:
                out[y, nt - 1] += w * row[nsrc:].sum()
    return out


def _poisson_heat_loop(grid, pois_w, kmax, shift, out):
    ny, nt = grid.shape
    for y in range(ny):
        row = grid[y]
        dest = out[y]
        km = kmax[y]
        if km <= 1 and pois_w[y, 0] >= 1.0:
            for j in range(nt):
                dest[j] += row[j]
            continue
        # occupied support of this row
        jlo = -1
        jhi = -1
        rowsum = 0.0
        for j in range(nt):
            v = row[j]
            if v != 0.0:
                rowsum += v
                if jlo < 0:
                    jlo = j
                jhi = j
        if jlo < 0:
            continue
        for k in range(km):
            w = pois_w[y, k]
            if w <= 0.0:
                continue
            ks = k * shift
            s = int(ks)
            f = ks - s
            if s + jlo >= nt - 1:
                dest[nt - 1] += w * rowsum
                continue
            wlo = w * (1.0 - f)
            whi = w * f
            jend = jhi
            clamped = 0.0
            if s + jhi >= nt - 1:
                # split: bins that land at/after the top are clamped
                jend = nt - 2 - s
                for j in range(jend + 1, jhi + 1):
                    clamped += w * row[j]
            for j in range(jlo, jend + 1):
                v = row[j]
                dest[j + s] += wlo * v
                dest[j + s + 1] += whi * v
            dest[nt - 1] += clamped


# ---------------------------------------------------------------------------
# cooling / ionization pushforward
# ---------------------------------------------------------------------------

def cool_scatter_numpy(grid, dst, frac_hi, survival):
    """Push each row through a precomputed contracting temperature map.

    Source bin i deposits mass * survival[i] into destination bins dst[i]
    and dst[i]+1 with split (1-frac_hi[i], frac_hi[i]).  Returns the new
    grid and the ionized mass per row.
    """
    ny, nt = grid.shape
    out = np.zeros_like(grid)
    ion = np.zeros(ny)
    lo_w = survival * (1.0 - frac_hi)
    hi_w = survival * frac_hi
    dst_hi = np.minimum(dst + 1, nt - 1)
    for y in range(ny):
        row = grid[y]
        if not row.any():
            continue
        out[y] += np.bincount(dst, weights=row * lo_w, minlength=nt)
        out[y] += np.bincount(dst_hi, weights=row * hi_w, minlength=nt)
        ion[y] = row.sum() - (row * survival).sum()
    return out, ion


def _cool_scatter_loop(grid, dst, frac_hi, survival, out, ion):
    ny, nt = grid.shape
    for y in range(ny):
        tot_in = 0.0
        tot_kept = 0.0
        for i in range(nt):
            m = grid[y, i]
            if m == 0.0:
                continue
            tot_in += m
            kept = m * survival[i]
            tot_kept += kept
            j = dst[i]
            f = frac_hi[i]
            out[y, j] += kept * (1.0 - f)
            j2 = j + 1
            if j2 > nt - 1:
                j2 = nt - 1
            out[y, j2] += kept * f
        ion[y] = tot_in - tot_kept


# ---------------------------------------------------------------------------
# decoherence loss double integral
# ---------------------------------------------------------------------------

def decoherence_loss_numpy(trajs, t_weights, hw, spec_w, sinc_arg, path, stat_coef):
    """Time x frequency integral of emission rate times which-path factor.

    trajs     : (nb, ntq) temperature along each cached trajectory, K
    t_weights : (ntq,) time quadrature weights, s
    hw        : (nw,) photon energies at the frequency nodes, eV
    spec_w    : (nw,) omega^2/(pi^2 c^2) * sigma(hw) * quadrature weight
    sinc_arg  : (nw,) omega * d / c (dimensionless after multiplying path)
    path      : (ntq,) triangular path-separation factor (L-|vt-L|)/L_T
    stat_coef : k_B / (2 C_V), finite-heat-capacity correction coefficient

    Returns (nb,) loss exponents; the reduction factor is exp(-loss).
    """
    u = np.outer(path, sinc_arg)
    with np.errstate(invalid="ignore", divide="ignore"):
        oms = 1.0 - np.sinc(u / np.pi)
    small = np.abs(u) < 1e-4
    if small.any():
        u2 = u[small] ** 2
        oms[small] = u2 / 6.0 * (1.0 - u2 / 20.0)
    losses = np.empty(trajs.shape[0])
    for b in range(trajs.shape[0]):
        x = np.outer(1.0 / (K_B_EV * trajs[b]), hw)
        rate = np.exp(-x - stat_coef * x * x) * spec_w
        losses[b] = t_weights @ (rate * oms).sum(axis=1)
    return losses


def _decoherence_loss_loop(trajs, t_weights, hw, spec_w, sinc_arg, path,
                           stat_coef, inv_kb, losses):
    nb, ntq = trajs.shape
    nw = hw.shape[0]
    for b in range(nb):
        acc = 0.0
        for t in range(ntq):
            ikt = inv_kb / trajs[b, t]
            p = path[t]
            inner = 0.0
            for w in range(nw):
                x = hw[w] * ikt
                e = x + stat_coef * x * x
                if e > 700.0:
                    continue
                u = sinc_arg[w] * p
                au = abs(u)
                if au < 1e-4:
                    u2 = u * u
                    oms = u2 / 6.0 * (1.0 - u2 / 20.0)
                else:
                    oms = 1.0 - math.sin(u) / u
                inner += spec_w[w] * math.exp(-e) * oms
            acc += t_weights[t] * inner
        losses[b] = acc


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    BACKEND = "numba"

    _gamma_upper_diff_vec = njit(cache=True, nogil=True)(_gamma_upper_diff_vec_impl)
    _poisson_heat_jit = njit(cache=True, nogil=True)(_poisson_heat_loop)
    _cool_scatter_jit = njit(cache=True, nogil=True)(_cool_scatter_loop)
    _decoherence_loss_jit = njit(cache=True, nogil=True)(_decoherence_loss_loop)

    def gamma_upper_diff_vec(n, x1, x2):
        out = np.empty_like(x1)
        _gamma_upper_diff_vec(float(n), x1, x2, out)
        return out

    def poisson_heat_numba(grid, pois_w, kmax, shift):
        out = np.zeros_like(grid)
        _poisson_heat_jit(grid, pois_w, kmax, float(shift), out)
        return out

    def cool_scatter_numba(grid, dst, frac_hi, survival):
        out = np.zeros_like(grid)
        ion = np.zeros(grid.shape[0])
        _cool_scatter_jit(grid, dst, frac_hi, survival, out, ion)
        return out, ion

    def decoherence_loss_numba(trajs, t_weights, hw, spec_w, sinc_arg, path, stat_coef):
        losses = np.empty(trajs.shape[0])
        _decoherence_loss_jit(np.ascontiguousarray(trajs), t_weights, hw, spec_w,
                              sinc_arg, path, float(stat_coef), 1.0 / K_B_EV, losses)
        return losses

    poisson_heat = poisson_heat_numba
    cool_scatter = cool_scatter_numba
    decoherence_loss = decoherence_loss_numba
else:
    BACKEND = "numpy"

    def gamma_upper_diff_vec(n, x1, x2):
        out = np.empty_like(x1)
        _gamma_upper_diff_vec_impl(float(n), x1, x2, out)
        return out

    poisson_heat = poisson_heat_numpy
    cool_scatter = cool_scatter_numpy
    decoherence_loss = decoherence_loss_numpy


def gamma_upper(n, x):
    """Unnormalized upper incomplete gamma, scalar or array x."""
    if np.isscalar(x):
        return _GAMMA_UPPER(float(n), float(x))
    flat = np.asarray(x, dtype=float).ravel()
    out = np.array([_GAMMA_UPPER(float(n), float(v)) for v in flat])
    return out.reshape(np.shape(x))


def gamma_upper_diff(n, x1, x2):
    """Difference gamma_upper(n, x1) - gamma_upper(n, x2), scalar."""
    return _GAMMA_DIFF(float(n), float(x1), float(x2))
