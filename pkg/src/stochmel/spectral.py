"""Autocorrelation and spectral moments of Melnikov processes; Rice-formula checks.

For ``M(t) = int F(s) omega(t + s) ds`` with ``omega`` stationary with
autocorrelation ``r``,

    rho(h) = E[M(t) M(t + h)] = int G(u) r(u + h) du,   G(u) = int F(s) F(s + u) ds,

so ``chi0 = rho(0)`` and ``chi2 = -rho''(0) = int G_D(u) r(u) du`` with ``G_D``
the autocorrelation of ``F'``.  Both inner and outer integrals use composite
Simpson on a common step.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EnvelopeError
from .melnikov import MelnikovConfig, MelnikovIntegrand, aligned_grid, melnikov_I_grid, melnikov_P_grid, simpson_weights
from .noise import sample_path_on
from .seeds import child_seed


@dataclass(frozen=True)
class SpectralConfig:
    S: float = 40.0
    step: float = 0.01
    S_r: float | None = None
    max_lag: float = 5.0
    fd_step: float = 0.01
    n_lags: int = 41
    tol: float = 1e-12

    def kernel_radius(self, kernel):
        """Kernel truncation radius: ``r`` below 1.7e-28 beyond it (8 for a=2)."""
        return self.S_r if self.S_r is not None else kernel.support_radius(1.7e-28)


class SpectralMoments(NamedTuple):
    chi0: float
    chi2: float
    rho_samples: np.ndarray
    chi2_fd: float = math.nan
    fd_rel_error: float = math.nan
    tail_bound: float = 0.0


class _Table(NamedTuple):
    u: np.ndarray
    wu: np.ndarray
    G: np.ndarray
    tail: float


_TABLES = {}


def _table(F, kernel, cfg, derivative=False):
    key = (id(F.model), F.I, F.phi, F.tau, F.kind, derivative, kernel, cfg)
    hit = _TABLES.get(key)
    if hit is not None and hit[0] is F.model:
        return hit[1]
    ds = cfg.step
    half = int(math.ceil(cfg.S / ds - 1e-9))
    n_s = 2 * half
    S = half * ds
    Sr = cfg.kernel_radius(kernel)
    J = int(math.ceil((Sr + cfg.max_lag) / ds - 1e-9))
    f = F.derivative if derivative else F
    s_ext = (np.arange(-(n_s // 2) - J, n_s // 2 + J + 1)) * ds
    f_ext = f(s_ext)
    f_base = f_ext[J: J + n_s + 1]
    a = simpson_weights(n_s, ds) * f_base
    G = np.correlate(f_ext, a, mode="valid")  # G[j] for u = (j - J) ds
    u = (np.arange(2 * J + 1) - J) * ds
    wu = simpson_weights(2 * J, ds)
    # certified tails: F beyond [-S, S], and r beyond the kernel radius
    beta = F.model.beta
    K = float(np.max(np.abs(f_ext) * np.exp(beta * np.abs(s_ext))))
    fmax = float(np.max(np.abs(f_ext))) if f_ext.size else 0.0
    l1 = float(np.sum(np.abs(a)))
    tail = 2.0 * fmax * K * math.exp(-beta * S) / beta * kernel.integral() + kernel.tail(Sr) * l1 * l1
    table = _Table(u, wu, G, tail)
    if len(_TABLES) > 64:
        _TABLES.clear()
    _TABLES[key] = (F.model, table)
    return table


def _as_integrand(integrand):
    if isinstance(integrand, MelnikovIntegrand):
        return integrand
    raise TypeError("integrand must be a MelnikovIntegrand")


def process_autocorrelation(integrand, kernel, h, cfg=None, derivative=False):
    """``rho(h)`` of the Melnikov process driven by ``kernel``."""
    cfg = cfg or SpectralConfig()
    F = _as_integrand(integrand)
    if abs(h) > cfg.max_lag + 1e-12:
        raise ValueError(f"|h| = {abs(h)} exceeds the configured max lag {cfg.max_lag}")
    tb = _table(F, kernel, cfg, derivative)
    if tb.tail > cfg.tol:
        raise EnvelopeError(f"autocorrelation tail bound {tb.tail:.3e} above tolerance {cfg.tol:g}")
    return float(np.dot(tb.wu * tb.G, kernel.r(tb.u + h)))


def spectral_moments(integrand, kernel, cfg=None):
    """``chi0``, ``chi2`` and sampled ``rho(h)``; ``chi2`` cross-checked by finite differences."""
    cfg = cfg or SpectralConfig()
    F = _as_integrand(integrand)
    chi0 = process_autocorrelation(F, kernel, 0.0, cfg)
    chi2 = process_autocorrelation(F, kernel, 0.0, cfg, derivative=True)
    for name, val in (("chi0", chi0), ("chi2", chi2)):
        if val < -1e-10:
            raise ValueError(f"negative moment {name} = {val:.3e}: quadrature failure")
    chi0 = max(chi0, 0.0)
    chi2 = max(chi2, 0.0)
    d = cfg.fd_step
    r = [process_autocorrelation(F, kernel, k * d, cfg) for k in (-2, -1, 0, 1, 2)]
    chi2_fd = -(-r[0] + 16 * r[1] - 30 * r[2] + 16 * r[3] - r[4]) / (12 * d * d)
    rel = abs(chi2_fd - chi2) / chi2 if chi2 > 0 else abs(chi2_fd)
    lags = np.linspace(-cfg.max_lag, cfg.max_lag, cfg.n_lags)
    rho = np.array([process_autocorrelation(F, kernel, h, cfg) for h in lags])
    tail = max(_table(F, kernel, cfg).tail, _table(F, kernel, cfg, True).tail)
    return SpectralMoments(chi0, chi2, np.column_stack([lags, rho]), float(chi2_fd), float(rel), tail)


def rice_expected_zeros(m, T):
    """``(T/pi) sqrt(chi2/chi0)``."""
    if not m.chi0 > 0:
        raise ValueError("Rice formula needs chi0 > 0")
    return T / math.pi * math.sqrt(m.chi2 / m.chi0)


def rice_expected_level_crossings(m, T, v):
    """Zero-count formula times ``exp(-v^2 / (2 chi0))``."""
    return rice_expected_zeros(m, T) * math.exp(-v * v / (2.0 * m.chi0))


class CrossingStats(NamedTuple):
    n_paths: int
    T: float
    v: float
    empirical_mean: float
    empirical_se: float
    predicted: float
    counts: np.ndarray
    refine: int = 1


def count_crossings(values, v=0.0):
    """Strict sign changes of ``values - v`` between neighbors."""
    d = np.asarray(values) - v
    nz = d[d != 0.0]
    return int(np.count_nonzero((nz[:-1] < 0) != (nz[1:] < 0)))


def process_series(model, path, point, t_lo, t_hi, kind="P", cfg=None, refine=1):
    """Melnikov process on ``[t_lo, t_hi]`` with spacing ``dt/refine`` (interleaved offset grids)."""
    I, phi, tau = point
    fn = melnikov_P_grid if kind == "P" else melnikov_I_grid
    ts, vs = [], []
    for j in range(refine):
        g = aligned_grid(path, t_lo, t_hi, offset=j / refine)
        g = g[g <= t_hi + 1e-12]
        s = fn(model, path, I, phi, tau, g, cfg)
        ts.append(s.t)
        vs.append(s.values)
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    return t[order], np.concatenate(vs)[order]


def _one_count(args):
    model, kernel, point, T, v, seed, cfg, kind, dt, refine = args
    margin = cfg.S + 2 * dt
    t_lo = -dt * math.ceil(margin / dt)
    path = sample_path_on(kernel, t_lo, T + margin, dt, seed)
    _, vals = process_series(model, path, point, 0.0, T, kind, cfg, refine)
    return count_crossings(vals, v)


def monte_carlo_crossings(model, kernel, point, T, v, n_paths, master_seed, cfg=None, kind="P", dt=0.01,
                          refine=1, moments=None, workers=1, spectral_cfg=None):
    """Empirical mean level-crossing count over ``n_paths`` seeded paths vs Rice's prediction."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    cfg = cfg or MelnikovConfig()
    jobs = [(model, kernel, point, T, v, child_seed(master_seed, i), cfg, kind, dt, refine) for i in range(n_paths)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            counts = list(ex.map(_one_count, jobs))
    else:
        counts = [_one_count(j) for j in jobs]
    counts = np.array(counts, dtype=float)
    if moments is None:
        moments = spectral_moments(MelnikovIntegrand(model, *point, kind=kind), kernel, spectral_cfg)
    pred = rice_expected_level_crossings(moments, T, v)
    return CrossingStats(n_paths, float(T), float(v), float(counts.mean()),
                         float(counts.std(ddof=1) / math.sqrt(n_paths)), float(pred), counts, refine)


class SMPReport(NamedTuple):
    ok: bool
    values: dict


def smp_smi_check(mP, mI, threshold=1e-12):
    """True iff ``chi0`` and ``chi2`` of both processes exceed ``threshold``."""
    vals = {"chi0_P": mP.chi0, "chi2_P": mP.chi2, "chi0_I": mI.chi0, "chi2_I": mI.chi2}
    return SMPReport(all(v > threshold for v in vals.values()), vals)


def write_rho_csv(m, file):
    np.savetxt(file, m.rho_samples, delimiter=",", header="h,rho", comments="", fmt="%.17g")
