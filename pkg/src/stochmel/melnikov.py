"""Melnikov processes for the energy splitting (M^P) and the action change (M^I).

For a point ``(I, phi, tau)`` on the unperturbed separatrix and a noise path,

    M^P(I, phi, tau, t) = int {P, H1}(I, phi + nu s, p0(tau + s), q0(tau + s)) omega(t + s) ds

and likewise for M^I with ``{I, H1}`` minus its value on the inner manifold.
The integrals are truncated to ``[-S, S]`` and evaluated by composite Simpson
on the noise grid itself: the quadrature nodes are the path nodes
``t_k`` around ``t`` and the integrand is evaluated analytically at
``s = t_k - t``.  No interpolation of the path is needed, even for off-grid
``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import fftconvolve

from .errors import DomainError, EnvelopeError
from .model import poisson_I_H1, poisson_P_H1, separatrix_arrays


@dataclass(frozen=True)
class MelnikovConfig:
    """Truncation half-width ``S``, quadrature step and tail tolerance.

    The construction check uses nominal envelope constants; every evaluation
    certifies the actual tail bound again with the measured integrand.
    """

    S: float = 40.0
    quad_step: float | None = None
    tol: float = 1e-8
    B: float = 0.1
    A_nominal: float = 5.0
    K_nominal: float = 1.0
    beta_nominal: float = 1.0

    def __post_init__(self):
        if not self.S > 0:
            raise ValueError("truncation S must be positive")
        env = self.K_nominal * math.exp(-self.beta_nominal * self.S) * (self.A_nominal + self.B * self.S)
        if not env < self.tol:
            raise EnvelopeError(f"envelope bound {env:.3e} not below tolerance {self.tol:g}; increase S")

    def stride(self, dt):
        if self.quad_step is None:
            return 1
        m = int(round(self.quad_step / dt))
        if m < 1 or abs(m * dt - self.quad_step) > 1e-9 * self.quad_step:
            raise ValueError("quad step must be an integer multiple of the noise dt")
        return m


class MelnikovValue(NamedTuple):
    value: float
    truncation_bound: float
    quad_error_estimate: float
    n_nodes: int = 0
    step: float = 0.0


class MelnikovIntegrand:
    """The bracket factor of M^P (``kind="P"``) or M^I (``kind="I"``) as a function of s."""

    def __init__(self, model, I, phi, tau, kind="P"):
        if kind not in ("P", "I"):
            raise ValueError("kind must be 'P' or 'I'")
        self.model = model
        self.I = float(I)
        self.phi = float(phi)
        self.tau = float(tau)
        self.kind = kind
        self.nu = float(model.nu(self.I))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        ph = self.phi + self.nu * s
        p0, q0 = separatrix_arrays(self.model, self.tau + s)
        I = np.full_like(s, self.I)
        if self.kind == "P":
            return poisson_P_H1(self.model, (I, ph, p0, q0))
        zero = np.zeros_like(s)
        return poisson_I_H1(self.model, (I, ph, p0, q0)) - poisson_I_H1(self.model, (I, ph, zero, zero))

    def derivative(self, s):
        """d/ds by the chain rule along the separatrix: ``p0' = -V'(q0)``, ``q0' = p0``."""
        m = self.model
        s = np.asarray(s, dtype=float)
        ph = self.phi + self.nu * s
        p, q = separatrix_arrays(m, self.tau + s)
        I = np.full_like(s, self.I)
        dp = -m.dV(q)
        dq = p
        HI, Hphi, Hp, Hq = m.grad_H1(I, ph, p, q)
        II, Iph, Ip, Iq, phph, php, phq, pp, pq, qq = m.hess_H1(I, ph, p, q)
        if self.kind == "P":
            Vp = m.dV(q)
            Fphi = Vp * php - p * phq
            Fp = Vp * pp - Hq - p * pq
            Fq = m.d2V(q) * Hp + Vp * pq - p * qq
            return self.nu * Fphi + dp * Fp + dq * Fq
        zero = np.zeros_like(s)
        phph0 = m.hess_H1(I, ph, zero, zero)[4]
        Gphi = -phph + phph0
        return self.nu * Gphi + dp * (-php) + dq * (-phq)

    def decay_constant(self, s, beta):
        """sup over the samples of ``|F(s)| exp(beta |s|)``."""
        s = np.asarray(s, dtype=float)
        return float(np.max(np.abs(self(s)) * np.exp(beta * np.abs(s))))


def simpson_weights(n_intervals, h):
    if n_intervals % 2:
        raise ValueError("Simpson needs an even number of intervals")
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _trap_weights(n_intervals, h):
    w = np.full(n_intervals + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def tail_bound(K, beta, S, A, B):
    """``2 int_S^inf K e^{-beta s} (A + B s) ds``."""
    return 2.0 * K * math.exp(-beta * S) * ((A + B * S) / beta + B / beta ** 2)


def _window(path, t, cfg):
    m = cfg.stride(path.dt)
    hq = m * path.dt
    half = int(math.ceil(cfg.S / hq - 1e-9))
    x = (t - path.t_start) / path.dt
    kc = int(round(x))
    lo = kc - m * half
    hi = kc + m * half
    if lo < 0 or hi > path.n - 1:
        raise DomainError(f"Melnikov window [{t - cfg.S}, {t + cfg.S}] outside noise domain")
    return m, hq, half, kc


def _evaluate_direct(F, path, t, cfg):
    t = float(t)
    m, hq, half, kc = _window(path, t, cfg)
    idx = kc + m * np.arange(-half, half + 1)
    s = path.t_start + idx * path.dt - t
    f = F(s)
    w = path.values[idx]
    fw = f * w
    N = 2 * half
    value = float(np.dot(simpson_weights(N, hq), fw))
    t1 = float(np.dot(_trap_weights(N, hq), fw))
    if half % 2 == 0:
        qerr = abs(t1 - float(np.dot(_trap_weights(N // 2, 2 * hq), fw[::2]))) / 3.0
    else:
        qerr = abs(t1 - value)
    beta = F.model.beta
    S_eff = min(-s[0], s[-1])
    K = F.decay_constant(s, beta)
    A = float(max(np.max(np.abs(w) - cfg.B * np.abs(s)), 0.0))
    tb = tail_bound(K, beta, S_eff, A, cfg.B)
    if not tb < cfg.tol:
        raise EnvelopeError(f"truncation bound {tb:.3e} not below tolerance {cfg.tol:g}")
    return MelnikovValue(value, tb, qerr, idx.size, hq)


def melnikov_P(model, path, I, phi, tau, t, cfg=None):
    """M^P at ``(I, phi, tau, t)`` by Simpson on the noise grid."""
    cfg = cfg or MelnikovConfig()
    return _evaluate_direct(MelnikovIntegrand(model, I, phi, tau, "P"), path, t, cfg)


def melnikov_I(model, path, I, phi, tau, t, cfg=None):
    """M^I at ``(I, phi, tau, t)``; the inner-manifold term is subtracted generically."""
    cfg = cfg or MelnikovConfig()
    return _evaluate_direct(MelnikovIntegrand(model, I, phi, tau, "I"), path, t, cfg)


@dataclass(frozen=True, eq=False)
class MelnikovSeries:
    """Melnikov process sampled on a uniform time grid."""

    t: np.ndarray
    values: np.ndarray
    truncation_bound: np.ndarray
    quad_error: np.ndarray
    kind: str = "P"

    def __len__(self):
        return self.t.size

    def __getitem__(self, i):
        return MelnikovValue(float(self.values[i]), float(self.truncation_bound[i]), float(self.quad_error[i]))

    def pairs(self):
        return np.column_stack([self.t, self.values])


def _check_uniform(t_grid, dt):
    t_grid = np.asarray(t_grid, dtype=float).reshape(-1)
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    if t_grid.size > 1:
        d = np.diff(t_grid)
        if np.max(np.abs(d - dt)) > 1e-6 * dt:
            raise ValueError("time grid must be uniform with spacing equal to the noise dt")
    return t_grid


def _evaluate_grid(F, path, t_grid, cfg):
    t_grid = _check_uniform(t_grid, path.dt)
    if t_grid.size == 1:
        v = _evaluate_direct(F, path, t_grid[0], cfg)
        return MelnikovSeries(t_grid, np.array([v.value]), np.array([v.truncation_bound]),
                              np.array([v.quad_error_estimate]), F.kind)
    J = t_grid.size
    m, hq, half, kc0 = _window(path, t_grid[0], cfg)
    _window(path, t_grid[-1], cfg)
    offs = m * np.arange(-half, half + 1)
    s = path.t_start + (kc0 + offs) * path.dt - t_grid[0]
    f = F(s)
    N = 2 * half
    L = m * N + 1

    def kernel(weights, stride=1):
        k = np.zeros(L)
        k[offs[::stride] - offs[0]] = weights * f[::stride]
        return k

    seg = path.values[kc0 - m * half: kc0 + J - 1 + m * half + 1]

    def corr(k):
        return fftconvolve(seg, k[::-1], mode="valid")

    values = corr(kernel(simpson_weights(N, hq)))
    t1 = corr(kernel(_trap_weights(N, hq)))
    if half % 2 == 0:
        t2 = corr(kernel(_trap_weights(N // 2, 2 * hq), 2))
        qerr = np.abs(t1 - t2) / 3.0
    else:
        qerr = np.abs(t1 - values)
    beta = F.model.beta
    K = F.decay_constant(s, beta)
    A = float(np.max(np.abs(seg)))
    tb = tail_bound(K, beta, min(-s[0], s[-1]), A, cfg.B)
    if not tb < cfg.tol:
        raise EnvelopeError(f"truncation bound {tb:.3e} not below tolerance {cfg.tol:g}")
    return MelnikovSeries(t_grid, values, np.full(J, tb), qerr, F.kind)


def melnikov_P_grid(model, path, I, phi, tau, t_grid, cfg=None):
    """M^P on a uniform grid with spacing dt, by FFT cross-correlation of kernel and path."""
    cfg = cfg or MelnikovConfig()
    return _evaluate_grid(MelnikovIntegrand(model, I, phi, tau, "P"), path, t_grid, cfg)


def melnikov_I_grid(model, path, I, phi, tau, t_grid, cfg=None):
    cfg = cfg or MelnikovConfig()
    return _evaluate_grid(MelnikovIntegrand(model, I, phi, tau, "I"), path, t_grid, cfg)


def aligned_grid(path, t_lo, t_hi, offset=0.0):
    """Path-node times in ``[t_lo, t_hi]`` shifted by ``offset`` (a fraction of dt)."""
    k0 = int(math.ceil((t_lo - path.t_start) / path.dt - 1e-9))
    k1 = int(math.floor((t_hi - path.t_start) / path.dt + 1e-9))
    return path.t_start + (np.arange(k0, k1 + 1) + offset) * path.dt


def time_invariance_residual(model, path, I, phi, tau, t, sigma, cfg=None, kind="P"):
    """``|M(I, phi, tau, t) - M(I, phi + nu sigma, tau + sigma, t + sigma)|``."""
    f = melnikov_P if kind == "P" else melnikov_I
    nu = float(model.nu(I))
    a = f(model, path, I, phi, tau, t, cfg).value
    b = f(model, path, I, phi + nu * sigma, tau + sigma, t + sigma, cfg).value
    return abs(a - b)


def _as_pairs(series):
    if isinstance(series, MelnikovSeries):
        return series.t, series.values
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("series must be a MelnikovSeries or an (n, 2) array of (t, value)")
    return arr[:, 0], arr[:, 1]


def _refine(evaluator, a, b, fa, fb, tol, maxiter=60):
    # Illinois regula falsi on a sign-change bracket
    side = 0
    c = a
    for _ in range(maxiter):
        c = (a * fb - b * fa) / (fb - fa)
        fc = evaluator(c)
        if fc == 0.0 or abs(fc) < tol or abs(b - a) < 1e-14 * max(1.0, abs(c)):
            return c
        if (fc < 0) == (fb < 0):
            b, fb = c, fc
            if side == 1:
                fa *= 0.5
            side = 1
        else:
            a, fa = c, fc
            if side == -1:
                fb *= 0.5
            side = -1
    return c


def find_zeros(series, slope_threshold=1e-6, evaluator=None, return_flagged=False):
    """Zeros of a sampled series as rows ``(t*, slope)``.

    Brackets are strict sign changes between neighbors, or an exact zero at an
    interior node whose neighbors have opposite signs.  Each bracket is refined
    by a secant step on the samples, or by regula falsi on ``evaluator`` when
    one is given.  Zeros whose finite-difference slope is below
    ``slope_threshold`` in magnitude are degenerate: they are dropped and
    returned separately when ``return_flagged`` is set.
    """
    t, v = _as_pairs(series)
    if t.size == 0:
        raise ValueError("empty series")
    zeros, flagged = [], []
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    tol = 1e-13 * max(scale, 1e-300)
    for k in range(t.size - 1):
        a, b = v[k], v[k + 1]
        if a != 0.0 and b != 0.0 and (a < 0) != (b < 0):
            slope = (b - a) / (t[k + 1] - t[k])
            if evaluator is None:
                tz = t[k] - a / slope
            else:
                tz = _refine(lambda x: evaluator(x), t[k], t[k + 1], a, b, tol)
        elif a == 0.0 and 0 < k and v[k - 1] != 0.0 and b != 0.0 and (v[k - 1] < 0) != (b < 0):
            slope = (b - v[k - 1]) / (t[k + 1] - t[k - 1])
            tz = t[k]
        else:
            continue
        (zeros if abs(slope) >= slope_threshold else flagged).append((tz, slope))
    out = np.array(zeros, dtype=float).reshape(-1, 2)
    if return_flagged:
        return out, np.array(flagged, dtype=float).reshape(-1, 2)
    return out


def find_level_crossings(series, v, slope_threshold=1e-6, evaluator=None):
    """Times where the series crosses the level ``v``."""
    t, vals = _as_pairs(series)
    shifted = np.column_stack([t, vals - v])
    ev = None if evaluator is None else (lambda x: evaluator(x) - v)
    return find_zeros(shifted, slope_threshold, ev)[:, 0]


# the scattering experiments live in their own module and are re-exported here
from .scattering import (  # noqa: E402
    ActionChange,
    MicroDiffusionReport,
    SectionPoint,
    action_change_measured,
    manifold_point,
    micro_diffusion_demo,
    splitting_measured,
)
