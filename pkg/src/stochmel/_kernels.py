"""numba-compiled RK4 loops, built once per model from its numpy callables.

Forcing modes: 0 = no noise, 1 = eps*omega(t), 2 = eps*psi(t)*omega(t) with
the bump given by precomputed admissibility tables.  Loops report failures
through an integer status instead of raising: -1 noise domain exceeded,
-2 non-finite state, -3 section not reached.
"""
import math

import numpy as np
from numba import njit

OK, DOMAIN, NONFINITE, NOT_REACHED = 0, -1, -2, -3

_CACHE = {}


class Compiled:
    def __init__(self, model, run, run_var, section):
        self.model = model
        self.run = run
        self.run_var = run_var
        self.section = section


def compiled(model):
    entry = _CACHE.get(id(model))
    if entry is None or entry.model is not model:
        entry = _build(model)
        _CACHE[id(model)] = entry
    return entry


def _build(model):
    dh0 = njit(model.dh0)
    d2h0 = njit(model.d2h0)
    dV = njit(model.dV)
    d2V = njit(model.d2V)
    gH1 = njit(model.grad_H1)
    hH1 = njit(model.hess_H1)

    @njit
    def forcing(t, eps, mode, tp, dtp, vals, bmask, bleft, bright, rho):
        if mode == 0:
            return 0.0, OK
        n = vals.shape[0]
        x = (t - tp) / dtp
        if x < -1e-9 or x > n - 1 + 1e-9:
            return 0.0, DOMAIN
        k = int(math.floor(x))
        if k < 0:
            k = 0
        if k > n - 2:
            k = n - 2
        w = x - k
        if w < 0.0:
            w = 0.0
        if w > 1.0:
            w = 1.0
        om = vals[k] * (1.0 - w) + vals[k + 1] * w
        if mode == 2 and not (bmask[k] and bmask[k + 1]):
            d = min(t - bleft[k], bright[k + 1] - t)
            if d < 0.0:
                d = 0.0
            y = 1.0 - d / rho
            if y < 0.0:
                y = 0.0
            om *= y * y * (3.0 - 2.0 * y)
        return eps * om, OK

    @njit
    def field(z, c, out):
        I = z[0]
        phi = z[1]
        p = z[2]
        q = z[3]
        gI, gphi, gp, gq = gH1(I, phi, p, q)
        out[0] = -c * gphi
        out[1] = dh0(I) + c * gI
        out[2] = -dV(q) - c * gq
        out[3] = p + c * gp

    @njit
    def jac(z, c, M):
        I = z[0]
        phi = z[1]
        p = z[2]
        q = z[3]
        II, Iph, Ip, Iq, phph, php, phq, pp, pq, qq = hH1(I, phi, p, q)
        # symmetric Hessian S of H0 + c H1; M = J S
        S = np.empty((4, 4))
        S[0, 0] = d2h0(I) + c * II
        S[0, 1] = c * Iph
        S[0, 2] = c * Ip
        S[0, 3] = c * Iq
        S[1, 1] = c * phph
        S[1, 2] = c * php
        S[1, 3] = c * phq
        S[2, 2] = 1.0 + c * pp
        S[2, 3] = c * pq
        S[3, 3] = d2V(q) + c * qq
        for i in range(4):
            for j in range(i):
                S[i, j] = S[j, i]
        for j in range(4):
            M[0, j] = -S[1, j]
            M[1, j] = S[0, j]
            M[2, j] = -S[3, j]
            M[3, j] = S[2, j]

    @njit
    def step(z, t, h, eps, mode, tp, dtp, vals, bm, bl, br, rho, k1, k2, k3, k4, tmp, out):
        c1, s1 = forcing(t, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        c2, s2 = forcing(t + 0.5 * h, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        c4, s4 = forcing(t + h, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        if s1 != OK or s2 != OK or s4 != OK:
            return DOMAIN
        field(z, c1, k1)
        for i in range(4):
            tmp[i] = z[i] + 0.5 * h * k1[i]
        field(tmp, c2, k2)
        for i in range(4):
            tmp[i] = z[i] + 0.5 * h * k2[i]
        field(tmp, c2, k3)
        for i in range(4):
            tmp[i] = z[i] + h * k3[i]
        field(tmp, c4, k4)
        for i in range(4):
            out[i] = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(out[i]):
                return NONFINITE
        return OK

    @njit
    def run(z0, t0, h, nsteps, hlast, eps, mode, tp, dtp, vals, bm, bl, br, rho):
        total = nsteps + 1 + (1 if hlast != 0.0 else 0)
        states = np.empty((total, 4))
        times = np.empty(total)
        k1 = np.empty(4)
        k2 = np.empty(4)
        k3 = np.empty(4)
        k4 = np.empty(4)
        tmp = np.empty(4)
        states[0, :] = z0
        times[0] = t0
        for k in range(total - 1):
            t = t0 + k * h
            hk = h if k < nsteps else hlast
            st = step(states[k], t, hk, eps, mode, tp, dtp, vals, bm, bl, br, rho, k1, k2, k3, k4, tmp, states[k + 1])
            if st != OK:
                return st, states[: k + 1], times[: k + 1]
            times[k + 1] = t0 + (k + 1) * h if k < nsteps else t + hlast
        return OK, states, times

    @njit
    def vstep(y, t, h, eps, mode, tp, dtp, vals, bm, bl, br, rho, out):
        # y = (z, X) with X flattened row-major; dX/dt = Df(z) X
        c1, s1 = forcing(t, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        c2, s2 = forcing(t + 0.5 * h, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        c4, s4 = forcing(t + h, eps, mode, tp, dtp, vals, bm, bl, br, rho)
        if s1 != OK or s2 != OK or s4 != OK:
            return DOMAIN
        ks = np.empty((4, 20))
        cs = (c1, c2, c2, c4)
        fac = (0.0, 0.5, 0.5, 1.0)
        M = np.empty((4, 4))
        ytmp = np.empty(20)
        zf = np.empty(4)
        for stage in range(4):
            if stage == 0:
                ytmp[:] = y
            else:
                for i in range(20):
                    ytmp[i] = y[i] + fac[stage] * h * ks[stage - 1, i]
            field(ytmp[:4], cs[stage], zf)
            ks[stage, :4] = zf
            jac(ytmp[:4], cs[stage], M)
            for i in range(4):
                for j in range(4):
                    acc = 0.0
                    for l in range(4):
                        acc += M[i, l] * ytmp[4 + 4 * l + j]
                    ks[stage, 4 + 4 * i + j] = acc
        for i in range(20):
            out[i] = y[i] + h / 6.0 * (ks[0, i] + 2.0 * ks[1, i] + 2.0 * ks[2, i] + ks[3, i])
            if not math.isfinite(out[i]):
                return NONFINITE
        return OK

    @njit
    def run_var(z0, t0, h, nsteps, hlast, eps, mode, tp, dtp, vals, bm, bl, br, rho):
        total = nsteps + 1 + (1 if hlast != 0.0 else 0)
        ys = np.zeros((total, 20))
        times = np.empty(total)
        ys[0, :4] = z0
        for i in range(4):
            ys[0, 4 + 5 * i] = 1.0
        times[0] = t0
        for k in range(total - 1):
            t = t0 + k * h
            hk = h if k < nsteps else hlast
            st = vstep(ys[k], t, hk, eps, mode, tp, dtp, vals, bm, bl, br, rho, ys[k + 1])
            if st != OK:
                return st, ys[: k + 1], times[: k + 1]
            times[k + 1] = t0 + (k + 1) * h if k < nsteps else t + hlast
        return OK, ys, times

    @njit
    def section(z0, t0, h, max_steps, qstar, eps, mode, tp, dtp, vals, bm, bl, br, rho):
        # integrate until q crosses qstar; refine the crossing on the partial
        # step length by safeguarded secant
        states = np.empty((max_steps + 2, 4))
        times = np.empty(max_steps + 2)
        k1 = np.empty(4)
        k2 = np.empty(4)
        k3 = np.empty(4)
        k4 = np.empty(4)
        tmp = np.empty(4)
        trial = np.empty(4)
        states[0, :] = z0
        times[0] = t0
        zc = np.empty(4)
        zc[:] = z0
        if z0[3] == qstar:
            return OK, states[:1], times[:1], t0, zc
        g0 = z0[3] - qstar
        for k in range(max_steps):
            t = t0 + k * h
            st = step(states[k], t, h, eps, mode, tp, dtp, vals, bm, bl, br, rho, k1, k2, k3, k4, tmp, states[k + 1])
            if st != OK:
                return st, states[: k + 1], times[: k + 1], t, zc
            times[k + 1] = t0 + (k + 1) * h
            g1 = states[k + 1, 3] - qstar
            if g1 == 0.0:
                zc[:] = states[k + 1]
                return OK, states[: k + 2], times[: k + 2], times[k + 1], zc
            if (g0 < 0.0) != (g1 < 0.0):
                a, fa = 0.0, g0
                b, fb = 1.0, g1
                theta = 1.0
                side = 0
                for _ in range(100):
                    theta = (a * fb - b * fa) / (fb - fa)
                    st = step(states[k], t, theta * h, eps, mode, tp, dtp, vals, bm, bl, br, rho,
                              k1, k2, k3, k4, tmp, trial)
                    if st != OK:
                        return st, states[: k + 2], times[: k + 2], t, zc
                    ft = trial[3] - qstar
                    if ft == 0.0 or abs(b - a) < 1e-15:
                        break
                    if (ft < 0.0) == (fb < 0.0):
                        b, fb = theta, ft
                        if side == 1:
                            fa *= 0.5
                        side = 1
                    else:
                        a, fa = theta, ft
                        if side == -1:
                            fb *= 0.5
                        side = -1
                    if abs(ft) < 1e-16:
                        break
                zc[:] = trial
                return OK, states[: k + 1], times[: k + 1], t + theta * h, zc
            g0 = g1
        return NOT_REACHED, states[: max_steps + 1], times[: max_steps + 1], t0, zc

    return Compiled(model, run, run_var, section)


_EMPTY_V = np.zeros(2)
_EMPTY_B = np.zeros(2, dtype=np.bool_)


def noise_args(path=None, eps=0.0, tables=None):
    """Positional forcing arguments for the compiled loops."""
    if path is None or eps == 0.0:
        return (0.0, 0, 0.0, 1.0, _EMPTY_V, _EMPTY_B, _EMPTY_V, _EMPTY_V, 1.0)
    vals = np.ascontiguousarray(path.values, dtype=np.float64)
    if tables is None:
        return (float(eps), 1, path.t_start, path.dt, vals, _EMPTY_B, _EMPTY_V, _EMPTY_V, 1.0)
    return (float(eps), 2, path.t_start, path.dt, vals, tables.mask, tables.left, tables.right, tables.rho)


def pendulum_orbit(model, p, q, h, n):
    """Unperturbed pendulum orbit from (p, q) at time 0: (times, p, q), n nodes."""
    c = compiled(model)
    z0 = np.array([0.0, 0.0, p, q])
    st, states, times = c.run(z0, 0.0, h, n - 1, 0.0, *noise_args())
    return times, states[:, 2], states[:, 3]


def time_to_section(model, p, q, h, budget):
    """Unsigned flight time from (p, q) to the reference section, or None."""
    c = compiled(model)
    z0 = np.array([0.0, 0.0, float(p), float(q)])
    max_steps = int(math.ceil(budget / abs(h)))
    st, _, _, tc, _ = c.section(z0, 0.0, h, max_steps, model.q_star, *noise_args())
    if st != OK:
        return None
    return abs(tc)
