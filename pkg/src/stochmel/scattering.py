"""Stable/unstable manifold points by shooting, splitting and action-change experiments.

Under (H1) the inner manifold ``{p = q = 0}`` stays invariant, so the
unperturbed saddle eigenvectors seed the perturbed manifolds up to
``O(seed_offset^2)``.  A seed's time and inner coordinates are solved for by
quasi-Newton so that the leg hits the section ``q = q*`` exactly at time
``t0`` with action ``I`` and phase ``phi``.  Stable and unstable points then
share the graph coordinates ``(I, phi, tau = 0, t0)``.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import AdmissibilityError, ConvergenceError, DomainError, LevelNotCrossedError
from .integrate import IntegratorConfig, Trajectory
from .model import pendulum_energy, satisfies_H1
from .noise import admissible_mask, get_kernel

SIDES = ("stable", "unstable")


class SectionPoint(NamedTuple):
    state: np.ndarray
    t: float
    P: float
    tau: float
    side: str
    seed_state: np.ndarray
    seed_time: float
    iterations: int
    leg: Trajectory


def _seed(model, side, delta):
    beta = model.beta
    nrm = math.sqrt(1.0 + beta * beta)
    if side == "unstable":
        return delta * beta / nrm, delta / nrm
    return delta * beta / nrm, 1.0 - delta / nrm


_FLIGHT = {}


def _flight_time(model, side, delta, h):
    key = (id(model), side, float(delta), float(h))
    if key not in _FLIGHT:
        c = _kernels.compiled(model)
        p, q = _seed(model, side, delta)
        hs = h if side == "unstable" else -h
        max_steps = int(200.0 / h)
        st, _, _, tc, _ = c.section(np.array([0.0, 0.0, p, q]), 0.0, hs, max_steps, model.q_star,
                                    *_kernels.noise_args())
        if st != _kernels.OK:
            raise ConvergenceError("unperturbed separatrix does not reach the section")
        _FLIGHT[key] = (abs(tc), model)
    return _FLIGHT[key][0]


def manifold_point(model, path, eps, side, I, phi, t0, T_asym=20.0, seed_offset=1e-5, cfg=None,
                   tol=1e-12, max_iter=30):
    """Point of the stable or unstable manifold on the section ``q = q*`` at time ``t0``.

    The leg starts ``seed_offset`` along the saddle eigenvector (unstable:
    forward from ``q = 0``; stable: backward from ``q = 1``).  Its start time
    and inner coordinates are adjusted until the section crossing happens at
    ``t0`` with action ``I`` and phase ``phi``.  ``T_asym`` bounds the flight
    time (the leg may take up to ``2 T_asym``).
    """
    if side not in SIDES:
        raise ValueError("side must be 'stable' or 'unstable'")
    if not satisfies_H1(model):
        raise ValueError("manifold shooting needs condition (H1): the inner manifold must stay invariant")
    beta = model.beta
    if T_asym < 15.0 / beta:
        raise ValueError("T_asym must be at least 15/beta")
    if not (1e-7 <= seed_offset <= 1e-4):
        raise ValueError("seed_offset must lie in [1e-7, 1e-4]")
    cfg = cfg or IntegratorConfig()
    forced = eps != 0.0
    h = cfg.step_for(path if forced else None)
    direction = 1.0 if side == "unstable" else -1.0
    Tf = _flight_time(model, side, seed_offset, h)
    if Tf > 2.0 * T_asym:
        raise ConvergenceError("flight time exceeds the 2*T_asym budget")
    p_s, q_s = _seed(model, side, seed_offset)
    c = _kernels.compiled(model)
    args = _kernels.noise_args(path if forced else None, eps)
    max_steps = int(math.ceil(2.0 * T_asym / h))
    nu = float(model.nu(I))
    dnu = float(model.d2h0(I))
    x = np.array([I, phi - direction * nu * Tf, t0 - direction * Tf], dtype=float)
    # Jacobian of (I_c, phi_c, t_c) w.r.t. the seed (I_s, phi_s, t_s) for eps = 0
    J0 = np.array([[1.0, 0.0, 0.0], [direction * dnu * Tf, 1.0, 0.0], [0.0, 0.0, 1.0]])
    target = np.array([I, phi, t0], dtype=float)
    for it in range(1, max_iter + 1):
        z0 = np.array([x[0], x[1], p_s, q_s])
        st, states, times, tc, zc = c.section(z0, x[2], direction * h, max_steps, model.q_star, *args)
        if st == _kernels.DOMAIN:
            raise DomainError("manifold leg leaves the noise domain")
        if st == _kernels.NONFINITE:
            raise FloatingPointError("non-finite state on manifold leg")
        if st == _kernels.NOT_REACHED:
            raise ConvergenceError("trajectory fails to reach the section within the time budget")
        r = np.array([zc[0], zc[1], tc]) - target
        if max(abs(r[0]), abs(r[1]), abs(r[2]) / max(1.0, abs(t0))) < tol:
            break
        x = x - np.linalg.solve(J0, r)
    else:
        raise ConvergenceError(f"shooting did not converge (residual {np.max(np.abs(r)):.3e})")
    P = float(pendulum_energy(model, zc[2], zc[3]))
    P1, P2 = model.P_bounds
    if not (P1 < P < P2):
        raise DomainError("section point leaves the neighborhood of the separatrix")
    leg = Trajectory(np.append(times, tc), np.vstack([states, zc]))
    return SectionPoint(zc.copy(), float(tc), P, 0.0, side, z0, float(x[2]), it, leg)


def splitting_measured(model, path, eps, I, phi, t0, T_asym=20.0, seed_offset=1e-5, cfg=None):
    """``P(stable point) - P(unstable point)`` at matched ``(I, phi, tau = 0, t0)``."""
    s = manifold_point(model, path, eps, "stable", I, phi, t0, T_asym, seed_offset, cfg)
    u = manifold_point(model, path, eps, "unstable", I, phi, t0, T_asym, seed_offset, cfg)
    return s.P - u.P


class ActionChange(NamedTuple):
    deltaI: float
    Iminus: float
    Iplus: float


def action_change_measured(model, path, eps, I, phi, t0, T_asym=20.0, seed_offset=1e-5, cfg=None,
                           tail_fraction=0.1):
    """Action gained along one homoclinic excursion through the section at ``t0``.

    The excursion is the unstable leg into the section followed by the
    stable leg out of it; both legs meet there with the same ``(I, phi, q)``.
    ``Iminus`` averages ``I`` over the first ``tail_fraction`` of the excursion
    (near the inner manifold in the past), ``Iplus`` over the last one.  Since
    ``dI/dt`` vanishes on the inner manifold, the averages approximate the
    footpoint actions.
    """
    u = manifold_point(model, path, eps, "unstable", I, phi, t0, T_asym, seed_offset, cfg)
    s = manifold_point(model, path, eps, "stable", I, phi, t0, T_asym, seed_offset, cfg)
    Iu = u.leg.I
    Is = s.leg.I[::-1]  # forward time order: section ... seed
    nu_ = max(1, int(tail_fraction * Iu.size))
    ns_ = max(1, int(tail_fraction * Is.size))
    Iminus = float(np.mean(Iu[:nu_]))
    Iplus = float(np.mean(Is[-ns_:]))
    return ActionChange(Iplus - Iminus, Iminus, Iplus)


class MicroDiffusionReport(NamedTuple):
    v: float
    t_cross: float
    t0: float
    sigma: float
    phi_shifted: float
    deltaI: float
    eps_v: float
    rel_error: float
    invariance_residual: float
    A: float
    B: float
    series_max: float
    series_min: float
    n_crossings: int


def micro_diffusion_demo(model, path, eps, I, phi, v, cfg=None, mcfg=None, window=(0.0, 50.0),
                         A=None, B=0.1, shift_budget=20.0, T_asym=20.0, seed_offset=1e-5,
                         calibration_seed=0):
    """One action jump of size ``eps v`` along a homoclinic excursion.

    Scans ``M^I(I, phi, 0, t)`` over ``window``, locates the first crossing
    ``t*`` of the level ``v``, finds the nearest admissible shift time
    ``t0 = t* + sigma`` (so that the bump-modified system agrees with the
    original one), and measures the action change of the excursion whose
    graph coordinates are ``(I, phi + nu sigma, sigma, t0)``, i.e. the one
    through the section at ``t*`` with phase ``phi``.
    """
    from .melnikov import MelnikovConfig, aligned_grid, find_level_crossings, melnikov_I, melnikov_I_grid

    mcfg = mcfg or MelnikovConfig()
    grid = aligned_grid(path, window[0], window[1])
    series = melnikov_I_grid(model, path, I, phi, 0.0, grid, mcfg)
    vmax, vmin = float(series.values.max()), float(series.values.min())
    if not (vmin <= v <= vmax):
        raise LevelNotCrossedError(f"level not crossed: v={v} outside [{vmin}, {vmax}]")
    cross = find_level_crossings(series, v, evaluator=lambda t: melnikov_I(model, path, I, phi, 0.0, t, mcfg).value)
    exact = np.flatnonzero(series.values == v)
    if exact.size:
        cross = np.sort(np.append(cross, series.t[exact]))
    if cross.size == 0:
        raise LevelNotCrossedError("no crossing of the level found")
    t_star = float(cross[0])
    if A is None:
        from .noise import calibrate_envelope

        kernel = get_kernel(path.kernel_id)
        A = calibrate_envelope(kernel, path.dt, B, half_width=0.5 * (path.t_end - path.t_start),
                               master_seed=calibration_seed)
    mask = admissible_mask(path, A, B)
    t_nodes = path.times
    near = np.abs(t_nodes - t_star) <= shift_budget
    cand = np.flatnonzero(mask & near)
    if cand.size == 0:
        raise AdmissibilityError("shifted t0 not admissible within the scan budget")
    k = cand[np.argmin(np.abs(t_nodes[cand] - t_star))]
    t0 = float(t_nodes[k])
    sigma = t0 - t_star
    nu = float(model.nu(I))
    phi_s = phi + nu * sigma
    lhs = melnikov_I(model, path, I, phi, 0.0, t_star, mcfg).value
    rhs = melnikov_I(model, path, I, phi_s, sigma, t0, mcfg).value
    ac = action_change_measured(model, path, eps, I, phi, t_star, T_asym, seed_offset, cfg)
    ev = eps * v
    return MicroDiffusionReport(float(v), t_star, t0, sigma, phi_s, ac.deltaI, ev,
                                abs(ac.deltaI - ev) / abs(ev) if ev != 0 else math.inf,
                                abs(lhs - rhs), float(A), float(B), vmax, vmin, int(cross.size))
