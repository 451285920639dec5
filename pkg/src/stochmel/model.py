"""Rotator-pendulum Hamiltonian, perturbation, brackets and pendulum coordinates.

State ordering is ``z = (I, phi, p, q)``.  Hamilton's equations read
``dz/dt = (-H_phi, H_I, -H_q, H_p)``.  Both angles have period 1.

Model callables are plain numpy expressions that accept scalars or arrays;
the integrator compiles them with numba, so they must stay within the
numba-supported numpy subset.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConvergenceError, DomainError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Callables defining ``H0 = h0(I) + p^2/2 + V(q)`` and the perturbation ``H1``.

    ``grad_H1`` returns ``(H_I, H_phi, H_p, H_q)``; ``hess_H1`` returns the ten
    unique second derivatives in the order
    ``(II, Iphi, Ip, Iq, phiphi, phip, phiq, pp, pq, qq)``.
    """

    name: str
    h0: Callable
    dh0: Callable
    d2h0: Callable
    V: Callable
    dV: Callable
    d2V: Callable
    H1: Callable
    grad_H1: Callable
    hess_H1: Callable
    separatrix_closed_form: Callable | None = None
    q_star: float = 0.5
    P_bounds: tuple = (-0.02, 0.02)
    q_bounds: tuple = (0.1, 0.9)
    params: tuple = ()

    def nu(self, I):
        return self.dh0(I)

    @property
    def beta(self):
        return math.sqrt(-float(self.d2V(0.0)))

    def __hash__(self):
        return id(self)


class State(NamedTuple):
    I: float
    phi: float
    p: float
    q: float

    @classmethod
    def make(cls, I, phi, p, q):
        """Construct with both angles reduced to [0, 1)."""
        return cls(float(I), float(phi) % 1.0, float(p), float(q) % 1.0)

    def array(self):
        return np.array(self, dtype=float)


class SeparatrixPoint(NamedTuple):
    tau: float
    p0: float
    q0: float


def _unpack(z):
    if isinstance(z, State):
        return z.I, z.phi, z.p, z.q
    if isinstance(z, np.ndarray) and z.shape == (4,):
        return z[0], z[1], z[2], z[3]
    I, phi, p, q = z
    return np.asarray(I, float), np.asarray(phi, float), np.asarray(p, float), np.asarray(q, float)


def _default_functions(coupling):
    c = float(coupling)
    tp = TWO_PI

    def h0(I):
        return 0.5 * I * I

    def dh0(I):
        return I

    def d2h0(I):
        return 1.0 + 0.0 * I

    def V(q):
        return (np.cos(tp * q) - 1.0) / (tp * tp)

    def dV(q):
        return -np.sin(tp * q) / tp

    def d2V(q):
        return -np.cos(tp * q)

    def H1(I, phi, p, q):
        return c * p * p * np.cos(tp * phi)

    def grad_H1(I, phi, p, q):
        z = 0.0 * p
        return (z, -c * tp * p * p * np.sin(tp * phi), 2.0 * c * p * np.cos(tp * phi), z)

    def hess_H1(I, phi, p, q):
        z = 0.0 * p
        cs = np.cos(tp * phi)
        sn = np.sin(tp * phi)
        return (z, z, z, z, -c * tp * tp * p * p * cs, -2.0 * c * tp * p * sn, z, 2.0 * c * cs + z, z, z)

    return h0, dh0, d2h0, V, dV, d2V, H1, grad_H1, hess_H1


def _default_separatrix(tau):
    tau = np.asarray(tau, dtype=float)
    q0 = (2.0 / math.pi) * np.arctan(np.exp(tau))
    p0 = 1.0 / (math.pi * np.cosh(tau))
    return p0, q0


def default_model(coupling=1.0):
    """``h0 = I^2/2``, ``V = (cos 2 pi q - 1)/(4 pi^2)``, ``H1 = c p^2 cos 2 pi phi``.

    Then ``nu(I) = I``, ``V''(0) = -1`` so ``beta = 1``, and the separatrix is
    ``q0 = (2/pi) atan(e^tau)``, ``p0 = sech(tau)/pi``.
    """
    return ModelSpec("default", *_default_functions(coupling), separatrix_closed_form=_default_separatrix,
                     params=(("coupling", float(coupling)),))


def null_model():
    """The default pendulum-rotator with ``H1 = 0``."""
    h0, dh0, d2h0, V, dV, d2V, _, _, _ = _default_functions(1.0)

    def H1(I, phi, p, q):
        return 0.0 * p

    def grad_H1(I, phi, p, q):
        z = 0.0 * p
        return (z, z, z, z)

    def hess_H1(I, phi, p, q):
        z = 0.0 * p
        return (z, z, z, z, z, z, z, z, z, z)

    return ModelSpec("null", h0, dh0, d2h0, V, dV, d2V, H1, grad_H1, hess_H1,
                     separatrix_closed_form=_default_separatrix)


_REGISTRY = {"default": default_model, "null": null_model}


def register_model(name, factory):
    _REGISTRY[name] = factory


def get_model(name="default", **params):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model id {name!r}") from None
    return factory(**params)


def model_ids():
    return sorted(_REGISTRY)


def hamiltonian_H0(model, z):
    I, phi, p, q = _unpack(z)
    return model.h0(I) + 0.5 * p * p + model.V(q)


def pendulum_energy(model, p, q):
    return 0.5 * p * p + model.V(q)


def unperturbed_field(model, z):
    I, phi, p, q = _unpack(z)
    zero = 0.0 * I
    return np.array([zero, model.dh0(I), -model.dV(q), p + zero])


def perturbation_field(model, z):
    """``J grad H1`` in state ordering."""
    gI, gphi, gp, gq = model.grad_H1(*_unpack(z))
    return np.array([-gphi, gI, -gq, gp])


def perturbed_field(model, z, t, eps, path):
    from .noise import evaluate

    w = evaluate(path, t)
    return unperturbed_field(model, z) + eps * w * perturbation_field(model, z)


def hess_H0(model, z):
    """Hessian of H0 (4x4) at a single state."""
    I, phi, p, q = _unpack(z)
    H = np.zeros((4, 4))
    H[0, 0] = model.d2h0(I)
    H[2, 2] = 1.0
    H[3, 3] = model.d2V(q)
    return H


def hess_H1_matrix(model, z):
    II, Iph, Ip, Iq, phph, php, phq, pp, pq, qq = (float(v) for v in model.hess_H1(*_unpack(z)))
    return np.array([[II, Iph, Ip, Iq], [Iph, phph, php, phq], [Ip, php, pp, pq], [Iq, phq, pq, qq]])


_J = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)


def field_jacobian(model, z, c=0.0):
    """Jacobian of ``J grad (H0 + c H1)`` at ``z``."""
    return _J @ (hess_H0(model, z) + c * hess_H1_matrix(model, z))


def poisson_P_H1(model, z):
    """``{P, H1} = V'(q) H1_p - p H1_q``."""
    I, phi, p, q = _unpack(z)
    _, _, gp, gq = model.grad_H1(I, phi, p, q)
    return model.dV(q) * gp - p * gq


def poisson_I_H1(model, z):
    """``{I, H1} = -H1_phi``."""
    I, phi, p, q = _unpack(z)
    return -model.grad_H1(I, phi, p, q)[1]


def check_model(model, n=32, tol=1e-12):
    """Raise if the pendulum or the (H1) conditions fail.

    Checks ``V(q+1) = V(q)``, ``V'(0) = 0``, ``V''(0) < 0`` and that ``H1`` with
    its gradient vanishes on an ``n x n`` grid of ``(I, phi)`` at ``p = q = 0``.
    """
    qs = np.linspace(0.0, 1.0, 17)
    if np.max(np.abs(model.V(qs + 1.0) - model.V(qs))) > 1e-12:
        raise ValueError("V is not 1-periodic")
    if abs(float(model.dV(0.0))) > 1e-12 or not float(model.d2V(0.0)) < 0:
        raise ValueError("V must have a non-degenerate maximum at q = 0")
    if not satisfies_H1(model, n, tol):
        raise ValueError("perturbation violates condition (H1) on the inner manifold")


def satisfies_H1(model, n=32, tol=1e-12):
    I, phi = np.meshgrid(np.linspace(-2.0, 2.0, n), np.linspace(0.0, 1.0, n, endpoint=False))
    zero = np.zeros_like(I)
    vals = [model.H1(I, phi, zero, zero), *model.grad_H1(I, phi, zero, zero)]
    return all(float(np.max(np.abs(np.broadcast_to(v, I.shape)))) <= tol for v in vals)


def separatrix_arrays(model, tau):
    """``(p0(tau), q0(tau))`` as arrays."""
    if model.separatrix_closed_form is not None:
        return model.separatrix_closed_form(tau)
    return _numeric_separatrix(model, np.asarray(tau, dtype=float))


def separatrix(model, tau):
    p0, q0 = separatrix_arrays(model, float(tau))
    return SeparatrixPoint(float(tau), float(p0), float(q0))


def separatrix_derivative(model, tau):
    """``(dp0/dtau, dq0/dtau) = (-V'(q0), p0)``."""
    p0, q0 = separatrix_arrays(model, tau)
    return -model.dV(q0), p0


def reference_momentum(model):
    """Momentum on the zero level at ``q = q*``."""
    return math.sqrt(-2.0 * float(model.V(model.q_star)))


def _numeric_separatrix(model, tau, h=1e-3):
    # integrate the planar pendulum from the reference point q = q* by RK4 on a
    # fine grid, then interpolate with the Hermite data (p, q, p', q')
    from scipy.interpolate import CubicHermiteSpline

    from ._kernels import pendulum_orbit

    tau_flat = np.atleast_1d(tau)
    lo, hi = min(float(tau_flat.min()), 0.0), max(float(tau_flat.max()), 0.0)
    p_star = reference_momentum(model)
    out_p = np.empty_like(tau_flat)
    out_q = np.empty_like(tau_flat)
    for sign, span in ((1.0, hi), (-1.0, lo)):
        n = int(math.ceil(abs(span) / h)) + 1
        ts, ps, qs = pendulum_orbit(model, p_star, model.q_star, sign * h, n)
        sel = (tau_flat >= 0) if sign > 0 else (tau_flat < 0)
        if not sel.any():
            continue
        dp = -model.dV(qs)
        order = np.argsort(ts)
        if ts.size < 2:
            out_p[sel], out_q[sel] = p_star, model.q_star
            continue
        sp = CubicHermiteSpline(ts[order], ps[order], dp[order])
        sq = CubicHermiteSpline(ts[order], qs[order], ps[order])
        out_p[sel] = sp(tau_flat[sel])
        out_q[sel] = sq(tau_flat[sel])
    if np.ndim(tau) == 0:
        return float(out_p[0]), float(out_q[0])
    return out_p.reshape(np.shape(tau)), out_q.reshape(np.shape(tau))


def in_neighborhood(model, p, q):
    P = pendulum_energy(model, p, q)
    P1, P2 = model.P_bounds
    q1, q2 = model.q_bounds
    return P1 < P < P2 and q1 < q < q2


def pendulum_coords(model, p, q, h=1e-3, budget=50.0):
    """Canonical ``(P, tau)`` of a pendulum state in the neighborhood of the separatrix.

    ``tau`` is the signed time of flight along the level set from the section
    ``q = q*``: the state is reached from the section after time ``tau``.  It is
    found by flowing the unperturbed pendulum to the section (forward or
    backward, whichever direction reaches it) with event location.
    """
    from ._kernels import time_to_section

    p = float(p)
    q = float(q)
    if not in_neighborhood(model, p, q):
        raise DomainError(f"(p, q) = ({p}, {q}) outside the neighborhood of the separatrix")
    P = pendulum_energy(model, p, q)
    qs = model.q_star
    if q == qs:
        return P, 0.0
    # on the upper branch q increases with p; the section is ahead when
    # (q* - q) has the sign of p
    ahead = (qs - q) * p > 0 or (p == 0.0 and (qs - q) * (-float(model.dV(q))) > 0)
    direction = 1.0 if ahead else -1.0
    t_hit = time_to_section(model, p, q, direction * h, budget)
    if t_hit is None:
        raise ConvergenceError("level set does not reach the reference section within the time budget")
    return P, -direction * t_hit
