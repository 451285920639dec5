"""Path-wise RK4 integration of the random ODE and Gronwall-bound guards.

The noise path is fixed, so the perturbed system is an ordinary
non-autonomous ODE ``z' = X0(z) + eps*omega(t)*X1(z)``.  Time nodes are
``t0 + k*h`` computed by multiplication, and the last step is shortened so
that the trajectory ends exactly at ``t1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainError
from .model import State, field_jacobian, hamiltonian_H0, hess_H1_matrix, pendulum_energy
from .noise import BumpSpec, bump_tables, get_kernel


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    method: str = "rk4"
    variational: bool = False

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")

    def step_for(self, path):
        """Effective step on ``path``: h <= dt, and h = dt for rough kernels."""
        if path is None:
            return self.h
        try:
            rough = get_kernel(path.kernel_id).exponent < 2.0
        except ValueError:
            rough = False
        if rough:
            if self.h != path.dt:
                warnings.warn("kernel exponent < 2: step forced to the noise grid dt (first-order accuracy)",
                              RuntimeWarning, stacklevel=3)
            return path.dt
        if self.h > path.dt * (1 + 1e-12):
            raise ValueError(f"step h={self.h} exceeds the noise grid dt={path.dt}")
        return self.h


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States are stored as raw lifts (angles not reduced); ``state(i)`` reduces them."""

    times: np.ndarray
    states: np.ndarray
    jacobians: np.ndarray | None = None

    def __len__(self):
        return self.times.size

    def state(self, i):
        return State.make(*self.states[i])

    @property
    def final(self):
        return self.states[-1].copy()

    @property
    def I(self):
        return self.states[:, 0]

    @property
    def phi(self):
        return self.states[:, 1]

    @property
    def p(self):
        return self.states[:, 2]

    @property
    def q(self):
        return self.states[:, 3]


def _as_array(z0):
    z = np.array(z0, dtype=float).reshape(-1)
    if z.shape != (4,):
        raise ValueError("state must have four components (I, phi, p, q)")
    return z


def _plan(t0, t1, h):
    span = t1 - t0
    if span == 0:
        raise ValueError("t1 must differ from t0")
    hs = math.copysign(h, span)
    n = int(math.floor(abs(span) / h + 1e-9))
    rest = t1 - (t0 + n * hs)
    if abs(rest) <= 1e-12 * h:
        rest = 0.0
    return hs, n, rest


_STATUS = {
    _kernels.DOMAIN: (DomainError, "noise domain exceeded during integration"),
    _kernels.NONFINITE: (FloatingPointError, "non-finite state encountered"),
}


def _raise(status):
    if status != _kernels.OK:
        exc, msg = _STATUS.get(status, (RuntimeError, f"integrator status {status}"))
        raise exc(msg)


def _integrate(model, path, eps, z0, t0, t1, cfg, tables=None, variational=False):
    cfg = cfg or IntegratorConfig()
    t0 = float(t0)
    t1 = float(t1)
    forced = eps != 0.0 and path is not None
    if eps != 0.0 and path is None:
        raise ValueError("a noise path is required when eps != 0")
    if forced and not path.covers(t0, t1):
        raise DomainError(f"[{min(t0, t1)}, {max(t0, t1)}] outside noise domain [{path.t_start}, {path.t_end}]")
    h = cfg.step_for(path if forced else None)
    hs, n, rest = _plan(t0, t1, h)
    c = _kernels.compiled(model)
    args = _kernels.noise_args(path if forced else None, eps, tables)
    z = _as_array(z0)
    if variational or cfg.variational:
        st, ys, times = c.run_var(z, t0, hs, n, rest, *args)
        _raise(st)
        return Trajectory(times, ys[:, :4].copy(), ys[:, 4:].reshape(-1, 4, 4).copy())
    st, states, times = c.run(z, t0, hs, n, rest, *args)
    _raise(st)
    return Trajectory(times, states)


def integrate(model, path, eps, z0, t0, t1, cfg=None):
    """RK4 solution of the perturbed system from ``z0`` at ``t0`` to ``t1`` (either direction)."""
    return _integrate(model, path, eps, z0, t0, t1, cfg)


def integrate_variational(model, path, eps, z0, t0, t1, cfg=None):
    """As :func:`integrate`, co-integrating the 4x4 linearized flow."""
    return _integrate(model, path, eps, z0, t0, t1, cfg, variational=True)


def integrate_modified(model, path, eps, bump, z0, t0, t1, cfg=None):
    """Integrate with ``H1`` replaced by ``psi(s, theta^{t0} omega) H1``.

    ``s`` is the elapsed time, so the bump is anchored at the initial time
    ``t0``: nodes count as admissible when ``|omega(t_k)| <= A + B|t_k - t0|``.
    If ``t0`` is an admissible shift the bump is 1 everywhere and the result
    coincides with :func:`integrate`.
    """
    if path is None:
        raise ValueError("the modified system needs a noise path")
    tables = bump_tables(path, bump, anchor=float(t0))
    return _integrate(model, path, eps, z0, t0, t1, cfg, tables=tables)


def bump_is_identically_one(path, bump, t0, t1):
    tables = bump_tables(path, bump, anchor=float(t0))
    t = path.times
    lo, hi = min(t0, t1), max(t0, t1)
    sel = (t >= lo - path.dt) & (t <= hi + path.dt)
    return bool(tables.mask[sel].all())


# Gronwall inequalities


def _check_nonneg(*coeffs):
    if any(c < 0 for c in coeffs):
        raise ValueError("Gronwall coefficients must be non-negative")


def gronwall_bound_I(d0, d1, d2, d3, t):
    """``(d0 + d1 t + d2 t^2) exp(d3 t)``."""
    _check_nonneg(d0, d1, d2, d3, t)
    return (d0 + d1 * t + d2 * t * t) * math.exp(d3 * t)


def gronwall_bound_II(d0, d1, d2, d3, d4, t):
    """``(d0 + d1 t + d2 t^2) exp(d3 t + d4 t^2 / 2)``."""
    _check_nonneg(d0, d1, d2, d3, d4, t)
    return (d0 + d1 * t + d2 * t * t) * math.exp(d3 * t + 0.5 * d4 * t * t)


def gronwall_bound_III(C0, C1, C2, C3, eps, rho1, k, t):
    """``eps (C0 + C1 t + C2 t^2 / 2) exp(C3 t)`` on ``0 <= t <= k ln(1/eps)``.

    Valid for an initial gap below ``C0 eps``, a perturbation field bounded by
    ``C1 + C2 t`` and an unperturbed field with Lipschitz constant ``C3``.  The
    window condition ``k <= (1 - rho1)/C3`` makes the bound ``O(eps^{rho1})``
    uniformly; :func:`gronwall_bound_III_uniform` returns that envelope.
    """
    _check_nonneg(C0, C1, C2, C3, eps, t)
    if not (0.0 < rho1 < 1.0):
        raise ValueError("rho1 must lie in (0, 1)")
    if not (0.0 < k <= (1.0 - rho1) / C3 * (1 + 1e-12)):
        raise ValueError("k must satisfy 0 < k <= (1 - rho1)/C3")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    if t > k * math.log(1.0 / eps) * (1 + 1e-12):
        raise ValueError("t beyond the window k ln(1/eps)")
    return eps * (C0 + C1 * t + 0.5 * C2 * t * t) * math.exp(C3 * t)


def gronwall_bound_III_uniform(C0, C1, C2, C3, eps, k):
    """Upper bound of :func:`gronwall_bound_III` over the whole window."""
    L = math.log(1.0 / eps)
    return eps ** (1.0 - C3 * k) * (C0 + C1 * k * L + 0.5 * C2 * (k * L) ** 2)


# flow closeness over unit windows


class FlowDistance(NamedTuple):
    c0: float
    c1: float
    state_gap: np.ndarray
    jacobian_gap: np.ndarray


def flow_distance(model, path, eps, z0, t0, cfg=None, bump=None, window=1.0):
    """C^0 and C^1 distance between the modified perturbed flow and the unperturbed flow.

    Over ``[t0, t0 + window]``: ``c0`` is the sup of the Euclidean state gap,
    ``c1 = c0 + sup`` of the spectral-norm Jacobian gap.  ``bump=None`` uses the
    unmodified perturbed field (bump identically 1).
    """
    if not path.covers(t0, t0 + window):
        raise DomainError("flow-distance window outside noise domain")
    cfg = cfg or IntegratorConfig()
    if bump is None:
        pert = _integrate(model, path, eps, z0, t0, t0 + window, cfg, variational=True)
    else:
        tables = bump_tables(path, bump, anchor=float(t0))
        pert = _integrate(model, path, eps, z0, t0, t0 + window, cfg, tables=tables, variational=True)
    ref = _integrate(model, path, 0.0, z0, t0, t0 + window, cfg, variational=True)
    sgap = np.linalg.norm(pert.states - ref.states, axis=1)
    jgap = np.linalg.norm(pert.jacobians - ref.jacobians, ord=2, axis=(1, 2))
    c0 = float(sgap.max())
    return FlowDistance(c0, c0 + float(jgap.max()), sgap, jgap)


@dataclass(frozen=True)
class LipschitzConstants:
    """Sampled sup constants on ``|I - I0| <= dI``, ``|P| <= P_max``.

    K1: sup |DX0| (Lipschitz constant of X0); L1: Lipschitz constant of DX0;
    K2: sup |X1|; K2p: sup |DX1|.  All spectral/Euclidean norms, inflated by
    ``margin``.
    """

    K1: float
    L1: float
    K2: float
    K2p: float
    I0: float
    n_samples: int
    margin: float

    def as_dict(self):
        return {k: getattr(self, k) for k in ("K1", "L1", "K2", "K2p", "I0", "n_samples", "margin")}


def sample_compact_domain(model, I0, n, rng, dI=1.0, P_max=0.1):
    """Uniform samples of (I, phi, p, q) with |I - I0| <= dI and |P| <= P_max."""
    out = []
    need = n
    while need > 0:
        m = 2 * need + 16
        q = rng.random(m)
        P = rng.uniform(-P_max, P_max, m)
        ok = P >= model.V(q)
        q, P = q[ok], P[ok]
        sign = np.where(rng.random(q.size) < 0.5, -1.0, 1.0)
        p = sign * np.sqrt(2.0 * (P - model.V(q)))
        I = rng.uniform(I0 - dI, I0 + dI, q.size)
        phi = rng.random(q.size)
        out.append(np.column_stack([I, phi, p, q]))
        need -= q.size
    return np.concatenate(out)[:n]


def _fields_batch(model, Z):
    I, phi, p, q = Z.T
    n = Z.shape[0]
    HI = np.zeros((n, 4, 4))
    H0 = np.zeros((n, 4, 4))
    H0[:, 0, 0] = model.d2h0(I)
    H0[:, 2, 2] = 1.0
    H0[:, 3, 3] = model.d2V(q)
    hs = [np.broadcast_to(v, (n,)) for v in model.hess_H1(I, phi, p, q)]
    idx = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
    for v, (i, j) in zip(hs, idx):
        HI[:, i, j] = v
        HI[:, j, i] = v
    J = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float)
    return J @ H0, J @ HI


def estimate_constants(model, I0=1.0, n=10_000, seed=0, margin=1.1, dI=1.0, P_max=0.1):
    """Estimate the Gronwall constants by sampling the compact domain."""
    rng = np.random.default_rng(seed)
    Z = sample_compact_domain(model, I0, n, rng, dI, P_max)
    DX0, DX1 = _fields_batch(model, Z)
    K1 = float(np.linalg.norm(DX0, ord=2, axis=(1, 2)).max())
    K2p = float(np.linalg.norm(DX1, ord=2, axis=(1, 2)).max())
    gI, gphi, gp, gq = (np.broadcast_to(v, (Z.shape[0],)) for v in model.grad_H1(*Z.T))
    K2 = float(np.sqrt(gI ** 2 + gphi ** 2 + gp ** 2 + gq ** 2).max())
    # Lipschitz constant of DX0 from central differences of DX0 along each axis
    dsq = np.zeros(Z.shape[0])
    step = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = step
        Dp, _ = _fields_batch(model, Z + e)
        Dm, _ = _fields_batch(model, Z - e)
        dsq += np.linalg.norm((Dp - Dm) / (2 * step), ord=2, axis=(1, 2)) ** 2
    L1 = float(np.sqrt(dsq).max())
    return LipschitzConstants(margin * K1, margin * L1, margin * K2, margin * K2p, float(I0), int(n), float(margin))


class FlowBounds(NamedTuple):
    c0_bound: float
    c1_bound: float
    A_prime: float
    K3p: float
    deltas_I: tuple
    deltas_II: tuple


def flow_distance_bounds(model, path, eps, z0, t0, consts, B=0.1, cfg=None, window=1.0):
    """Gronwall bounds for the quantities measured by :func:`flow_distance`.

    The C^0 gap obeys Gronwall-I with ``(0, eps K2 A', eps K2 B/2, K1)``.
    The Jacobian gap obeys Gronwall-II with
    ``d1 = L1 K3' E0 + eps K2' K3' A'``, ``d2 = eps K2' K3' B/2``,
    ``d3 = K1 + eps K2' A'``, ``d4 = eps K2' B``.  The extra ``L1 K3' E0`` term
    carries ``(DX0(z_hat) - DX0(z0)) xi0``, with ``E0`` the C^0 bound at the
    window end.  ``A'`` is the sup of ``|omega|`` over the window (the bump is
    at most 1) and ``K3'`` the sup of the unperturbed Jacobian norm.
    """
    cfg = cfg or IntegratorConfig()
    t = path.times
    sel = (t >= t0 - path.dt) & (t <= t0 + window + path.dt)
    A_prime = float(np.abs(path.values[sel]).max())
    ref = _integrate(model, None, 0.0, z0, t0, t0 + window, cfg, variational=True)
    K3p = float(np.linalg.norm(ref.jacobians, ord=2, axis=(1, 2)).max())
    dI = (0.0, eps * consts.K2 * A_prime, eps * consts.K2 * B / 2.0, consts.K1)
    E0 = gronwall_bound_I(*dI, window)
    dII = (
        0.0,
        consts.L1 * K3p * E0 + eps * consts.K2p * K3p * A_prime,
        eps * consts.K2p * K3p * B / 2.0,
        consts.K1 + eps * consts.K2p * A_prime,
        eps * consts.K2p * B,
    )
    return FlowBounds(E0, E0 + gronwall_bound_II(*dII, window), A_prime, K3p, dI, dII)


def write_trajectory_csv(traj, file, stride=1):
    cols = ["t", "I", "phi", "p", "q"]
    data = [traj.times[:, None], traj.states]
    if traj.jacobians is not None:
        cols += [f"j{i + 1}{j + 1}" for i in range(4) for j in range(4)]
        data.append(traj.jacobians.reshape(-1, 16))
    arr = np.hstack(data)[::stride]
    np.savetxt(file, arr, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def read_trajectory_csv(file):
    arr = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    jac = arr[:, 5:].reshape(-1, 4, 4) if arr.shape[1] == 21 else None
    return Trajectory(arr[:, 0], arr[:, 1:5], jac)


def energy_drift(model, traj):
    H = hamiltonian_H0(model, traj.states.T)
    return float(np.max(np.abs(H - H[0])))
