"""Stationary Gaussian noise paths and path diagnostics.

Paths are sampled on a uniform grid by circulant embedding, so the grid
covariance is exact up to the eigenvalue clipping documented in
:func:`sample_path`.  Between nodes a path is linearly interpolated.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError

PEXP = "powered-exponential"
MATERN32 = "matern-3/2"

_FAMILY_ALIASES = {
    "pexp": PEXP,
    "powered-exponential": PEXP,
    "powered_exponential": PEXP,
    "matern32": MATERN32,
    "matern-3/2": MATERN32,
    "matern": MATERN32,
}

# relative tolerance on negative embedding eigenvalues
EIG_CLIP_TOL = 1e-10
_MAX_EMBED = 1 << 24


@dataclass(frozen=True)
class Kernel:
    """Autocorrelation kernel ``r(h)`` of a unit-variance stationary process."""

    family: str
    a: float | None = None
    id: str = ""

    def r(self, h):
        x = np.abs(np.asarray(h, dtype=float))
        if self.family == PEXP:
            if self.a == 2.0:
                out = np.exp(-x * x)
            else:
                out = np.exp(-(x ** self.a))
        else:
            y = math.sqrt(3.0) * x
            out = (1.0 + y) * np.exp(-y)
        return out if out.ndim else float(out)

    def __call__(self, h):
        return self.r(h)

    def integral(self):
        """Integral of ``r`` over the real line."""
        if self.family == PEXP:
            return 2.0 * math.gamma(1.0 + 1.0 / self.a)
        return 4.0 / math.sqrt(3.0)

    def tail(self, s):
        """sup of |r(h)| over |h| >= s (both families decrease on [0, inf))."""
        return float(self.r(max(float(s), 0.0)))

    @property
    def exponent(self):
        """Local exponent in ``1 - r(h) ~ C|h|^a``."""
        return 2.0 if self.family == MATERN32 else float(self.a)

    def support_radius(self, eps=1e-28):
        """Smallest ``s`` with ``r(s) <= eps`` (bisection on the monotone tail)."""
        lo, hi = 0.0, 1.0
        while self.r(hi) > eps:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.r(mid) > eps:
                lo = mid
            else:
                hi = mid
        return hi


def build_kernel(family="powered-exponential", a=2.0):
    """Construct a kernel from a family name.

    The powered-exponential family ``exp(-|h|^a)`` needs ``1 < a <= 2``: for
    ``a <= 1`` the paths lose the Hölder regularity the dynamics rely on, and
    ``a > 2`` is not positive definite.
    """
    fam = _FAMILY_ALIASES.get(str(family).lower())
    if fam is None:
        raise ValueError(f"unknown kernel family {family!r}")
    if fam == PEXP:
        a = float(a)
        if not (1.0 < a <= 2.0):
            raise ValueError(f"powered-exponential exponent must satisfy 1 < a <= 2, got {a}")
        return Kernel(PEXP, a, f"pexp-{a:g}")
    return Kernel(MATERN32, None, "matern32")


def get_kernel(kernel_id):
    """Resolve a registry id such as ``"pexp-2"``, ``"pexp-1.5"`` or ``"matern32"``."""
    kid = str(kernel_id).lower()
    if kid in ("matern32", "matern-3/2"):
        return build_kernel(MATERN32)
    if kid.startswith("pexp-"):
        try:
            a = float(kid[5:])
        except ValueError:
            raise ValueError(f"unresolvable kernel id {kernel_id!r}") from None
        return build_kernel(PEXP, a)
    raise ValueError(f"unresolvable kernel id {kernel_id!r}")


@dataclass(frozen=True, eq=False)
class NoisePath:
    """A sampled realization on the grid ``t_start + k*dt``, k = 0..n-1."""

    t_start: float
    dt: float
    values: np.ndarray
    seed: int = 0
    kernel_id: str = "synthetic"
    clipped: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a path needs at least two grid values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self):
        return self.values.size

    @property
    def t_end(self):
        return self.t_start + (self.n - 1) * self.dt

    @property
    def times(self):
        return self.t_start + self.dt * np.arange(self.n)

    def covers(self, a, b):
        tol = 1e-9 * self.dt
        lo, hi = min(a, b), max(a, b)
        return lo >= self.t_start - tol and hi <= self.t_end + tol

    def node_index(self, t):
        """Fractional grid coordinate of time ``t``."""
        return (np.asarray(t, dtype=float) - self.t_start) / self.dt

    def __call__(self, t):
        return evaluate(self, t)


def _embedding(kernel, dt, n):
    return _embedding_cached(kernel, float(dt), int(n))


@functools.lru_cache(maxsize=64)
def _embedding_cached(kernel, dt, n):
    m = 1 << max(1, math.ceil(math.log2(max(2 * (n - 1), 2))))
    while True:
        k = np.arange(m)
        c = kernel.r(np.minimum(k, m - k) * dt)
        lam = np.fft.fft(c).real
        lmax = lam.max()
        if lam.min() >= -EIG_CLIP_TOL * lmax or m >= _MAX_EMBED:
            break
        m *= 2
    if lam.min() < -EIG_CLIP_TOL * lmax:
        raise ValueError(
            f"circulant embedding has eigenvalue {lam.min():.3e} below "
            f"-{EIG_CLIP_TOL:g}*max; kernel not embeddable on this grid"
        )
    neg = lam < 0
    if neg.any():
        warnings.warn(f"{int(neg.sum())} tiny negative embedding eigenvalues clipped (m={m}, dt={dt})",
                      RuntimeWarning, stacklevel=4)
    lam = np.where(neg, 0.0, lam)
    scale = np.sqrt(lam / m)
    scale.flags.writeable = False
    return scale, m, int(neg.sum())


def sample_path(kernel, t_start, dt, n, seed):
    """Sample a stationary Gaussian path with grid covariance ``r(|i-j| dt)``.

    The covariance row is embedded in a circulant of size ``m`` (a power of
    two, at least ``2(n-1)``, doubled until no eigenvalue lies below
    ``-1e-10*max``).  Remaining tiny negative eigenvalues are clipped to zero
    and counted in ``NoisePath.clipped``.  Same inputs give bit-identical
    values.
    """
    n = int(n)
    if n < 2:
        raise ValueError("n must be >= 2")
    if not dt > 0:
        raise ValueError("dt must be positive")
    scale, m, clipped = _embedding(kernel, dt, n)
    rng = np.random.default_rng(int(seed))
    xi = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    x = np.fft.fft(scale * xi).real[:n]
    return NoisePath(t_start, dt, x, int(seed), kernel.id, clipped)


def sample_path_on(kernel, t_lo, t_hi, dt, seed):
    """Sample a path whose domain covers ``[t_lo, t_hi]`` starting exactly at ``t_lo``."""
    n = int(math.ceil((t_hi - t_lo) / dt - 1e-9)) + 1
    return sample_path(kernel, t_lo, dt, max(n, 2), seed)


def evaluate(path, t):
    """Piecewise-linear interpolation of the path at ``t`` (scalar or array)."""
    x = path.node_index(t)
    nmax = path.n - 1
    tol = 1e-9
    if np.any(x < -tol) or np.any(x > nmax + tol):
        raise DomainError(f"time outside path domain [{path.t_start}, {path.t_end}]")
    k = np.clip(np.floor(x).astype(np.int64), 0, nmax - 1)
    w = np.clip(x - k, 0.0, 1.0)
    v = path.values
    out = v[k] * (1.0 - w) + v[k + 1] * w
    return float(out) if np.ndim(out) == 0 else out


def shift_path(path, t0):
    """The shifted realization ``s -> omega(t0 + s)``.

    The values are re-indexed, not resampled.  The shift point itself has to
    lie in the domain, otherwise ``theta^{t0} omega(0)`` is undefined.
    """
    if not path.covers(t0, t0):
        raise DomainError(f"shift {t0} outside path domain [{path.t_start}, {path.t_end}]")
    return NoisePath(path.t_start - t0, path.dt, path.values, path.seed, path.kernel_id, path.clipped)


def restrict(path, t_lo, t_hi):
    """Smallest sub-path whose grid covers ``[t_lo, t_hi]``."""
    if not path.covers(t_lo, t_hi):
        raise DomainError("restriction window outside path domain")
    k0 = max(int(math.floor(path.node_index(t_lo) + 1e-9)), 0)
    k1 = min(int(math.ceil(path.node_index(t_hi) - 1e-9)), path.n - 1)
    k1 = max(k1, k0 + 1)
    return NoisePath(path.t_start + k0 * path.dt, path.dt, path.values[k0:k1 + 1], path.seed, path.kernel_id, path.clipped)


def sublinearity_envelope(path, B):
    """Smallest ``A >= 0`` with ``|omega(s)| <= A + B|s|`` on every grid node."""
    if B < 0:
        raise ValueError("B must be >= 0")
    t = path.times
    return float(max(np.max(np.abs(path.values) - B * np.abs(t)), 0.0))


def cone_envelope(times, a, B):
    """``f_k = max_j (a_j - B|t_j - t_k|)`` in O(n) via two cumulative maxima."""
    fwd = np.maximum.accumulate(a + B * times) - B * times
    bwd = (np.maximum.accumulate((a - B * times)[::-1]))[::-1] + B * times
    return np.maximum(fwd, bwd)


class SublinearityReport(NamedTuple):
    B: float
    A: float
    T: float
    admissible: list
    measure_ratio: float


def _runs(mask):
    """Start/stop index pairs (inclusive) of runs of True."""
    if not mask.any():
        return []
    d = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    starts = np.flatnonzero(d == 1)
    stops = np.flatnonzero(d == -1) - 1
    return list(zip(starts, stops))


def admissible_mask(path, A, B):
    """Per-node flag: ``|omega(t_k + s)| <= A + B|s|`` for every node ``t_k + s``."""
    t = path.times
    f = cone_envelope(t, np.abs(path.values), B)
    return f <= A + 1e-12 * max(1.0, A)


def admissible_times(path, A, B, T, window=0.0):
    """Grid-resolved admissible shift times in ``[-T, T]``.

    A node ``t`` is admissible when the shifted path obeys the envelope
    ``A + B|s|`` at every node of the sampled domain.  This is a finite-horizon
    stand-in for the all-of-R condition.  ``window`` is the minimal scan margin
    that must fit in the domain beyond ``[-T, T]``.
    """
    if T <= 0 or A < 0 or B < 0:
        raise ValueError("need T > 0, A >= 0, B >= 0")
    if not path.covers(-T - window, T + window):
        raise DomainError("[-T, T] plus scan window exceeds path domain")
    t = path.times
    ok = admissible_mask(path, A, B)
    tol = 1e-9 * path.dt
    inside = (t >= -T - tol) & (t <= T + tol)
    mask = ok & inside
    intervals = [(float(t[i]), float(t[j])) for i, j in _runs(mask)]
    measure = sum(b - a for a, b in intervals)
    return SublinearityReport(float(B), float(A), float(T), intervals, min(measure / (2.0 * T), 1.0))


@dataclass(frozen=True)
class BumpSpec:
    A: float
    rho: float
    B: float = 0.1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("bump width rho must be positive")


# max |d psi / ds| of the C^1 smoothstep transition
BUMP_SLOPE_FACTOR = 1.5


def smoothstep(d, rho):
    """1 for d <= 0, 0 for d >= rho, C^1 cubic in between."""
    x = np.clip(1.0 - np.asarray(d, dtype=float) / rho, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


class BumpTables(NamedTuple):
    mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    rho: float


def bump_tables(path, spec, anchor=0.0):
    """Admissible-node mask and nearest admissible node to the left/right.

    ``anchor`` is the shift time: the mask tests
    ``|omega(t_k)| <= A + B|t_k - anchor|``, which is the bump of
    ``theta^{anchor} omega`` read in original time.
    """
    t = path.times
    mask = np.abs(path.values) <= spec.A + spec.B * np.abs(t - anchor)
    left = np.maximum.accumulate(np.where(mask, t, -np.inf))
    right = np.minimum.accumulate(np.where(mask, t, np.inf)[::-1])[::-1]
    return BumpTables(mask, left, right, float(spec.rho))


def bump_distance(path, tables, t):
    """Grid distance from ``t`` (original time) to the admissible node set."""
    x = path.node_index(t)
    nmax = path.n - 1
    if np.any(x < -1e-9) or np.any(x > nmax + 1e-9):
        raise DomainError("bump evaluated outside path domain")
    k = np.clip(np.floor(x).astype(np.int64), 0, nmax - 1)
    t = np.asarray(t, dtype=float)
    both = tables.mask[k] & tables.mask[k + 1]
    # a node sitting exactly on an admissible grid point
    on_node = np.isclose(x, k + 1) & tables.mask[k + 1]
    d = np.minimum(t - tables.left[k], tables.right[k + 1] - t)
    return np.where(both | on_node, 0.0, np.maximum(d, 0.0))


def bump_value(path, spec, s):
    """Random bump ``psi_{A,rho}(s, omega)`` in [0, 1]."""
    tables = bump_tables(path, spec, 0.0)
    out = smoothstep(bump_distance(path, tables, s), spec.rho)
    return float(out) if np.ndim(out) == 0 else out


def _window_trapz(path, a, b, f=lambda v: v):
    if not path.covers(a, b):
        raise DomainError("averaging window outside path domain")
    t = path.times
    inner = t[(t > a) & (t < b)]
    x = np.concatenate(([a], inner, [b]))
    return trapezoid(f(evaluate(path, x)), x)


def ergodic_average(path, T):
    """Time averages ``(1/T) int_0^T omega`` and ``(1/T) int_0^T omega^2``."""
    if T <= 0:
        raise ValueError("T must be positive")
    mean = _window_trapz(path, 0.0, T) / T
    sq = _window_trapz(path, 0.0, T, np.square) / T
    return float(mean), float(sq)


def time_average_std(kernel, T):
    """Standard deviation of ``(1/T) int_0^T eta`` for large T: sqrt(int r / T)."""
    return math.sqrt(kernel.integral() / T)


def holder_constant(path, alpha):
    """Empirical lower estimate of the Hölder constant over strides 1, 2, 4."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    v = path.values
    best = 0.0
    for s in (1, 2, 4):
        if v.size <= s:
            break
        d = np.abs(v[s:] - v[:-s])
        best = max(best, float(d.max()) / (s * path.dt) ** alpha)
    return best


def write_path_csv(path, file):
    """Write the normative CSV: header line then one value per line."""
    with open(file, "w") as fh:
        fh.write("t_start,dt,n,seed,kernel_id\n")
        fh.write(f"{path.t_start!r},{path.dt!r},{path.n},{path.seed},{path.kernel_id}\n")
        np.savetxt(fh, path.values, fmt="%.17g")


def read_path_csv(file):
    with open(file) as fh:
        head = fh.readline().strip()
        if head != "t_start,dt,n,seed,kernel_id":
            raise ValueError("not a path CSV")
        t_start, dt, n, seed, kid = fh.readline().strip().split(",")
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    if values.size != int(n):
        raise ValueError("path CSV length does not match header")
    return NoisePath(float(t_start), float(dt), values, int(seed), kid)


@functools.lru_cache(maxsize=32)
def calibrate_envelope(kernel, dt, B, half_width=50.0, n_paths=200, quantile=0.99, master_seed=0):
    """High-percentile sub-linearity intercept over a calibration ensemble.

    Paths live on ``[-half_width, half_width]``; seeds are derived from
    ``master_seed`` so the calibration never shares draws with experiments
    that use other masters.
    """
    from .seeds import child_seed

    env = [sublinearity_envelope(sample_path_on(kernel, -half_width, half_width, dt, child_seed(master_seed, i)), B)
           for i in range(n_paths)]
    return float(np.quantile(env, quantile))
