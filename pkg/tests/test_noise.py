import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

import stochmel.noise as noise
from stochmel.errors import DomainError
from stochmel.noise import (
    BUMP_SLOPE_FACTOR,
    BumpSpec,
    NoisePath,
    admissible_mask,
    admissible_times,
    build_kernel,
    bump_value,
    calibrate_envelope,
    cone_envelope,
    ergodic_average,
    evaluate,
    get_kernel,
    holder_constant,
    read_path_csv,
    restrict,
    sample_path,
    sample_path_on,
    shift_path,
    smoothstep,
    sublinearity_envelope,
    time_average_std,
    write_path_csv,
)
from stochmel.seeds import child_seed, child_seeds, splitmix64

from conftest import const_path, func_path



# kernels

def test_kernel_values():
    k = build_kernel("powered-exponential", 2.0)
    assert k.r(1.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert k.r(1.0) == pytest.approx(0.3678794, abs=1e-7)
    assert k.r(0.0) == 1.0
    m = build_kernel("matern32")
    y = math.sqrt(3.0)
    assert m.r(1.0) == pytest.approx((1 + y) * math.exp(-y), rel=1e-14)


@pytest.mark.parametrize("a", [1.0, 0.5, 2.5, -1.0])
def test_kernel_exponent_rejected(a):
    with pytest.raises(ValueError):
        build_kernel("pexp", a)


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        build_kernel("cauchy")
    with pytest.raises(ValueError):
        get_kernel("bogus-1")


@pytest.mark.parametrize("fam,a", [("pexp", 2.0), ("pexp", 1.5), ("matern32", None)])
def test_kernel_integral_matches_quadrature(fam, a):
    k = build_kernel(fam, a if a is not None else 2.0)
    ref = 2 * quad(lambda h: k.r(h), 0, np.inf)[0]
    assert k.integral() == pytest.approx(ref, rel=1e-9)
    assert get_kernel(k.id) == k


def test_support_radius():
    k = build_kernel("pexp", 2.0)
    s = k.support_radius(1.7e-28)
    assert k.r(s) <= 1.7e-28 < k.r(s - 1e-6)
    assert s == pytest.approx(math.sqrt(-math.log(1.7e-28)), rel=1e-9)


# seeds

def test_child_seeds_deterministic_and_distinct():
    a = child_seeds(7, 1000)
    assert np.array_equal(a, child_seeds(7, 1000))
    assert len(set(a.tolist())) == 1000
    assert int(a[3]) == child_seed(7, 3)
    assert child_seed(7, 3) != child_seed(8, 3)
    # reference splitmix64 output for state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


# sampling

def test_sample_deterministic(kernel):
    p1 = sample_path(kernel, 0.0, 0.01, 4096, 42)
    p2 = sample_path(kernel, 0.0, 0.01, 4096, 42)
    assert np.array_equal(p1.values, p2.values)
    assert not np.array_equal(p1.values, sample_path(kernel, 0.0, 0.01, 4096, 43).values)
    assert p1.n == 4096 and p1.kernel_id == "pexp-2"


def test_sample_frozen_reference(kernel):
    # frozen on first run of the sampler (regression guard for bit reproducibility)
    p = sample_path(kernel, 0.0, 0.01, 65536, 42)
    ref = [-1.4004733706654071, -1.405241162957823, -1.4097501930469094]
    assert p.values[:3].tolist() == ref
    assert p.clipped > 0


def test_values_read_only(kernel):
    p = sample_path(kernel, 0.0, 0.01, 16, 1)
    with pytest.raises(ValueError):
        p.values[0] = 1.0


def test_clip_warning_recorded(kernel):
    noise._embedding_cached.cache_clear()
    with pytest.warns(RuntimeWarning, match="clipped"):
        p = sample_path(kernel, 0.0, 0.01, 2048, 0)
    assert p.clipped > 0


def test_embedding_hard_error(monkeypatch):
    # exp(-|h|^3) is not positive definite: the embedding never becomes nonnegative
    bad = noise.Kernel(noise.PEXP, 3.0, "pexp-3")
    monkeypatch.setattr(noise, "_MAX_EMBED", 1 << 12)
    noise._embedding_cached.cache_clear()
    with pytest.raises(ValueError, match="eigenvalue"):
        sample_path(bad, 0.0, 0.1, 512, 0)
    noise._embedding_cached.cache_clear()


def test_sample_bad_args(kernel):
    with pytest.raises(ValueError):
        sample_path(kernel, 0.0, 0.01, 1, 0)
    with pytest.raises(ValueError):
        sample_path(kernel, 0.0, 0.0, 10, 0)


def test_grid_covariance_ensemble(kernel):
    n_paths, n = 3000, 64
    X = np.array([sample_path(kernel, 0.0, 0.05, n, child_seed(11, i)).values for i in range(n_paths)])
    for lag in (0, 1, 5, 20):
        prod = X[:, 0] * X[:, lag]
        se = prod.std(ddof=1) / math.sqrt(n_paths)
        assert abs(prod.mean() - kernel.r(lag * 0.05)) < 4 * se + 1e-12


def test_empirical_stationarity(kernel):
    n_paths = 2000
    X = np.array([sample_path(kernel, 0.0, 0.05, 400, child_seed(5, i)).values for i in range(n_paths)])
    for k0, k1 in ((10, 350), (0, 200)):
        for lag in (0, 3):
            a = X[:, k0] * X[:, k0 + lag]
            b = X[:, k1] * X[:, k1 + lag]
            se = math.sqrt(a.var(ddof=1) / n_paths + b.var(ddof=1) / n_paths)
            assert abs(a.mean() - b.mean()) < 3 * se
        se = math.sqrt(X[:, k0].var() / n_paths + X[:, k1].var() / n_paths)
        assert abs(X[:, k0].mean() - X[:, k1].mean()) < 3 * se


def test_sample_path_on_covers(kernel):
    p = sample_path_on(kernel, -3.0, 7.0, 0.01, 0)
    assert p.t_start == -3.0
    assert p.covers(-3.0, 7.0)


# evaluate / shift / restrict

def test_evaluate_nodes_and_midpoints(path42):
    k = 1234
    t = path42.times[k]
    assert evaluate(path42, t) == pytest.approx(path42.values[k], abs=1e-13)
    mid = evaluate(path42, t + 0.5 * path42.dt)
    assert mid == pytest.approx(0.5 * (path42.values[k] + path42.values[k + 1]), abs=1e-14)
    tt = path42.times[10:20]
    assert np.allclose(path42(tt), path42.values[10:20], atol=1e-15, rtol=0)


def test_evaluate_out_of_domain(path42):
    with pytest.raises(DomainError):
        evaluate(path42, path42.t_start - path42.dt)
    with pytest.raises(DomainError):
        evaluate(path42, np.array([0.0, path42.t_end + 1.0]))


def test_shift_zero_identity(path42):
    s = shift_path(path42, 0.0)
    assert s.t_start == path42.t_start and np.array_equal(s.values, path42.values)


def test_shift_outside_domain(path42):
    with pytest.raises(DomainError):
        shift_path(path42, 1e3)


@given(st.integers(-2000, 2000), st.integers(-2000, 2000), st.floats(-30, 30))
def test_shift_group_law(path42, k1, k2, s):
    t1, t2 = k1 * 0.0078125, k2 * 0.0078125  # dyadic shifts are exact
    a = shift_path(shift_path(path42, t1), t2)
    b = shift_path(path42, t1 + t2)
    assert a.t_start == b.t_start and np.array_equal(a.values, b.values)
    assert evaluate(a, s) == evaluate(b, s)
    assert evaluate(a, s) == pytest.approx(evaluate(path42, t1 + t2 + s), abs=1e-12)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_shift_group_law_general(path42, t1, t2):
    a = shift_path(shift_path(path42, t1), t2)
    b = shift_path(path42, t1 + t2)
    for s in (-5.0, 0.123, 17.3):
        assert evaluate(a, s) == pytest.approx(evaluate(b, s), abs=1e-12)


def test_restrict(path42):
    r = restrict(path42, -1.005, 2.0)
    assert r.covers(-1.005, 2.0)
    assert r.n <= 303
    assert evaluate(r, 0.3337) == pytest.approx(evaluate(path42, 0.3337), abs=1e-13)


# sub-linearity envelope

def test_envelope_trivial():
    assert sublinearity_envelope(const_path(0.0), 0.1) == 0.0
    for c in (2.5, -1.25):
        for B in (0.0, 0.1, 3.0):
            assert sublinearity_envelope(const_path(c), B) == pytest.approx(abs(c), abs=1e-15)


def test_envelope_sine_oracle():
    p = func_path(np.sin, -50.0, 50.0)
    t = -50.0 + 0.01 * np.arange(10001)
    expected = max(float(np.max(np.abs(np.sin(t)) - 0.1 * np.abs(t))), 0.0)
    assert sublinearity_envelope(p, 0.1) == pytest.approx(expected, abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1))
def test_envelope_monotone_in_B(path42, b1, b2):
    lo, hi = min(b1, b2), max(b1, b2)
    assert sublinearity_envelope(path42, lo) >= sublinearity_envelope(path42, hi)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.floats(0, 2))
def test_cone_envelope_brute_force(vals, B):
    a = np.abs(np.array(vals))
    t = 0.1 * np.arange(a.size)
    brute = np.array([np.max(a - B * np.abs(t - tk)) for tk in t])
    assert np.allclose(cone_envelope(t, a, B), brute, atol=1e-12)


def test_admissible_trivial():
    rep = admissible_times(const_path(0.0), 0.0, 0.1, 10.0)
    assert rep.measure_ratio == 1.0
    assert rep.admissible == [(-10.0, 10.0)] or (rep.admissible[0][0] <= -10 + 1e-9 and rep.admissible[0][1] >= 10 - 1e-9)
    p = func_path(np.sin)
    rep = admissible_times(p, 1.0, 0.0, 20.0)
    assert rep.measure_ratio == 1.0


def test_admissible_domain_error(path42):
    with pytest.raises(DomainError):
        admissible_times(path42, 3.0, 0.1, 100.0)
    with pytest.raises(ValueError):
        admissible_times(path42, 3.0, 0.1, -1.0)


@given(st.floats(1, 25), st.floats(1, 25))
def test_admissible_monotone_in_T(path42, T1, T2):
    T1, T2 = min(T1, T2), max(T1, T2)
    A = 2.5
    r1 = admissible_times(path42, A, 0.1, T1)
    r2 = admissible_times(path42, A, 0.1, T2)
    for a, b in r1.admissible:
        assert any(c - 1e-12 <= a and b <= d + 1e-12 for c, d in r2.admissible)


def test_admissible_mask_definition(path42):
    A, B = 2.6, 0.1
    mask = admissible_mask(path42, A, B)
    t, v = path42.times, np.abs(path42.values)
    for k in np.linspace(0, path42.n - 1, 37).astype(int):
        assert mask[k] == bool(np.all(v <= A + B * np.abs(t - t[k]) + 1e-12))


# bump

def test_smoothstep_values_and_slope():
    rho = 0.3
    assert smoothstep(0.0, rho) == 1.0 and smoothstep(-1.0, rho) == 1.0
    assert smoothstep(rho, rho) == 0.0 and smoothstep(2 * rho, rho) == 0.0
    assert smoothstep(rho / 2, rho) == pytest.approx(0.5, abs=1e-15)
    d = np.linspace(0, rho, 100001)
    slope = np.max(np.abs(np.diff(smoothstep(d, rho)) / np.diff(d)))
    assert slope <= BUMP_SLOPE_FACTOR / rho + 1e-9
    assert slope == pytest.approx(BUMP_SLOPE_FACTOR / rho, rel=1e-6)


def _block_path():
    t = -10.0 + 0.01 * np.arange(2001)
    v = np.where((t >= 1.0 - 1e-9) & (t <= 2.0 + 1e-9), 10.0, 0.0)
    return NoisePath(-10.0, 0.01, v)


def test_bump_value_regions():
    p = _block_path()
    spec = BumpSpec(A=1.0, rho=0.2, B=0.0)
    assert bump_value(p, spec, 0.5) == 1.0
    assert bump_value(p, spec, -3.0) == 1.0
    assert bump_value(p, spec, 1.5) == 0.0
    mid = bump_value(p, spec, 0.995)
    assert 0.0 < mid < 1.0
    # nearest admissible node is 0.99: distance 0.005
    assert mid == pytest.approx(float(smoothstep(0.005, 0.2)), abs=1e-12)


def test_bump_one_on_admissible_shift(path42):
    A, B, T = 2.6, 0.1, 20.0
    rep = admissible_times(path42, A, B, T)
    assert rep.admissible
    spec = BumpSpec(A, 0.5, B)
    for a, b in rep.admissible[:5]:
        t0 = round((0.5 * (a + b)) / 0.01) * 0.01
        sp = shift_path(path42, t0)
        s = np.linspace(sp.t_start, sp.t_end, 2001)
        assert np.all(bump_value(sp, spec, s) == 1.0)


def test_bump_rejects_nonpositive_rho():
    with pytest.raises(ValueError):
        BumpSpec(1.0, 0.0)


# averages and regularity

def test_ergodic_constant():
    m, sq = ergodic_average(const_path(1.5), 10.0)
    assert m == pytest.approx(1.5, abs=1e-14) and sq == pytest.approx(2.25, abs=1e-13)
    with pytest.raises(DomainError):
        ergodic_average(const_path(1.0), 100.0)


def test_ergodic_long_time_mean(kernel):
    T = 1e4
    bound = 3 * time_average_std(kernel, T)
    for i in range(4):
        p = sample_path_on(kernel, 0.0, T, 0.01, child_seed(99, i))
        assert abs(ergodic_average(p, T)[0]) <= bound


def test_ergodic_square_average(kernel):
    sq = np.array([ergodic_average(sample_path_on(kernel, 0.0, 200.0, 0.01, child_seed(3, i)), 200.0)[1]
                   for i in range(60)])
    assert abs(sq.mean() - 1.0) < 3 * sq.std(ddof=1) / math.sqrt(sq.size)


def test_holder_trivial():
    assert holder_constant(const_path(0.0), 0.5) == 0.0
    lin = func_path(lambda s: s, -5.0, 5.0)
    alpha = 0.4
    # stride-4 differences dominate on a line: ratio (4 dt)^(1 - alpha)
    assert holder_constant(lin, alpha) == pytest.approx((4 * 0.01) ** (1 - alpha), rel=1e-9)
    assert holder_constant(lin, 0.9999) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        holder_constant(lin, 1.0)


def test_holder_refinement_bounded(kernel):
    # coarse grid = every other node of the fine grid, so both see the same realization
    for i in range(5):
        fine = sample_path_on(kernel, 0.0, 100.0, 0.005, child_seed(21, i))
        coarse = NoisePath(0.0, 0.01, fine.values[::2].copy())
        cf, cc = holder_constant(fine, 0.49), holder_constant(coarse, 0.49)
        assert np.isfinite(cf) and 0 < cf <= 1.1 * cc


# io and calibration

def test_path_csv_roundtrip(tmp_path, path42):
    f = tmp_path / "p.csv"
    write_path_csv(path42, f)
    back = read_path_csv(f)
    assert back.t_start == path42.t_start and back.dt == path42.dt
    assert np.array_equal(back.values, path42.values)
    assert back.seed == 42 and back.kernel_id == "pexp-2"
    lines = f.read_text().splitlines()
    assert lines[0] == "t_start,dt,n,seed,kernel_id" and len(lines) == path42.n + 2


def test_path_csv_bad(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_path_csv(f)


def test_calibration_deterministic(kernel):
    a = calibrate_envelope(kernel, 0.01, 0.1, 20.0, 50, 0.99, 5)
    calibrate_envelope.cache_clear()
    b = calibrate_envelope(kernel, 0.01, 0.1, 20.0, 50, 0.99, 5)
    assert a == b and a > 0
    med = calibrate_envelope(kernel, 0.01, 0.1, 20.0, 50, 0.5, 5)
    assert med < a
