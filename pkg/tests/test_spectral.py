import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochmel.errors import EnvelopeError
from stochmel.melnikov import MelnikovIntegrand, simpson_weights
from stochmel.model import null_model
from stochmel.spectral import (
    SpectralConfig,
    SpectralMoments,
    count_crossings,
    monte_carlo_crossings,
    process_autocorrelation,
    rice_expected_level_crossings,
    rice_expected_zeros,
    smp_smi_check,
    spectral_moments,
    write_rho_csv,
)

POINT = (1.0, 0.0, 0.0)


@pytest.fixture(scope="module")
def FP(model):
    return MelnikovIntegrand(model, *POINT, kind="P")


@pytest.fixture(scope="module")
def moments(FP, kernel):
    return spectral_moments(FP, kernel)


def _brute_rho(F, kernel, h, L=20.0, ds=0.02):
    # tensor Simpson of F(s1) F(s2) r(s2 - s1 + h) over [-L, L]^2
    n = int(round(2 * L / ds))
    s = -L + ds * np.arange(n + 1)
    w = simpson_weights(n, ds) * F(s)
    R = kernel.r(s[None, :] - s[:, None] + h)
    return float(w @ R @ w)


def test_null_integrand(kernel):
    F0 = MelnikovIntegrand(null_model(), *POINT, kind="P")
    assert process_autocorrelation(F0, kernel, 0.3) == 0.0
    m = spectral_moments(F0, kernel)
    assert (m.chi0, m.chi2) == (0.0, 0.0)
    F0I = MelnikovIntegrand(null_model(), *POINT, kind="I")
    assert not smp_smi_check(m, spectral_moments(F0I, kernel)).ok


def test_zero_lag_is_chi0(FP, kernel, moments):
    assert process_autocorrelation(FP, kernel, 0.0) == moments.chi0
    assert moments.chi0 > 0 and moments.chi2 > 0


@pytest.mark.parametrize("h", [0.0, 0.5, 2.0])
def test_autocorrelation_oracles(FP, kernel, h):
    ours = process_autocorrelation(FP, kernel, h)
    fine = process_autocorrelation(FP, kernel, h, SpectralConfig(step=0.005))
    assert abs(ours - fine) < 1e-7
    assert abs(ours - _brute_rho(FP, kernel, h)) < 1e-9


def test_chi2_finite_difference(moments):
    assert moments.fd_rel_error < 1e-4
    assert moments.chi2_fd == pytest.approx(moments.chi2, rel=1e-4)


def test_chi2_is_derivative_variance(FP, kernel, moments):
    # chi2 is also rho of the derivative process at zero lag
    dF = lambda s: FP.derivative(s)
    assert moments.chi2 == pytest.approx(_brute_rho(dF, kernel, 0.0), rel=1e-8)


def test_rho_symmetry_and_bound(moments):
    lags, rho = moments.rho_samples.T
    assert np.allclose(lags, -lags[::-1])
    assert np.max(np.abs(rho - rho[::-1])) < 1e-9
    assert np.all(np.abs(rho) <= rho[lags.size // 2] + 1e-15)


def test_lag_and_tail_errors(FP, kernel):
    with pytest.raises(ValueError):
        process_autocorrelation(FP, kernel, 6.0)
    with pytest.raises(EnvelopeError):
        process_autocorrelation(FP, kernel, 0.0, SpectralConfig(S=5.0))
    with pytest.raises(TypeError):
        process_autocorrelation(lambda s: s, kernel, 0.0)


def test_matern_kernel_moments(model):
    from stochmel.noise import build_kernel

    k = build_kernel("matern32")
    F = MelnikovIntegrand(model, *POINT, kind="P")
    # the kink in r''' at zero needs a finer grid for the FD check
    m = spectral_moments(F, k, SpectralConfig(step=0.005))
    assert m.chi0 == pytest.approx(_brute_rho(F, k, 0.0, L=20.0), rel=1e-6)
    assert m.fd_rel_error < 1e-4


# Rice formula

def _m(chi0, chi2):
    return SpectralMoments(chi0, chi2, np.zeros((0, 2)))


def test_rice_arithmetic():
    assert rice_expected_zeros(_m(1.0, 4.0), math.pi) == pytest.approx(2.0, rel=1e-15)
    assert rice_expected_zeros(_m(0.3, 0.3), math.pi) == pytest.approx(1.0, rel=1e-15)
    assert rice_expected_level_crossings(_m(1.0, math.pi ** 2), 1.0, 0.0) == pytest.approx(1.0, rel=1e-15)
    m = _m(0.7, 2.0)
    assert rice_expected_level_crossings(m, 3.0, 0.0) == rice_expected_zeros(m, 3.0)
    with pytest.raises(ValueError):
        rice_expected_zeros(_m(0.0, 1.0), 1.0)
    with pytest.raises(ValueError):
        rice_expected_level_crossings(_m(0.0, 1.0), 1.0, 0.2)


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 100))
def test_rice_monotone_and_linear(chi0, chi2, v1, v2, T):
    m = _m(chi0, chi2)
    a, b = sorted((v1, v2))
    ra, rb = rice_expected_level_crossings(m, T, a), rice_expected_level_crossings(m, T, -b)
    assert rb <= ra
    if b - a > 1e-3 and ra > 1e-300:
        assert rb < ra or rb == 0.0
    assert rice_expected_level_crossings(m, 2 * T, a) == pytest.approx(2 * ra, rel=1e-14)


def test_rice_vanishes_at_large_levels():
    m = _m(1.0, 1.0)
    vals = [rice_expected_level_crossings(m, 10.0, v) for v in (0, 2, 5, 10, 40)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] < 1e-300


def test_smp_smi(model, kernel, moments):
    mI = spectral_moments(MelnikovIntegrand(model, *POINT, kind="I"), kernel)
    rep = smp_smi_check(moments, mI)
    assert rep.ok and set(rep.values) == {"chi0_P", "chi2_P", "chi0_I", "chi2_I"}
    assert not smp_smi_check(_m(1.0, 0.0), mI).ok


# Monte Carlo counts

def test_count_crossings():
    assert count_crossings([1, -1, 1, -1]) == 3
    assert count_crossings([1, 0, -1]) == 1
    assert count_crossings([1, 0, 1]) == 0
    assert count_crossings([0.5, 2.0, 0.1], v=1.0) == 2


def test_mc_high_level(model, kernel, moments):
    v = 10 * math.sqrt(moments.chi0)
    st_ = monte_carlo_crossings(model, kernel, POINT, 10.0, v, 10, 0, moments=moments)
    assert st_.empirical_mean == 0.0 and st_.predicted < 1e-20
    with pytest.raises(ValueError):
        monte_carlo_crossings(model, kernel, POINT, 10.0, 0.0, 1, 0, moments=moments)


def test_mc_deterministic_and_worker_independent(model, kernel, moments):
    a = monte_carlo_crossings(model, kernel, POINT, 10.0, 0.0, 8, 3, moments=moments)
    b = monte_carlo_crossings(model, kernel, POINT, 10.0, 0.0, 8, 3, moments=moments, workers=3)
    assert np.array_equal(a.counts, b.counts)


def test_mc_grid_refinement_bias(model, kernel, moments):
    a = monte_carlo_crossings(model, kernel, POINT, 50.0, 0.0, 100, 17, moments=moments)
    b = monte_carlo_crossings(model, kernel, POINT, 50.0, 0.0, 100, 17, moments=moments, refine=2)
    assert abs(b.empirical_mean - a.empirical_mean) < 0.01 * a.empirical_mean


def test_mc_standard_error_rate(model, kernel, moments):
    ns = np.array([100, 400, 1600])
    se = [monte_carlo_crossings(model, kernel, POINT, 20.0, 0.0, int(n), 23, moments=moments).empirical_se
          for n in ns]
    slope = np.polyfit(np.log(ns), np.log(se), 1)[0]
    assert abs(slope + 0.5) <= 0.1


def test_rho_csv(tmp_path, moments):
    f = tmp_path / "rho.csv"
    write_rho_csv(moments, f)
    arr = np.loadtxt(f, delimiter=",", skiprows=1)
    assert np.array_equal(arr, moments.rho_samples)
    assert f.read_text().startswith("h,rho\n")
