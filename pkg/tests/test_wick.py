import itertools
import math

import numpy as np
import pytest

from qftlab.estimates import mean_se
from qftlab.gaussian import GaussianSpec, mode_variance
from qftlab.spectral import Geometry, sine_basis
from qftlab.wick import (delta_M_kernel_forms, delta_sigma_boundary, divergence_fit, double_integral, gamma_T,
                         hermite_coefficients, isserlis_moment, kernel_dirichlet, kernel_extension, kernel_line,
                         wick_binomial, wick_mixed, wick_pair_oracle, wick_power)


def test_wick_zero_field():
    s2 = 0.7
    assert wick_power(0.0, s2, 4) == pytest.approx(3 * s2 ** 2)
    assert wick_power(0.0, s2, 2) == pytest.approx(-s2)
    assert wick_power(1.3, s2, 0) == 1.0
    with pytest.raises(ValueError):
        wick_power(1.0, 1.0, 5)


def test_hermite_coefficients_match_powers():
    v = np.linspace(-2, 2, 9)
    for k in range(5):
        a = hermite_coefficients(k, 0.6)
        assert np.allclose(np.polyval(a[::-1], v), wick_power(v, 0.6, k), atol=1e-13)


def test_binomial_and_mixed_identities():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(20), rng.standard_normal(20)
    for k in range(5):
        assert np.allclose(wick_binomial(a, b, 0.4, 0.9, k), wick_power(a + b, 1.3, k), atol=1e-12)
        assert np.allclose(wick_mixed(a, 0.0, 0.4, k), wick_power(a, 0.4, k), atol=1e-12)
        assert np.allclose(wick_mixed(0.0, b, 0.0, k), b ** k, atol=1e-12)
    assert np.allclose(wick_mixed(a, b, 0.4, 2), wick_power(a, 0.4, 2) + 2 * a * b + b * b)


def test_pair_oracle():
    cxx, cxy, cyy = 1.1, 0.4, 0.8
    assert wick_pair_oracle(cxx, cxy, cyy, 2) == pytest.approx(2 * cxy ** 2)
    assert wick_pair_oracle(cxx, cxy, cyy, 3) == pytest.approx(6 * cxy ** 3)
    assert wick_pair_oracle(cxx, cxy, cyy, 4) == pytest.approx(24 * cxy ** 4)
    assert wick_pair_oracle(cxx, cxy, cyy, 4, 2) == pytest.approx(0.0, abs=1e-12)


def test_isserlis_brute_force_six_modes():
    # phi(x) = sum_m a_m(x) xi_m with 6 independent standard normals; a mixed moment of
    # phi at 4 and 6 points is compared with the pairing sum over the point covariance
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6)) * 0.5          # points x modes
    cov = A @ A.T
    gauss = {0: 1.0, 1: 0.0, 2: 1.0, 3: 0.0, 4: 3.0, 5: 0.0, 6: 15.0}
    for labels in ([0, 1, 2, 3], [0, 0, 1, 1], [0, 1, 2, 3, 4, 5], [2, 2, 2, 5, 5, 1]):
        brute = 0.0
        for ms in itertools.product(range(6), repeat=len(labels)):
            coef = np.prod([A[p, m] for p, m in zip(labels, ms)])
            counts = np.bincount(ms, minlength=6)
            brute += coef * np.prod([gauss[c] for c in counts])
        assert isserlis_moment(cov, labels) == pytest.approx(brute, rel=1e-12, abs=1e-12)
    assert isserlis_moment(cov, [0, 1, 2]) == 0.0


def _point_values(g, T, n, seed, taus, zs):
    spec = GaussianSpec(g, "dirichlet-bulk", T)
    c = spec.sample(seed, n)
    f = spec.sample_field(seed)
    f.coeffs = c
    return np.real(f.evaluate(taus, zs))                     # (n, P)


def _point_cov(g, T, taus, zs):
    var = mode_variance("dirichlet-bulk", g, T)
    B = sine_basis(np.arange(1, g.Ntau + 1), taus, g.L)
    n2, n3 = g.modes()
    P = len(taus)
    C = np.zeros((P, P))
    for i in range(P):
        for j in range(P):
            d = zs[i] - zs[j]
            ph = np.cos(2 * np.pi * (n2 * d[0] + n3 * d[1]))
            C[i, j] = np.sum(var * B[i][:, None, None] * B[j][:, None, None] * ph[None])
    return C


def test_wick_moments_mc():
    g = Geometry(Nz=2, Ntau=6)
    taus = np.array([0.1, -0.35])
    zs = np.array([[0.2, 0.7], [0.45, 0.1]])
    v = _point_values(g, 8.0, 40000, 11, taus, zs)
    C = _point_cov(g, 8.0, taus, zs)
    for k in (1, 2, 3, 4):
        m, se = mean_se(wick_power(v[:, 0], C[0, 0], k))
        assert abs(m) <= 4 * se
    prod = wick_power(v[:, 0], C[0, 0], 2) * wick_power(v[:, 1], C[1, 1], 2)
    m, se = mean_se(prod)
    assert abs(m - 2 * C[0, 1] ** 2) <= 5 * se
    assert wick_pair_oracle(C[0, 0], C[0, 1], C[1, 1], 2) == pytest.approx(2 * C[0, 1] ** 2)


def test_double_integral_line_kernel():
    # only the zero mode (w = 1) survives at T = 3
    g = Geometry(Nz=1, m2=1.0)
    k = kernel_line(g, 3.0)
    ell = 2.0
    for p in (1, 4):
        a = float(p)
        exact = 2 * (ell / a - (1 - math.exp(-a * ell)) / a ** 2) / 2 ** p
        assert double_integral([(k, p)], g, 3.0, -1.0, 1.0) == pytest.approx(exact, rel=1e-10)


def test_boundary_counterterm_switches_off():
    g = Geometry(Nz=2)
    assert delta_sigma_boundary(g, 8.0) == 0.0
    assert delta_sigma_boundary(g, 8.0, "det", "det") == 0.0


def test_delta5_kernel_form():
    g = Geometry(Nz=1)
    T = 4.0
    forms = delta_M_kernel_forms(g, T)
    kc = kernel_dirichlet(g, T)
    kb = kernel_extension(g, T, "dtn", "dtn")
    direct = 6 * 8 * double_integral([(kc, 1), (kb, 3)], g, T, -1.0, 1.0)
    assert forms["delta5"] == pytest.approx(direct, rel=1e-14)


def test_gamma_negative_and_decreasing():
    g = Geometry(Nz=8)
    vals = [gamma_T(g, T) for T in (4.0, 8.0, 16.0)]
    assert all(v < 0 for v in vals)
    assert vals[0] > vals[1] > vals[2]


def test_divergence_fit_exact_line():
    T = np.array([4.0, 8.0, 16.0, 32.0, 64.0])
    f = divergence_fit(3.0 - 2.0 * np.log(T), T)
    assert f["slope"] == pytest.approx(-2.0) and f["r2"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        divergence_fit([1.0, 2.0], [1.0, 2.0])
