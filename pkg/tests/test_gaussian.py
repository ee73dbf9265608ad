import math

import numpy as np
import pytest

from qftlab.estimates import rng_for
from qftlab.gaussian import (GaussianSpec, TauGridField, characteristic_closed_form, covariance_boundary_harmonic,
                             covariance_bulk, covariance_bulk_series, covariance_half, dtn_symbols,
                             empirical_variance_check, green_dirichlet, harmonic_extend, log_rn_formula,
                             markov_property_check, mode_variance, profile_left, profile_right,
                             rn_density_check, trace_variance)
from qftlab.spectral import Geometry


def _points(rng, n, L):
    return np.column_stack([rng.uniform(-L, L, n), rng.uniform(0, 1, (n, 2))])


@pytest.mark.parametrize("tag", ["dirichlet-bulk", "periodic-bulk", "boundary-infinite", "boundary-dtn"])
def test_sampler_variances(tag):
    g = Geometry(Nz=1, Ntau=4)
    r = empirical_variance_check(GaussianSpec(g, tag, 8.0), 50000, 3)
    assert r["max_abs_z"] <= 5.0


def test_dtn_trace_variance_single_mode():
    assert trace_variance(1.0, 1.0) == pytest.approx(math.tanh(1.0) / 2, rel=1e-15)
    assert trace_variance(1.0, 1.0) == pytest.approx(0.380797, abs=1e-6)
    g = Geometry(L=1.0, m2=1.0, Nz=1)
    v = mode_variance("boundary-dtn", g)
    assert v[1, 1] == pytest.approx(0.380797, abs=1e-6)


def test_dtn_symbols():
    g = Geometry(L=1.0, m2=1.0, Nz=3)
    d = dtn_symbols(g)
    assert d.N[3, 3] == pytest.approx(-2.0 / math.tanh(1.0), rel=1e-14)
    assert d.N[3, 3] == pytest.approx(-2.626071, abs=1e-6)
    assert d.Ninf[3, 3] == pytest.approx(-0.626071, abs=1e-6)
    assert np.allclose(-1.0 / d.N, mode_variance("boundary-dtn", g), rtol=1e-14)
    far = dtn_symbols(g.with_(L=40.0))
    assert np.max(np.abs(far.Ninf)) < 1e-30


def test_large_cutoff_is_identity():
    g = Geometry(Nz=1, Ntau=4)
    a = GaussianSpec(g, "boundary-dtn", 1e6).sample(5, 10)
    b = GaussianSpec(g, "boundary-dtn", None).sample(5, 10)
    assert np.array_equal(a, b)


def test_sampled_fields_are_real():
    g = Geometry(Nz=2, Ntau=4)
    f = GaussianSpec(g, "dirichlet-bulk", 8.0).sample_field(1)
    assert f.is_real()
    v = f.evaluate(np.array([0.1, -0.3]), np.array([[0.2, 0.4], [0.7, 0.1]]))
    assert np.max(np.abs(v.imag)) < 1e-12


def test_bulk_covariance_properties():
    g = Geometry(Nz=2, Ntau=4)
    rng = rng_for(0, 1)
    x, y = _points(rng, 10, g.L), _points(rng, 10, g.L)
    c = covariance_bulk(x, y, 8.0, g)
    assert np.allclose(c, covariance_bulk(y, x, 8.0, g), rtol=0, atol=1e-15)
    xb = x.copy()
    xb[:, 0] = g.L
    assert np.max(np.abs(covariance_bulk(xb, y, 8.0, g))) < 1e-12
    # closed-form 1D Green function against the double eigen-series
    s = covariance_bulk_series(x, y, 8.0, g, Ntau=20000)
    assert np.max(np.abs(c - s)) < 1e-6


def test_infinite_harmonic_single_mode():
    g = Geometry(Nz=1, m2=1.0)
    x = np.array([[0.0, 0.3, 0.3]])
    # only the zero mode survives a cutoff below the first excited bracket
    val = covariance_boundary_harmonic(x, x, 3.0, g, "infinite")
    assert val[0] == pytest.approx(0.5, rel=1e-14)
    taus = np.linspace(-1, 1, 21)
    pts = np.column_stack([taus, np.full(21, 0.3), np.full(21, 0.3)])
    d = covariance_boundary_harmonic(pts, pts, 20.0, g, "infinite")
    assert np.all(d <= d[10] + 1e-15)


def test_markov_decomposition():
    g = Geometry(Nz=4)
    rng = rng_for(2, 0)
    x, y = _points(rng, 50, g.L), _points(rng, 50, g.L)
    res = (covariance_bulk(x, y, 8.0, g) - covariance_boundary_harmonic(x, y, 8.0, g)
           - covariance_half(x, y, 8.0, g, -1) - covariance_half(x, y, 8.0, g, +1))
    assert np.max(np.abs(res)) <= 1e-10


def test_harmonic_extension():
    g = Geometry(Nz=2)
    rng = rng_for(4, 0)
    phim = rng.standard_normal((5, 5))
    phip = rng.standard_normal((5, 5))
    H = harmonic_extend(phim, phip, g, [-g.L, g.L])
    assert np.allclose(H[0], phim, atol=1e-15) and np.allclose(H[1], phip, atol=1e-15)
    assert np.all(harmonic_extend(None, None, g, [0.1, 0.5]) == 0)
    # per-mode ODE residual -u'' + <n>^2 u = 0 on a fine grid
    tau = np.linspace(-0.9, 0.9, 181)
    h = 1e-4
    w = g.brackets()
    for prof in (profile_left, profile_right):
        u = prof(tau[:, None, None], w[None], -1.0, 1.0)
        up = prof(tau[:, None, None] + h, w[None], -1.0, 1.0)
        um = prof(tau[:, None, None] - h, w[None], -1.0, 1.0)
        res = -(up - 2 * u + um) / h ** 2 + w[None] ** 2 * u
        assert np.max(np.abs(res)) < 1e-4


def test_green_symmetry_and_boundary():
    s = np.linspace(-1, 1, 11)
    G = green_dirichlet(s[:, None], s[None, :], 3.0, -1.0, 1.0)
    assert np.allclose(G, G.T)
    assert np.allclose(G[0], 0) and np.allclose(G[-1], 0)
    assert np.all(np.linalg.eigvalsh(G[1:-1, 1:-1]) > 0)


def test_rn_density():
    g = Geometry(Nz=8)
    r = rn_density_check(g, 100, 7)
    assert r.observed <= 1e-10
    c = GaussianSpec(g, "boundary-infinite").sample(1, 3)
    d = dtn_symbols(g)
    assert np.allclose(log_rn_formula(c, g, Ninf=np.zeros_like(d.Ninf)), 0.0)


def test_rn_single_mode():
    # per mode the density is a ratio of N(0, tanh(wL)/2w) and N(0, 1/2w)
    g = Geometry(Nz=1, m2=1.0, L=0.7)
    d = dtn_symbols(g)
    w = g.brackets()
    v0 = mode_variance("boundary-infinite", g)
    v1 = mode_variance("boundary-dtn", g)
    assert np.allclose(v1 / v0, np.tanh(w * g.L), rtol=1e-14)
    assert np.allclose(1.0 + d.Ninf / d.N0, 1.0 / np.tanh(w * g.L), rtol=1e-14)
    assert np.allclose(-d.Ninf, 1.0 / v1 - 1.0 / v0, rtol=1e-12)


def test_characteristic_functional_closed_form():
    g = Geometry(Nz=1)
    field = TauGridField(g, 8.0, -1.0, 1.0, 8)
    rng = rng_for(1, 0)
    H = field.extension(rng.standard_normal((3, 3)) * 0.3, rng.standard_normal((3, 3)) * 0.3)
    f = np.zeros((9, 3, 3), complex)
    f[:, 1, 1] = np.cos(np.pi * field.tau / 2)
    X = H[None] + field.sample_coeffs(rng, 40000)
    v = np.exp(1j * field.pairing(f, X))
    exact = characteristic_closed_form(field, f, H)
    se = np.std(v.real) / math.sqrt(len(v))
    assert abs(v.real.mean() - exact.real) <= 4 * se
    assert abs(v.imag.mean() - exact.imag) <= 4 * np.std(v.imag) / math.sqrt(len(v))


def test_markov_property_trivial_and_characteristic():
    g = Geometry(Nz=1)
    one = lambda X, tau: np.ones(X.shape[0], complex)
    r = markov_property_check(one, one, None, None, 8.0, g, 200, 0)
    assert r.extra["lhs_re"] == 1.0 and r.extra["rhs_re"] == 1.0

    def fn(X, tau):
        return np.exp(1j * np.real(np.sum(X[..., 1, 1], axis=-1)) * 0.3)

    r = markov_property_check(fn, fn, None, None, 8.0, g, 20000, 3)
    assert r.observed <= 4.0
