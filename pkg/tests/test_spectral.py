import math

import numpy as np
import pytest
from scipy.integrate import quad

from qftlab.spectral import (BulkGrid, CutoffSchedule, Geometry, TransverseGrid, bracket, bump,
                             clock_grid, conj_symmetric_noise, eigenvalue, is_conj_symmetric, sine_basis)


def test_bracket_values():
    assert bracket([0, 0], 1.0) == pytest.approx(1.0)
    assert bracket([3, 4], 1.0) == pytest.approx(math.sqrt(100 * math.pi ** 2 + 1), rel=1e-14)
    assert bracket([3, 4], 1.0) == pytest.approx(31.432, abs=1e-3)
    assert bracket([1, 0], 1.0) < bracket([1, 1], 1.0)


def test_eigenvalue_matches_operator():
    g = Geometry(L=1.0, m2=1.0, Nz=2, Ntau=8)
    assert eigenvalue(1, [0, 0], g) == pytest.approx(math.pi ** 2 / 4 + 1.0, rel=1e-14)
    # (-d^2/dtau^2 + <n>^2) f_k = lambda f_k, checked by finite differences
    tau = np.linspace(-0.9, 0.9, 41)
    h = 1e-4
    for k, n in [(1, (0, 0)), (3, (1, 0)), (8, (2, 1))]:
        f = sine_basis([k], tau, g.L)[:, 0]
        d2 = (sine_basis([k], tau + h, g.L)[:, 0] - 2 * f + sine_basis([k], tau - h, g.L)[:, 0]) / h ** 2
        lhs = -d2 + bracket(n, g.m2) ** 2 * f
        assert np.allclose(lhs, eigenvalue(k, n, g) * f, atol=1e-4 * eigenvalue(k, n, g))


def test_eigenvalue_rejects_out_of_box():
    g = Geometry(Nz=2, Ntau=4)
    with pytest.raises(ValueError):
        eigenvalue(5, [0, 0], g)
    with pytest.raises(ValueError):
        eigenvalue(1, [3, 0], g)


def test_geometry_validation():
    with pytest.raises(ValueError):
        Geometry(m2=-1.0)
    with pytest.raises(ValueError):
        Geometry(L=0.0)
    with pytest.raises(ValueError):
        Geometry(tag="sphere")


def test_mollifier_symbol():
    s = CutoffSchedule(10.0)
    assert s.rho_hat(7.0) == 1.0
    assert s.rho_hat(10.0) == 1.0
    assert s.rho_hat(20.0) == 0.0
    assert s.rho_hat(35.0) == 0.0
    # quintic ramp evaluated at its midpoint
    assert s.rho_hat(15.0) == pytest.approx(0.5, abs=1e-15)
    x = np.linspace(0, 3, 301)
    assert np.all(np.diff(bump(x)) <= 0)
    with pytest.raises(ValueError):
        CutoffSchedule(0.0)


@pytest.mark.parametrize("b", [1.0, 4.0, 9.5])
def test_clock_integrals(b):
    s = CutoffSchedule(1.0)
    lam = 2.3 + b * b
    # zero after t = b
    assert s.j0_sq(b, b * 1.01) == 0.0
    assert s.jbulk_sq(lam, b, 3 * b) == 0.0
    tot0, _ = quad(lambda t: float(s.j0_sq(b, t)), 0, 2 * b, points=[b / 2, b], epsabs=1e-13)
    totb, _ = quad(lambda t: float(s.jbulk_sq(lam, b, t)), 0, 2 * b, points=[b / 2, b], epsabs=1e-13)
    # the boundary clock ends at the mu0 variance 1/(2<n>)
    assert tot0 == pytest.approx(0.5 / b, rel=1e-9)
    assert totb == pytest.approx(1.0 / lam, rel=1e-9)
    # finite horizon reproduces the mollified covariance symbol
    T = 0.7 * b
    part, _ = quad(lambda t: float(s.jbulk_sq(lam, b, t)), 0, T, points=[b / 2], epsabs=1e-13)
    assert part == pytest.approx(CutoffSchedule(T).rho_hat(b) ** 2 / lam, rel=1e-9, abs=1e-14)


def test_unit_mass_zero_mode():
    s = CutoffSchedule(1.0)
    tot, _ = quad(lambda t: float(s.j0_sq(1.0, t)), 0, 2, points=[0.5, 1.0], epsabs=1e-13)
    assert tot == pytest.approx(0.5, rel=1e-9)


def test_flat_projector():
    b = np.array([1.0, 3.0, 7.0])
    assert np.all(CutoffSchedule.theta(b, 2 * b.max() + 1) == 1.0)
    assert np.all(CutoffSchedule.theta(b, 1e-9) == 0.0)
    # theta_t vanishes wherever the clock still moves at s >= t
    for t in (2.0, 5.0, 9.0):
        for s in (t, 1.5 * t, 4 * t):
            assert np.all(CutoffSchedule.theta(b, t) * CutoffSchedule.clock_dt(b, s) == 0.0)


def test_clock_grid_contains_kinks():
    nodes = clock_grid([1.0, 3.0], 8.0, per_mode=4)
    for t in (0.5, 1.0, 1.5, 3.0):
        assert np.min(np.abs(nodes - t)) < 1e-12
    assert nodes[0] == 0.0 and nodes[-1] == 8.0


def test_transverse_grid_real_and_parseval():
    rng = np.random.default_rng(0)
    tg = TransverseGrid(3)
    for _ in range(100):
        c = conj_symmetric_noise(rng, (7, 7))
        assert is_conj_symmetric(c)
        f = tg.to_grid_complex(c)
        assert np.max(np.abs(f.imag)) <= 1e-12 * np.max(np.abs(f.real))
        assert np.mean(f.real ** 2) == pytest.approx(np.sum(np.abs(c) ** 2), rel=1e-10)
        assert np.allclose(tg.from_grid(f.real), c, atol=1e-13)


def test_bulk_grid_parseval():
    rng = np.random.default_rng(1)
    g = Geometry(Nz=2, Ntau=6)
    bg = BulkGrid(g)
    for _ in range(100):
        c = conj_symmetric_noise(rng, (6, 5, 5))
        f = bg.to_grid(c)
        assert bg.integrate(f * f) == pytest.approx(np.sum(np.abs(c) ** 2), rel=1e-10)
        assert np.allclose(bg.from_grid(f), c, atol=1e-12)
