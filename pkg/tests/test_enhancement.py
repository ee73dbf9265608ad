import numpy as np
import pytest

from qftlab.enhancement import (BoundaryModel, GreenKernelModel, SineModel, UpsilonConstants,
                                build_bulk_enhancement, moment_diagnostics, wick_mode_second_moment)
from qftlab.estimates import mean_se, rng_for
from qftlab.gaussian import mode_variance
from qftlab.spectral import Geometry, clock_grid, conj_symmetric_noise
from qftlab.wick import wick_power


def test_bulk_ito_isometry():
    g = Geometry(Nz=1, Ntau=4)
    m = SineModel(g, 8.0)
    path = m.sample_path(3, 20000)
    a = np.abs(path[:, -1]) ** 2
    mean, se = mean_se(a)
    target = mode_variance("dirichlet-bulk", g, 8.0)
    assert np.allclose(m.S[-1], target, rtol=1e-14)
    keep = target > 0
    assert np.max(np.abs(mean - target)[keep] / se[keep]) <= 5.0


def test_prefix_coupling():
    g = Geometry(Nz=1, Ntau=4)
    t2 = np.union1d(clock_grid(g.brackets(), 16.0), [4.0])
    t1 = t2[t2 <= 4.0]
    m1 = SineModel(g, 4.0, t_grid=t1, check=False)
    m2 = SineModel(g, 16.0, t_grid=t2, check=False)
    p1 = m1.sample_path(5, 3)
    p2 = m2.sample_path(5, 3)
    assert np.array_equal(p1, p2[:, :len(t1)])


def test_coarse_time_grid_rejected():
    g = Geometry(Nz=1, Ntau=4)
    with pytest.raises(ValueError):
        SineModel(g, 8.0, t_grid=[0.0, 8.0])


def test_boundary_wick_second_moments():
    g = Geometry(Nz=1)
    m = BoundaryModel(g, 8.0, t_grid=[0.0, 8.0], check=False, order=4)
    c = m.sample_final(2, 5000)
    X = m.extend(c)
    for k in (1, 2, 3):
        F = wick_power(X, m.cbar()[:, None, None], k)
        coef = m.tg.from_grid(F)                                     # (n, Q, A, A)
        emp, se = mean_se(np.abs(coef) ** 2)
        exact = wick_mode_second_moment(m, k, None)
        z = np.abs(emp - exact) / np.where(se > 0, se, 1.0)
        assert np.max(z) <= 5.0


def test_renormalised_resonant_product_is_centred():
    g = Geometry(Nz=1, Ntau=4)
    m = SineModel(g, 4.0)
    e = build_bulk_enhancement(7, 4.0, g, n=300, model=m)
    ren, se_r = mean_se(m.integrate(e.W2o2))
    bare, se_b = mean_se(m.integrate(e.W2o2_bare))
    assert abs(ren) <= 5 * se_r
    assert abs(bare) > 5 * se_b


def test_upsilon_counterterms():
    g = Geometry(Nz=1)
    km = GreenKernelModel(g, 4.0, K=32)
    # zero data with ordinary powers of H: only the counterterm is left
    det = UpsilonConstants(km, wick=False)
    assert det.upsilon2() == pytest.approx(-det.delta3, rel=1e-12)
    up = UpsilonConstants(km)
    rng = rng_for(0, 9)
    var = mode_variance("boundary-dtn", g)
    vals = []
    for _ in range(400):
        a = np.sqrt(var) * conj_symmetric_noise(rng, var.shape)
        b = np.sqrt(var) * conj_symmetric_noise(rng, var.shape)
        vals.append(up.upsilon3(a, b))
    m, se = mean_se(np.array(vals))
    assert abs(m) <= 5 * se


def test_moment_diagnostics_interface():
    g = Geometry(Nz=1)
    r = moment_diagnostics("boundary-wick", [8.0, 16.0], g, 20, 1, order=4)
    assert len(r.extra["moments"]) == 2 and all(v > 0 for v in r.extra["moments"])
    with pytest.raises(ValueError):
        moment_diagnostics("boundary-wick", [8.0], g, 5, 1, p=3)
    with pytest.raises(ValueError):
        moment_diagnostics("nonsense", [8.0], g, 5, 1)
