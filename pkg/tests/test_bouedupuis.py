import numpy as np
import pytest

from qftlab.bouedupuis import (BoundaryCost, Drift, cancellation_report, h_half_norm, optimize,
                               variational_inequality, z_of_drift)
from qftlab.estimates import rng_for
from qftlab.spectral import Geometry, conj_symmetric_noise


@pytest.fixture(scope="module")
def g():
    return Geometry(Nz=1)


def _f(g, scale=0.3, seed=0):
    return scale * conj_symmetric_noise(rng_for(seed, 5), g.brackets().shape)


def test_zero_and_terminal_drifts(g):
    c = BoundaryCost(g, 4.0, coupling=0.0)
    dS = c.m.dS
    Z, u2 = z_of_drift(Drift.zero(c.m.M, c.S.shape), dS)
    assert np.all(Z == 0) and np.all(u2 == 0)
    target = _f(g)
    d = Drift.from_terminal(target, c.S, c.m.M)
    Z, u2 = z_of_drift(d, dS)
    assert np.allclose(Z[0], target * (c.S > 0), atol=1e-14)
    live = c.S > 0
    assert u2[0] == pytest.approx(np.sum(np.abs(target[live]) ** 2 / c.S[live]), rel=1e-12)


def test_terminal_value_bounded_by_control(g):
    c = BoundaryCost(g, 8.0, coupling=0.0)
    rng = rng_for(1, 0)
    for _ in range(20):
        d = Drift.random(rng, c.m.M, c.S.shape, 1.0)
        Z, u2 = z_of_drift(d, c.m.dS)
        assert h_half_norm(Z, c.w)[0] <= np.sqrt(u2[0]) * (1 + 1e-12)


def test_zero_drift_free_cost_vanishes(g):
    c = BoundaryCost(g, 4.0, coupling=0.0)
    cb = c.evaluate(Drift.zero(c.m.M, c.S.shape), 50, 0)
    assert np.all(cb.total("raw") == 0.0)


def test_gaussian_optimum(g):
    f = _f(g)
    c = BoundaryCost(g, 4.0, f=f, coupling=0.0)
    Zg, vg = c.gaussian_optimum()
    o = optimize(c, 100, 100, 3, steps=50, n_direct=20000)
    assert np.max(np.abs(o["Z"] - Zg)) <= 1e-6
    # at V = 0 the optimum is the exact free energy -1/2 sum S |f|^2
    assert abs(o["direct"] - vg) <= 4 * o["direct_se"]
    se = np.hypot(o["upper_bound_se"], o["direct_se"])
    assert o["upper_bound"] >= o["direct"] - 3 * se


def test_probe_drift_cancellation(g):
    c = BoundaryCost(g, 4.0)
    cb = c.evaluate(c.probe_drift(), 300, 1)
    r = cancellation_report(cb)
    assert r.passed, r.to_dict()


def test_coupling_must_be_binary(g):
    with pytest.raises(ValueError):
        BoundaryCost(g, 4.0, coupling=0.5)


def test_variational_inequality_flags_violation():
    ok = variational_inequality([(1.0, 0.1), (2.0, 0.1)], 0.9, 0.05)
    assert ok.passed and ok.extra["violations"] == []
    bad = variational_inequality([(1.0, 0.1), (0.0, 0.01)], 0.9, 0.05)
    assert not bad.passed and bad.extra["violations"] == [1]
