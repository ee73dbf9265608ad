import math

import numpy as np
import pytest

from qftlab.amplitudes import (AmplitudeModel, BoundaryMeasure, Piece, amplitude, correction_terms,
                               gluing_residual, laplace_transform, log_free_amplitude, markov_residual)
from qftlab.amplitudes import test_function as smooth_test_function
from qftlab.estimates import rng_for
from qftlab.gaussian import trace_variance
from qftlab.spectral import Geometry


@pytest.fixture(scope="module")
def free_model():
    return AmplitudeModel(Geometry(Nz=1), 8.0, coupling=0.0)


@pytest.fixture(scope="module")
def model():
    return AmplitudeModel(Geometry(Nz=1), 8.0)


def _data(m, seed=0):
    rng = rng_for(seed, 99)
    return m.sample_boundary(rng, 2, trace_variance(m.w, m.g.L))


def test_laplace_trivial(free_model):
    p = Piece(free_model, -1.0, 1.0)
    a, b = _data(free_model)
    q = laplace_transform(p, None, a, b, 200, 1)
    assert q.value == 1.0 and q.stderr == 0.0


def test_laplace_gaussian_closed_form(free_model):
    p = Piece(free_model, -1.0, 1.0)
    a, b = _data(free_model)
    f_fn = smooth_test_function(free_model)
    q = laplace_transform(p, f_fn, a, b, 20000, 2)
    exact = math.exp(p.gaussian_mgf_log(p.f_nodes(f_fn), p.extension(a, b)))
    assert abs(q.value - exact) <= 4 * q.stderr


def test_amplitude_positive(model):
    p = Piece(model, -1.0, 1.0)
    a, b = _data(model, 3)
    A = amplitude(p, smooth_test_function(model), a, b, 500, 4)
    assert A.value > 0 and np.isfinite(A.log_value)


def test_free_amplitude_is_ou_density(free_model):
    # one real dof, l -> 0: the stationary OU transition density concentrates
    m = free_model
    a, b = _data(m, 5)
    l_short = log_free_amplitude(m, 1e-3, a, b)
    l_same = log_free_amplitude(m, 1e-3, a, a)
    assert l_same > l_short


def test_correction_terms_zero_data(model):
    z = np.zeros(model.w.shape, complex)
    out = correction_terms(model, z, z)
    assert out["E_a"] == pytest.approx(0.0, abs=1e-14)
    for end in ("E_b_minus", "E_b_plus"):
        assert out[end]["domain"] == 0.0
        assert out[end]["profile"] == pytest.approx(0.0, abs=1e-14)


def test_correction_terms_unit_length_and_reflection(model):
    a, b = _data(model, 6)
    out = correction_terms(model, a, b)
    # at L = 1 each unit slab coincides with a half of the cylinder
    assert out["E_b_minus"]["domain"] == 0.0 and out["E_b_plus"]["domain"] == 0.0
    sw = correction_terms(model, b, a)
    assert sw["E_a"] == pytest.approx(out["E_a"], rel=1e-12)
    assert sw["E_b_minus"]["profile"] == pytest.approx(out["E_b_plus"]["profile"], rel=1e-10)


def test_boundary_measure_free_chain_reproduces_prior(free_model):
    bm = BoundaryMeasure(free_model)
    # with V = 0 the pCN proposal preserves the prior, so every move is accepted
    with pytest.warns(UserWarning, match="acceptance 1.000"):
        ch = bm.chain(4000, 1)
    s = ch["samples"]
    var = np.mean(np.abs(s) ** 2, axis=0)
    target = 1.0 / (2 * free_model.w) * free_model.active
    se = np.std(np.abs(s) ** 2, axis=0) / math.sqrt(len(s))
    keep = target > 0
    assert np.max(np.abs(var - target)[keep] / se[keep]) <= 5.0


def test_boundary_measure_chain_vs_importance(model):
    bm = BoundaryMeasure(model)
    imp = bm.importance(20000, 2)
    assert imp["ess"] > 1000
    ch = bm.chain(4000, 3)
    assert 0.1 <= ch["acceptance"] <= 0.9


def test_gluing_free(free_model):
    a, b = _data(free_model, 7)
    r = gluing_residual(free_model, smooth_test_function(free_model), a, b, 4000, 1, 8, target_rel=0.05)
    assert abs(r.extra["z"]) <= 3.0


def test_gluing_interacting_small(model):
    a, b = _data(model, 8)
    r = gluing_residual(model, smooth_test_function(model), a, b, 3000, 1, 9, target_rel=0.1)
    assert abs(r.extra["z"]) <= 3.0


def test_markov_residual_gaussian_closed_form(free_model):
    f = smooth_test_function(free_model, amp=0.5, kind="flat")
    r = markov_residual(free_model, f, f, 0.5, 1000, 8, 1)
    assert r.passed and r.extra["z_closed_lhs"] ** 2 <= 16


def test_markov_residual_zero_f(model):
    r = markov_residual(model, None, smooth_test_function(model), 0.5, 500, 4, 2)
    assert abs(r.extra["diff"]) <= 1e-12
