import math

import numpy as np
import pytest

from qftlab.spectral import Geometry
from qftlab.transfer import (StateGrid, assemble, gaussian_tower, ground_state_function, ground_state_transform,
                             orlicz_diagnostic, orlicz_integral, orlicz_norm, spectrum, transfer_model)


def test_state_grid_matches_prior():
    g = Geometry(Nz=1)
    grid = StateGrid(g)
    assert grid.weights.sum() == pytest.approx(1.0, rel=1e-14)
    w0 = g.brackets()[1, 1]
    assert grid.weights @ np.abs(grid.points[:, 1, 1]) ** 2 == pytest.approx(1 / (2 * w0), rel=1e-12)
    two = StateGrid(g, [(0, 0), (1, 0)], nodes=5)
    assert len(two) == 125
    c = two.points
    assert np.allclose(c, np.conj(c[:, ::-1, ::-1]))
    with pytest.raises(ValueError):
        StateGrid(g, [(0, 0), (1, 0), (0, 1), (1, 1), (1, -1)], nodes=2)


@pytest.fixture(scope="module")
def gaussian_tm():
    gm, grid = transfer_model(8.0, coupling=0.0)
    return assemble(1.0, gm, grid, 1, 0)


def test_gaussian_tower(gaussian_tm):
    sp = spectrum(gaussian_tm)
    assert np.max(np.abs(sp["eigenvalues"][:4] - gaussian_tower(1.0, 1.0, 4))) <= 1e-3
    assert sp["E0"] == pytest.approx(0.5, abs=1e-3)
    assert sp["positive_e0"] and sp["eigen_residual"] < 1e-10
    assert gaussian_tm.asymmetry() < 1e-10


def test_ground_state_transform_is_stochastic(gaussian_tm):
    gs = ground_state_transform(gaussian_tm)
    assert np.all(gs["P"] > 0)
    assert np.max(np.abs(gs["row_sums"] - 1.0)) <= 1e-8
    assert gs["stationarity_residual"] <= 1e-8


def test_gaussian_ground_state_is_flat(gaussian_tm):
    # the free ground state is the mu0 density itself, i.e. psi = 1 in L^2(mu0)
    sp = spectrum(gaussian_tm)
    psi = ground_state_function(sp, gaussian_tm.nu)
    assert np.max(np.abs(psi - 1.0)) <= 1e-6
    assert orlicz_integral(psi, gaussian_tm.nu, 1.0) == pytest.approx(0.0, abs=1e-6)


def test_interacting_kernel_small():
    model, grid = transfer_model(8.0)
    tm = assemble(1.0, model, grid, 300, 2)
    assert np.all(tm.K > 0)
    sp = spectrum(tm)
    assert sp["positive_e0"] and np.isfinite(sp["E0"])


def test_orlicz_norm_definition():
    rng = np.random.default_rng(0)
    psi = np.exp(rng.standard_normal(40))
    nu = rng.uniform(size=40)
    nu /= nu.sum()
    k = orlicz_norm(psi, nu, 1.0)
    assert orlicz_integral(psi / k, nu, 1.0) == pytest.approx(1.0, rel=1e-6)
    r = orlicz_diagnostic([psi, psi], [nu, nu], [8.0, 16.0])
    assert r.passed and r.observed == 0.0
    assert math.isclose(r.extra["norm"][0], k)
