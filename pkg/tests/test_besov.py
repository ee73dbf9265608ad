import numpy as np
import pytest

from qftlab.besov import (LPDecomposition, besov_norm, box_frequencies, chi, hs_norm_spectral, odd_extension,
                          paraproduct, top_level, weighted_sup_norm)
from qftlab.experiments import besov_suite

G = 64


def _mode(n2, n3):
    z = np.arange(G) / G
    Z2, Z3 = np.meshgrid(z, z, indexing="ij")
    return np.cos(2 * np.pi * (n2 * Z2 + n3 * Z3))


def _random_field(rng, band=12):
    k = np.fft.fftfreq(G, d=1.0 / G)
    K2, K3 = np.meshgrid(k, k, indexing="ij")
    keep = (np.abs(K2) <= band) & (np.abs(K3) <= band)
    c = keep * (rng.standard_normal((G, G)) + 1j * rng.standard_normal((G, G))) / (1 + K2 ** 2 + K3 ** 2) ** 0.5
    return np.fft.ifft2(c).real * G


def test_partition_of_unity():
    r = np.linspace(0, 40, 4001)
    J = top_level(r.max())
    tot = sum(chi(j, r) for j in range(-1, J + 1))
    assert np.max(np.abs(tot - 1.0)) < 1e-14


def test_single_mode_blocks():
    for n in [(0, 1), (3, 0), (5, 7), (11, 2)]:
        f = _mode(*n)
        d = LPDecomposition(f)
        live = [j for j, b in zip(d.levels, d.blocks) if np.max(np.abs(b)) > 1e-13]
        assert 1 <= len(live) <= 2
        if len(live) == 2:
            assert live[1] - live[0] == 1
        assert np.max(np.abs(d.reconstruct() - f)) < 1e-13


def test_reconstruction_random_fields():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = _random_field(rng)
        assert np.max(np.abs(LPDecomposition(f).reconstruct() - f)) <= 1e-12 * np.max(np.abs(f))


@pytest.mark.parametrize("s", [1.0, 2.0])
def test_holder_norm_of_modes(s):
    for k in range(1, 25):
        r = float(k)
        levels = range(-1, top_level(r) + 1)
        jstar = max(levels, key=lambda j: chi(j, r))
        val = besov_norm(_mode(k, 0), s)
        assert 2.0 ** ((jstar - 1) * s) * (1 - 1e-12) <= val <= 2.0 ** ((jstar + 1) * s) * (1 + 1e-12)


def test_bony_reconstruction_and_constant():
    rng = np.random.default_rng(1)
    for _ in range(10):
        f, g = _random_field(rng, 10), _random_field(rng, 10)
        pieces = sum(paraproduct(f, g, k) for k in ("<", "o", ">"))
        assert np.max(np.abs(pieces - f * g)) <= 1e-12 * np.max(np.abs(f * g))
    c = np.full((G, G), 2.5)
    g = _random_field(rng, 10)
    assert np.max(np.abs(paraproduct(c, g, ">"))) < 1e-12
    # the two lowest blocks of g meet the constant resonantly, the rest sit above it
    d = LPDecomposition(g)
    low = d.block(-1) + d.block(0)
    assert np.max(np.abs(paraproduct(c, g, "o") - c * low)) < 1e-12
    assert np.max(np.abs(paraproduct(c, g, "<") - c * (g - low))) < 1e-12


def test_paraproduct_estimate_bounded():
    rng = np.random.default_rng(2)
    s = 0.5
    ratios = []
    for _ in range(100):
        f, g = _random_field(rng, 12), _random_field(rng, 12)
        ratios.append(besov_norm(paraproduct(f, g, ">"), s) / (besov_norm(f, s) * np.max(np.abs(g))))
    assert max(ratios) < 10.0
    with pytest.raises(ValueError):
        paraproduct(f, g, "x")


def test_b22_is_hs():
    rng = np.random.default_rng(3)
    for _ in range(10):
        f = _random_field(rng)
        for s in (-1.0, 0.0, 0.75):
            a = besov_norm(f, s, 2, 2)
            assert abs(a - hs_norm_spectral(f, s)) <= 1e-10 * a


def test_weighted_sup_norm_trivial():
    taus = np.linspace(-1, 1, 21)
    F = np.exp(-np.abs(taus))[:, None, None] * np.ones((21, 8, 8))
    assert weighted_sup_norm(F, taus, 0.0, 0.0) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(ValueError):
        weighted_sup_norm(F[:0], taus[:0], 0.0, 0.0)


def test_odd_extension_shape():
    f = np.arange(12.0).reshape(3, 2, 2)
    e = odd_extension(f, axis=0)
    assert e.shape == (6, 2, 2)
    assert np.array_equal(e[3:], -f[::-1])
    assert box_frequencies((4, 4)).max() == pytest.approx(np.sqrt(8))


def test_besov_suite_experiment():
    res = besov_suite({"experiment": "besov-suite"})
    assert all(c.passed for c in res.checks), [c.to_dict() for c in res.checks]
