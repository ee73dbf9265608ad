"""Littlewood-Paley blocks, Besov norms and Bony paraproducts.

Fields are grid values on a periodic box (T^2, or the odd-periodised
cylinder [-2L, 2L) x T^2).  Frequencies are measured in cycles per unit
length, so transverse modes n in Z^2 have |xi| = |n|.

Partition: Psi(r) = 1 for r <= 3/4, 0 for r >= 4/3, C^2 smoothstep between;
chi_{-1} = Psi and chi_j(r) = Psi(2^{-j-1} r) - Psi(2^{-j} r).  The sum
telescopes to Psi(2^{-J-1} r), which is 1 on every retained frequency once
J is chosen with max|xi| <= (3/4) 2^{J+1}; reconstruction is then exact.
"""
import math

import numpy as np

from .spectral import smoothstep5


def psi(r):
    r = np.asarray(r, float)
    return 1.0 - smoothstep5((r - 0.75) / (4.0 / 3.0 - 0.75))


def chi(j, r):
    r = np.asarray(r, float)
    if j == -1:
        return psi(r)
    return psi(r / 2.0 ** (j + 1)) - psi(r / 2.0 ** j)


def box_frequencies(shape, periods=None):
    """|xi| on an FFT grid of the given shape; periods default to 1 per axis."""
    periods = (1.0,) * len(shape) if periods is None else periods
    ks = [np.fft.fftfreq(n, d=1.0 / n) / P for n, P in zip(shape, periods)]
    grids = np.meshgrid(*ks, indexing="ij")
    return np.sqrt(sum(k * k for k in grids))


def top_level(rmax):
    """Smallest J with rmax <= (3/4) 2^{J+1}."""
    if rmax <= 0.75:
        return -1
    return int(math.ceil(math.log2(rmax / 0.75) - 1 - 1e-12))


class LPDecomposition:
    """Blocks Delta_j f, j = -1..J, of grid values f (last `ndim` axes)."""

    def __init__(self, f, periods=None, J=None, ndim=None):
        f = np.asarray(f, float)
        self.ndim = f.ndim if ndim is None else ndim
        shape = f.shape[-self.ndim:]
        self.periods = periods
        self.r = box_frequencies(shape, periods)
        self.J = top_level(self.r.max()) if J is None else J
        axes = tuple(range(-self.ndim, 0))
        self.axes = axes
        fh = np.fft.fftn(f, axes=axes)
        self.levels = list(range(-1, self.J + 1))
        self.blocks = [np.fft.ifftn(fh * chi(j, self.r), axes=axes).real for j in self.levels]

    def block(self, j):
        return self.blocks[j + 1]

    def reconstruct(self):
        return sum(self.blocks)


def lp_decompose(f, periods=None, J=None, ndim=None):
    return LPDecomposition(f, periods, J, ndim)


def lp_norm(f, p, axes):
    f = np.abs(f)
    if p == np.inf:
        return f.max(axis=axes)
    return np.mean(f ** p, axis=axes) ** (1.0 / p)


def besov_norm(f, s, p=np.inf, q=np.inf, periods=None, ndim=None, J=None):
    """||f||_{B^s_{p,q}} = l^q over j of 2^{js} ||Delta_j f||_{L^p} (grid means)."""
    d = f if isinstance(f, LPDecomposition) else LPDecomposition(f, periods, J, ndim)
    terms = np.array([2.0 ** (j * s) * lp_norm(b, p, d.axes) for j, b in zip(d.levels, d.blocks)])
    if q == np.inf:
        return terms.max(axis=0)
    return (np.sum(terms ** q, axis=0)) ** (1.0 / q)


def holder_norm(f, s, periods=None, ndim=None):
    return besov_norm(f, s, np.inf, np.inf, periods, ndim)


def lp_weight_hs(r, s, J):
    """Spectral multiplier sum_j 2^{2js} chi_j(r)^2 (so that B^s_{2,2} = this weighted l^2)."""
    return sum(2.0 ** (2 * j * s) * chi(j, r) ** 2 for j in range(-1, J + 1))


def hs_norm_spectral(f, s, periods=None, ndim=None, J=None):
    """B^s_{2,2} norm evaluated directly from Fourier coefficients (Parseval)."""
    f = np.asarray(f, float)
    ndim = f.ndim if ndim is None else ndim
    axes = tuple(range(-ndim, 0))
    shape = f.shape[-ndim:]
    r = box_frequencies(shape, periods)
    J = top_level(r.max()) if J is None else J
    fh = np.fft.fftn(f, axes=axes) / np.prod(shape)
    return np.sqrt(np.sum(lp_weight_hs(r, s, J) * np.abs(fh) ** 2, axis=axes))


def sobolev_norm(f, s, m2=1.0, periods=None, ndim=None):
    """Classical H^s norm with weight <xi>^{2s}, <xi> = sqrt(4 pi^2 |xi|^2 + m^2)."""
    f = np.asarray(f, float)
    ndim = f.ndim if ndim is None else ndim
    axes = tuple(range(-ndim, 0))
    shape = f.shape[-ndim:]
    r = box_frequencies(shape, periods)
    fh = np.fft.fftn(f, axes=axes) / np.prod(shape)
    wgt = (4 * np.pi ** 2 * r * r + m2) ** s
    return np.sqrt(np.sum(wgt * np.abs(fh) ** 2, axis=axes))


def paraproduct(f, g, kind, periods=None, ndim=None, J=None):
    """Bony pieces: '>' = sum_{l<k-1} Delta_k f Delta_l g (f high), '<' = g > f,
    'o' = sum_{|k-l|<=1} Delta_k f Delta_l g.  Pointwise products are taken on
    the given grid, which must be large enough for the product band."""
    f = np.asarray(f, float)
    g = np.asarray(g, float)
    ndim = f.ndim if ndim is None else ndim
    if J is None:
        shape = f.shape[-ndim:]
        J = top_level(box_frequencies(shape, periods).max())
    df = LPDecomposition(f, periods, J, ndim)
    dg = LPDecomposition(g, periods, J, ndim)
    out = np.zeros(np.broadcast(f, g).shape)
    lv = df.levels
    if kind in (">", "succ"):
        for k in lv:
            low = sum((dg.block(l) for l in lv if l < k - 1), start=np.zeros_like(out))
            out = out + df.block(k) * low
    elif kind in ("<", "prec"):
        for k in lv:
            low = sum((df.block(l) for l in lv if l < k - 1), start=np.zeros_like(out))
            out = out + dg.block(k) * low
    elif kind in ("o", "res", "resonant"):
        for k in lv:
            near = sum((dg.block(l) for l in lv if abs(k - l) <= 1), start=np.zeros_like(out))
            out = out + df.block(k) * near
    else:
        raise ValueError("kind must be '<', 'o' or '>'")
    return out


def bony_pieces(f, g, periods=None, ndim=None):
    return {k: paraproduct(f, g, k, periods, ndim) for k in ("<", "o", ">")}


def weighted_sup_norm(F, taus, alpha, s, p=np.inf, q=np.inf, dist="abs", L=1.0, periods=None):
    """max over the tau grid of d(tau)^alpha ||F(tau, .)||_{B^s_{p,q}(T^2)}.

    dist='abs' uses d = |tau|; dist='boundary' uses d = L - |tau|."""
    taus = np.asarray(taus, float)
    if taus.size == 0:
        raise ValueError("empty tau grid")
    d = np.abs(taus) if dist == "abs" else g_dist(taus, L)
    norms = besov_norm(np.asarray(F, float), s, p, q, periods, ndim=2)
    return float(np.max(d ** alpha * norms))


def g_dist(taus, L):
    return L - np.abs(taus)


def odd_extension(f, axis=-3):
    """Odd reflection about tau = L of cell-centred samples on [-L, L]: period 4L."""
    f = np.moveaxis(np.asarray(f, float), axis, 0)
    ext = np.concatenate([f, -f[::-1]], axis=0)
    return np.moveaxis(ext, 0, axis)


def cylinder_periods(L):
    """Periods (tau, z2, z3) of the odd-extended cylinder box."""
    return (4.0 * L, 1.0, 1.0)
