"""Geometry, mode lattices, multiplier symbols and grid transforms.

Conventions used throughout the package
---------------------------------------
* The cylinder is M = [-L, L] x T^2 with T^2 = (R/Z)^2 (unit area).
* Transverse Fourier modes e_n(z) = exp(2 pi i n.z), n in Z^2, truncated to
  the box |n|_inf <= Nz and stored as centred (2Nz+1, 2Nz+1) arrays.
* Longitudinal sine modes f_k(tau) = L^{-1/2} sin(pi k (tau+L) / (2L)),
  k = 1..Ntau, vanish at tau = +-L and are orthonormal on [-L, L].
* <n> = sqrt(4 pi^2 |n|^2 + m^2) and lambda(k, n) = (pi k/(2L))^2 + <n>^2.
"""
from dataclasses import dataclass
import math

import numpy as np

DOMAIN_TAGS = ("cylinder-dirichlet", "cylinder-periodic", "half-cylinder-minus",
               "half-cylinder-plus", "torus-2d")


def smoothstep5(s):
    """Quintic smoothstep 6s^5 - 15s^4 + 10s^3 clipped to [0, 1] (C^2)."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def smoothstep5_deriv(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


def bump(x):
    """The mollifier profile rho: 1 on [-1,1], quintic ramp on 1<|x|<2, 0 beyond."""
    x = np.abs(np.asarray(x, dtype=float))
    return 1.0 - smoothstep5(x - 1.0)


def bump_deriv(x):
    """d rho / dx for x >= 0 (rho is even, so callers pass |x|)."""
    x = np.abs(np.asarray(x, dtype=float))
    return -smoothstep5_deriv(x - 1.0)


@dataclass(frozen=True)
class Geometry:
    """Cylinder / torus descriptor."""
    L: float = 1.0
    m2: float = 1.0
    Nz: int = 4
    Ntau: int = 16
    tag: str = "cylinder-dirichlet"

    def __post_init__(self):
        if not (self.L > 0):
            raise ValueError("half_length L must be positive")
        if not (self.m2 > 0):
            raise ValueError("mass_sq must be positive")
        if int(self.Nz) < 1 or int(self.Nz) != self.Nz:
            raise ValueError("transverse cutoff Nz must be a positive integer")
        if int(self.Ntau) < 1 or int(self.Ntau) != self.Ntau:
            raise ValueError("longitudinal cutoff Ntau must be a positive integer")
        if self.tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {self.tag!r}")

    @property
    def m(self):
        return math.sqrt(self.m2)

    def modes(self):
        """Centred integer lattice (n2, n3), each of shape (2Nz+1, 2Nz+1)."""
        r = np.arange(-self.Nz, self.Nz + 1)
        return np.meshgrid(r, r, indexing="ij")

    def brackets(self):
        n2, n3 = self.modes()
        return bracket(np.stack([n2, n3], axis=-1), self.m2)

    def eigenvalue(self, k, n):
        return eigenvalue(k, n, self)

    def with_(self, **kw):
        d = dict(L=self.L, m2=self.m2, Nz=self.Nz, Ntau=self.Ntau, tag=self.tag)
        d.update(kw)
        return Geometry(**d)


def bracket(n, m2):
    """<n> = sqrt(4 pi^2 |n|^2 + m^2) for n of shape (..., 2)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(4.0 * np.pi ** 2 * np.sum(n * n, axis=-1) + m2)


def eigenvalue(k, n, g):
    """Dirichlet eigenvalue of -Delta + m^2 for the mode f_k e_n on [-L, L] x T^2."""
    k = np.asarray(k)
    n = np.asarray(n)
    if np.any(k < 1) or np.any(k > g.Ntau) or np.any(np.abs(n) > g.Nz):
        raise ValueError("mode index outside the truncation box")
    return (np.pi * k / (2.0 * g.L)) ** 2 + bracket(n, g.m2) ** 2


class CutoffSchedule:
    """The mollifier rho at cutoff T and the derived multipliers.

    All symbols are functions of a transverse bracket value b = <n>; the
    clock rho(b/t)^2 increases from 0 (t <= b/2) to 1 (t >= b).
    """

    theta_c = 0.5

    def __init__(self, T):
        if not (T > 0):
            raise ValueError("cutoff T must be positive")
        self.T = float(T)

    def rho_hat(self, b, T=None):
        T = self.T if T is None else T
        return bump(np.asarray(b, dtype=float) / T)

    @staticmethod
    def clock(b, t):
        """rho(b/t)^2, with the value 0 at t = 0."""
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = bump(np.where(t > 0, b / np.where(t > 0, t, 1.0), np.inf)) ** 2
        return out

    @staticmethod
    def clock_dt(b, t):
        """d/dt rho(b/t)^2 (one-sided value at the two kink times)."""
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = np.where(t > 0, t, 1.0)
            x = b / tt
            val = 2.0 * bump(x) * bump_deriv(x) * (-b / tt ** 2)
        return np.where(t > 0, val, 0.0)

    def j0_sq(self, b, t):
        """(J^0_t)^2 symbol: d/dt rho_t^2 / (2<n>), so that int_0^T J0^2 dt is the
        mu0 variance rho_T^2 / (2<n>)."""
        return self.clock_dt(b, t) / (2.0 * np.asarray(b, dtype=float))

    def j0(self, b, t):
        return np.sqrt(self.j0_sq(b, t))

    def jbulk_sq(self, lam, b, t):
        """(J_t)^2 symbol of a bulk mode: d/dt rho_t(n)^2 / lambda."""
        return self.clock_dt(b, t) / np.asarray(lam, dtype=float)

    def jbulk(self, lam, b, t):
        return np.sqrt(self.jbulk_sq(lam, b, t))

    @classmethod
    def theta(cls, b, t):
        """Flat projector symbol: 1 for b <= t/2, 0 for b >= t, C^1 ramp between."""
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(t > 0, b / np.where(t > 0, t, 1.0), np.inf)
        u = np.clip((s - cls.theta_c) / (1.0 - cls.theta_c), 0.0, 1.0)
        return 1.0 - u * u * (3.0 - 2.0 * u)

    @classmethod
    def theta_dt(cls, b, t):
        b = np.asarray(b, dtype=float)
        t = np.asarray(t, dtype=float)
        tt = np.where(t > 0, t, 1.0)
        s = b / tt
        u = (s - cls.theta_c) / (1.0 - cls.theta_c)
        inside = (u > 0) & (u < 1) & (t > 0)
        du_dt = -b / tt ** 2 / (1.0 - cls.theta_c)
        return np.where(inside, -6.0 * u * (1.0 - u) * du_dt, 0.0)

    @staticmethod
    def kink_times(b):
        b = np.asarray(b, dtype=float)
        return b / 2.0, b


def clock_grid(brackets, T, per_mode=8, extra=()):
    """Time grid on [0, T] whose nodes include, for every bracket value, the
    times where the clock rho(b/t)^2 crosses j/per_mode.  The clock is then
    resolved uniformly for every mode and Gaussian increments are exact."""
    bs = np.unique(np.round(np.asarray(brackets, dtype=float).ravel(), 12))
    nodes = [0.0, float(T)]
    levels = np.arange(1, per_mode) / per_mode
    for b in bs:
        lo, hi = b / 2.0, b
        if lo >= T:
            continue
        # invert rho(b/t)^2 = c by bisection on x = b/t in [1, 2]
        for c in levels:
            a, z = 1.0, 2.0
            for _ in range(60):
                mid = 0.5 * (a + z)
                if bump(mid) ** 2 > c:
                    a = mid
                else:
                    z = mid
            t = b / (0.5 * (a + z))
            if t < T:
                nodes.append(t)
        for t in (lo, hi):
            if 0 < t < T:
                nodes.append(t)
    nodes.extend(t for t in extra if 0 < t < T)
    nodes = np.unique(np.round(np.array(nodes), 13))
    return nodes


# ---------------------------------------------------------------------------
# transverse (T^2) transforms

def fft_size(band, factor=4, minimum=8):
    """Smallest power of two >= factor*band + 1 (alias-free up to quartic products)."""
    need = factor * int(band) + 1
    G = minimum
    while G < need:
        G *= 2
    return G


class TransverseGrid:
    """Maps centred coefficient arrays (..., 2N+1, 2N+1) to G x G grid values."""

    def __init__(self, Nz, G=None):
        self.Nz = int(Nz)
        self.G = fft_size(self.Nz) if G is None else int(G)
        if self.G < 2 * self.Nz + 1:
            raise ValueError("grid too small for the truncation")
        r = np.arange(-self.Nz, self.Nz + 1) % self.G
        self._ix = np.ix_(r, r)

    def embed(self, c):
        c = np.asarray(c)
        out = np.zeros(c.shape[:-2] + (self.G, self.G), dtype=complex)
        out[(Ellipsis,) + self._ix] = c
        return out

    def to_grid(self, c):
        """Real grid values of sum_n c_n e_n(z) at z = j/G."""
        g = np.fft.ifft2(self.embed(c), axes=(-2, -1)) * (self.G * self.G)
        return g.real

    def to_grid_complex(self, c):
        return np.fft.ifft2(self.embed(c), axes=(-2, -1)) * (self.G * self.G)

    def from_grid(self, f):
        """Fourier coefficients (centred box) of grid values."""
        h = np.fft.fft2(f, axes=(-2, -1)) / (self.G * self.G)
        return h[(Ellipsis,) + self._ix]

    def full_from_grid(self, f):
        return np.fft.fft2(f, axes=(-2, -1)) / (self.G * self.G)

    def grid_freqs(self):
        k = np.fft.fftfreq(self.G, d=1.0 / self.G)
        return np.meshgrid(k, k, indexing="ij")


def conj_symmetric_noise(rng, shape):
    """Complex array over a centred box with E|w_n|^2 = 1 and w_{-n} = conj(w_n).

    The centre entry is a real standard normal."""
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape)
    z = (a + 1j * b) / np.sqrt(2.0)
    zf = np.conj(z[..., ::-1, ::-1])
    return (z + zf) / np.sqrt(2.0)


def is_conj_symmetric(c, tol=1e-12):
    c = np.asarray(c)
    return np.max(np.abs(c - np.conj(c[..., ::-1, ::-1]))) <= tol * max(1.0, np.max(np.abs(c)))


# ---------------------------------------------------------------------------
# longitudinal sine basis

def sine_basis(k, tau, L):
    """f_k(tau) = L^{-1/2} sin(pi k (tau + L) / (2L)); returns array (len(tau), len(k))."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    return np.sin(np.pi * np.outer(tau + L, k) / (2.0 * L)) / math.sqrt(L)


def midpoint_nodes(L, K):
    """Cell-centred nodes on [-L, L] and their (equal) weights."""
    h = 2.0 * L / K
    return -L + (np.arange(K) + 0.5) * h, np.full(K, h)


def trapezoid_nodes(a, b, K):
    tau = np.linspace(a, b, K + 1)
    w = np.full(K + 1, (b - a) / K)
    w[0] *= 0.5
    w[-1] *= 0.5
    return tau, w


class BulkGrid:
    """Grid representation of sine-series bulk fields on [-L, L] x T^2.

    Nodes are cell-centred in tau (K of them, K > 2 Ntau so products up to
    quartic order are integrated exactly) and uniform G x G in z."""

    def __init__(self, g, K=None, G=None):
        self.g = g
        self.K = int(K) if K is not None else max(16, 2 * g.Ntau + 2)
        if self.K <= g.Ntau:
            raise ValueError("tau grid must exceed the number of sine modes")
        self.tg = TransverseGrid(g.Nz, G)
        self.G = self.tg.G
        self.tau, self.w = midpoint_nodes(g.L, self.K)
        self.k = np.arange(1, g.Ntau + 1)
        self.S = sine_basis(self.k, self.tau, g.L)          # (K, Ntau)
        self.P = self.S.T * self.w[None, :]                  # projection (Ntau, K)

    def to_grid(self, c):
        """c: (..., Ntau, 2N+1, 2N+1) -> values (..., K, G, G)."""
        zc = self.tg.to_grid(c)                              # (..., Ntau, G, G)
        return np.einsum("jk,...kab->...jab", self.S, zc, optimize=True)

    def from_grid(self, f):
        """Sine/Fourier coefficients of grid values via the quadrature inner product."""
        h = self.tg.from_grid(f)                             # (..., K, 2N+1, 2N+1)
        return np.einsum("kj,...jab->...kab", self.P, h, optimize=True)

    def integrate(self, f):
        """Integral over M of grid values (tau quadrature times z mean)."""
        return np.einsum("j,...j->...", self.w, f.mean(axis=(-2, -1)))
