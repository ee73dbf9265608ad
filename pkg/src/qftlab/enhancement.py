"""Bulk and boundary enhancements, the boundary-bulk objects Upsilon_1..4 and
moment diagnostics.

Bulk model.  W_t = sum_n f_n e_n int_0^t J_s(n) dB_s(n) on the sine/Fourier box
of a Geometry, with J_t(n)^2 = d/dt rho_t(n)^2 / lambda(n).  The clock
S_t(n) = rho_t(n)^2 / lambda(n) is the variance of W_t(n), so Gaussian
increments between grid times are exact.  Grid values live on the cell-centred
BulkGrid; Littlewood-Paley blocks act on the odd extension (period 4L in tau).

Boundary model.  W0_t on the transverse box with variance rho_t^2 / (2<n>) (the
mu0 law at t = T), extended by Hbar = exp(-<n>|tau|) to the slab [-1, 1].

Time integrals of the form int F_t J_t^2 dt are taken as trapezoid sums in the
clock, sum_k (F_k + F_{k+1})/2 (S_{k+1} - S_k).  For a martingale F and a drift
fixed on each step this has the exact expectation of the continuous integral.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .spectral import (BulkGrid, CutoffSchedule, TransverseGrid, clock_grid, conj_symmetric_noise,
                       fft_size, trapezoid_nodes)
from .gaussian import _rho, green_dirichlet, profile_left, profile_right, trace_variance
from .besov import chi, top_level, odd_extension, besov_norm, weighted_sup_norm
from .wick import wick_power, graded_nodes
from .estimates import EstimateReport, rng_for, mean_se


def _check_time_grid(t, b, tol=0.08):
    """Reject time grids on which the clock rho(b/t)^2 is not resolved: the
    midpoint value must match linear interpolation within tol."""
    t = np.asarray(t, float)
    mid = 0.5 * (t[1:] + t[:-1])
    bb = np.unique(np.asarray(b, float).ravel())[:, None]
    c0 = CutoffSchedule.clock(bb, t[None, :-1])
    c1 = CutoffSchedule.clock(bb, t[None, 1:])
    cm = CutoffSchedule.clock(bb, mid[None])
    err = float(np.max(np.abs(cm - 0.5 * (c0 + c1)))) if len(mid) else 0.0
    if err > tol:
        raise ValueError(f"time grid too coarse: clock interpolation error {err:.3g} > {tol}")
    return err


def clock_trapezoid(F, dS):
    """sum_k (F_k + F_{k+1})/2 dS_k for F of shape (..., M+1, ...) aligned with dS (M, ...)."""
    return 0.5 * (F[..., :-1, :, :, :] + F[..., 1:, :, :, :]) * dS


# ---------------------------------------------------------------------------
# Littlewood-Paley blocks on the odd-extended cylinder grid


class CylinderLP:
    """Blocks of grid fields (..., K, G, G) on [-L, L] x T^2 through the odd
    extension to [-2L, 2L); frequencies in cycles per unit length."""

    def __init__(self, K, G, L):
        self.K, self.G, self.L = int(K), int(G), float(L)
        self.shape = (2 * self.K, self.G, self.G)
        k1 = np.fft.fftfreq(2 * self.K, d=1.0 / (2 * self.K)) / (4.0 * L)
        k2 = np.fft.fftfreq(self.G, d=1.0 / self.G)
        k3 = np.fft.rfftfreq(self.G, d=1.0 / self.G)
        a, b, c = np.meshgrid(k1, k2, k3, indexing="ij")
        self.r = np.sqrt(a * a + b * b + c * c)
        self.J = top_level(float(self.r.max()))
        self.levels = list(range(-1, self.J + 1))
        self.chis = [chi(j, self.r) for j in self.levels]

    def blocks(self, f):
        fe = odd_extension(f, axis=-3)
        fh = np.fft.rfftn(fe, axes=(-3, -2, -1))
        return [np.fft.irfftn(fh * c, s=self.shape, axes=(-3, -2, -1))[..., :self.K, :, :]
                for c in self.chis]

    def symbol(self, j, xi):
        return chi(j, xi)

    @staticmethod
    def para(fb, gb, kind):
        """Bony pieces from precomputed blocks: '>' f high, '<' g high, 'o' resonant."""
        if kind == "<":
            return CylinderLP.para(gb, fb, ">")
        n = len(fb)
        out = np.zeros_like(fb[0])
        if kind == ">":
            low = np.zeros_like(gb[0])
            for k in range(n):
                if k >= 2:
                    low = low + gb[k - 2]
                if k >= 2:
                    out = out + fb[k] * low
            return out
        if kind == "o":
            for k in range(n):
                near = gb[k]
                if k > 0:
                    near = near + gb[k - 1]
                if k < n - 1:
                    near = near + gb[k + 1]
                out = out + fb[k] * near
            return out
        raise ValueError("kind must be '<', 'o' or '>'")


# ---------------------------------------------------------------------------
# bulk sine model


class SineModel:
    """Discrete bulk model: sine/Fourier box of `g`, cutoff T, clock time grid.

    Arrays over modes have shape (Ntau, 2N+1, 2N+1); the clock S and the
    symbols J are stored on the time nodes, shape (M+1, Ntau, 2N+1, 2N+1)."""

    def __init__(self, g, T, K=None, G=None, t_grid=None, per_mode=8, check=True):
        self.g, self.T = g, float(T)
        self.grid = BulkGrid(g, K, G)
        self.K, self.G = self.grid.K, self.grid.G
        self.tg = self.grid.tg
        self.b = g.brackets()
        k = np.arange(1, g.Ntau + 1)
        self.lam = (np.pi * k / (2 * g.L))[:, None, None] ** 2 + self.b[None] ** 2
        self.t = clock_grid(self.b, T, per_mode) if t_grid is None else np.asarray(t_grid, float)
        if abs(self.t[-1] - T) > 1e-12 or self.t[0] != 0.0:
            raise ValueError("time grid must run from 0 to T")
        if check:
            _check_time_grid(self.t, self.b)
        t = self.t[:, None, None]
        self.clock = CutoffSchedule.clock(self.b[None], t)                        # (M+1, A, A)
        self.S = self.clock[:, None] / self.lam[None]                             # (M+1, Nt, A, A)
        self.dS = np.diff(self.S, axis=0)
        self.J = np.sqrt(np.maximum(CutoffSchedule.clock_dt(self.b[None], t), 0.0))[:, None] \
            / np.sqrt(self.lam[None])
        self.theta = CutoffSchedule.theta(self.b[None], t)[:, None]               # (M+1, 1, A, A)
        self.theta_dt = CutoffSchedule.theta_dt(self.b[None], t)[:, None]
        self.dt = np.diff(self.t)
        self.tw = np.zeros(len(self.t))                                           # t-trapezoid weights
        self.tw[:-1] += 0.5 * self.dt
        self.tw[1:] += 0.5 * self.dt
        self.lp = CylinderLP(self.K, self.G, g.L)
        Sb = self.grid.S                                                          # (K, Nt)
        xi1 = k / (4.0 * g.L)
        n2, n3 = g.modes()
        self.xi = np.sqrt(xi1[:, None, None] ** 2 + (n2 * n2 + n3 * n3)[None].astype(float))
        self._cache = {}

    @property
    def M(self):
        return len(self.t) - 1

    @property
    def shape(self):
        return self.lam.shape

    def kernel_modes(self, k=-1):
        """C_t(tau, tau') per transverse mode at time node k, (K, K, A, A)."""
        Sb = self.grid.S
        return np.einsum("in,jn,nab->ijab", Sb, Sb, self.S[k], optimize=True)

    def variance(self, k=-1):
        """Wick constant c_t(tau) = Var W_t(tau, z) at node k, (K,)."""
        return np.einsum("in,nab->i", self.grid.S ** 2, self.S[k])

    def kernel_grid(self, k=-1):
        """C_t(tau, tau', z - z') on the transverse grid, (K, K, G, G)."""
        return self.tg.to_grid(self.kernel_modes(k).astype(complex))

    def power_modes(self, p, k=-1):
        """Fourier coefficients of C_t(tau, tau', .)^p over the full G x G grid."""
        key = ("pow", p, k)
        if key not in self._cache:
            self._cache[key] = np.fft.fft2(self.kernel_grid(k) ** p, axes=(-2, -1)).real / self.G ** 2
        return self._cache[key]

    def gamma_M(self, k=-1):
        """gamma^M_t(tau) = -48 int C_t(x, y)^3 dy on the grid, (K,)."""
        return -48.0 * self.power_modes(3, k)[..., 0, 0] @ self.grid.w

    # -- sampling
    def sample_path(self, seed, size, stream=0):
        """W coefficients at all time nodes, (size, M+1, Nt, A, A).  The noise of
        interval k comes from its own stream, so a prefix grid gives a prefix path."""
        out = np.zeros((size, self.M + 1) + self.shape, dtype=complex)
        acc = np.zeros((size,) + self.shape, dtype=complex)
        for k in range(self.M):
            rng = rng_for(seed, 101, stream, k)
            acc = acc + np.sqrt(self.dS[k]) * conj_symmetric_noise(rng, (size,) + self.shape)
            out[:, k + 1] = acc
        return out

    def sample_final(self, seed, size, stream=0):
        """W_T coefficients drawn directly, (size, Nt, A, A)."""
        rng = rng_for(seed, 103, stream)
        return np.sqrt(self.S[-1]) * conj_symmetric_noise(rng, (size,) + self.shape)

    def to_grid(self, c):
        return self.grid.to_grid(c)

    def from_grid(self, f):
        return self.grid.from_grid(f)

    def integrate(self, f):
        return self.grid.integrate(f)

    def inner(self, a, b):
        """<a, b> of real fields from coefficients."""
        return np.real(np.sum(a * np.conj(b), axis=(-3, -2, -1)))

    # -- exact resonant counterterm
    def resonant_matrix(self):
        key = "res"
        if key not in self._cache:
            lv = self.lp.levels
            X = np.stack([chi(j, self.xi) for j in lv])                           # (nl, Nt, A, A)
            R = np.zeros(self.shape[:1] * 2 + self.shape[1:])
            for i in range(len(lv)):
                for j in range(len(lv)):
                    if abs(i - j) <= 1:
                        R += X[i][:, None] * X[j][None, :]
            self._cache[key] = R                                                  # (Nt, Nt, A, A)
        return self._cache[key]

    def gamma_dot(self, k):
        """-1/2 E[(J_t W2_t o J_t W2_t)(tau)] with W2 = 12 [[W_t^2]], exact in the model."""
        N = self.g.Nz
        C2 = self.power_modes(2, k)                                               # (K, K, G, G)
        idx = np.arange(-N, N + 1) % self.G
        C2 = C2[:, :, idx][:, :, :, idx]                                          # (K, K, A, A)
        w = self.grid.w
        P = self.grid.P                                                           # (Nt, K)
        Mcov = 288.0 * np.einsum("ni,ijab,mj->nmab", P, C2, P, optimize=True)     # (Nt, Nt, A, A)
        Jk = self.J[k]
        Mcov = Mcov * Jk[:, None] * Jk[None, :] * self.resonant_matrix()
        Sb = self.grid.S
        return -0.5 * np.einsum("in,nmab,im->i", Sb, Mcov, Sb, optimize=True)

    def gamma_dot_all(self):
        return np.stack([self.gamma_dot(k) for k in range(self.M + 1)])


@dataclass
class BulkEnhancement:
    """Stochastic objects of one bulk sample batch (grid values on M)."""
    T: float
    W: np.ndarray
    wick2: np.ndarray
    W3int: np.ndarray
    W1o3: np.ndarray
    W2o2: np.ndarray
    W2o3: np.ndarray
    W2o2_bare: np.ndarray = None
    seed: int = None

    def norms(self, kappa=0.1, L=1.0):
        per = (4.0 * L, 1.0, 1.0)
        def nrm(f, s):
            return besov_norm(odd_extension(f, axis=-3), s, periods=per, ndim=3)
        return {"W": nrm(self.W, -0.5 - kappa), "wick2": nrm(self.wick2, -1 - kappa),
                "W3int": nrm(self.W3int, 0.5 - kappa), "W1o3": nrm(self.W1o3, -kappa),
                "W2o2": nrm(self.W2o2, -kappa), "W2o3": nrm(self.W2o3, -0.5 - kappa)}


def build_bulk_enhancement(seed, T, g, n=1, t_grid=None, K=None, G=None, model=None):
    """Simulate W on the clock grid and assemble the bulk enhancement.

    W2o2 is the t-integral of (J W2 o J W2 + 2 gamma-dot); W2o2_bare omits the
    counterterm."""
    m = SineModel(g, T, K, G, t_grid) if model is None else model
    path = m.sample_path(seed, n)
    lp = m.lp
    W3int = np.zeros((n,) + m.shape, dtype=complex)
    W2o2 = np.zeros((n, m.K, m.G, m.G))
    bare = np.zeros_like(W2o2)
    prev = None
    for k in range(m.M + 1):
        c = m.variance(k)[:, None, None]
        Wg = m.to_grid(path[:, k])
        w3 = m.from_grid(4.0 * wick_power(Wg, c, 3))
        if prev is not None:
            W3int += 0.5 * (prev + w3) * m.dS[k - 1]
        prev = w3
        if m.tw[k] > 0 and np.any(m.J[k] > 0):
            a = m.to_grid(m.J[k] * m.from_grid(12.0 * wick_power(Wg, c, 2)))
            ab = lp.blocks(a)
            res = CylinderLP.para(ab, ab, "o")
            gd = m.gamma_dot(k)[:, None, None]
            W2o2 += m.tw[k] * (res + 2.0 * gd)
            bare += m.tw[k] * res
    cT = m.variance()[:, None, None]
    WT = m.to_grid(path[:, -1])
    w2 = wick_power(WT, cT, 2)
    W3g = m.to_grid(W3int)
    Wb, W3b = lp.blocks(WT), lp.blocks(W3g)
    gM = m.gamma_M()[:, None, None]
    W2o3 = CylinderLP.para(lp.blocks(12.0 * w2), W3b, "o") + 2.0 * gM * WT
    return BulkEnhancement(T=float(T), W=WT, wick2=w2, W3int=W3g, W1o3=CylinderLP.para(Wb, W3b, "o"),
                           W2o2=W2o2, W2o3=W2o3, W2o2_bare=bare, seed=seed)


def upsilon1(model, path, zflat_coeffs, K_coeffs=None):
    """Upsilon_1 for deterministic Z-flat (coefficients per time node, (M+1, Nt, A, A))
    and K at T: -int int (1/2 J W2 o J W2 + gamma-dot)(Zflat)^2 dt - int (W2 o W3int + 2 gamma^M W) K."""
    m = model
    n = len(path)
    out = np.zeros(n)
    W3int = np.zeros((n,) + m.shape, dtype=complex)
    prev = None
    for k in range(m.M + 1):
        c = m.variance(k)[:, None, None]
        Wg = m.to_grid(path[:, k])
        w3 = m.from_grid(4.0 * wick_power(Wg, c, 3))
        if prev is not None:
            W3int += 0.5 * (prev + w3) * m.dS[k - 1]
        prev = w3
        if m.tw[k] > 0 and np.any(m.J[k] > 0):
            a = m.to_grid(m.J[k] * m.from_grid(12.0 * wick_power(Wg, c, 2)))
            ab = m.lp.blocks(a)
            res = CylinderLP.para(ab, ab, "o")
            z2 = m.to_grid(zflat_coeffs[k]) ** 2
            out -= m.tw[k] * m.integrate((0.5 * res + m.gamma_dot(k)[:, None, None]) * z2)
    if K_coeffs is not None:
        cT = m.variance()[:, None, None]
        WT = m.to_grid(path[:, -1])
        w2 = 12.0 * wick_power(WT, cT, 2)
        W3g = m.to_grid(W3int)
        res = CylinderLP.para(m.lp.blocks(w2), m.lp.blocks(W3g), "o")
        out -= m.integrate((res + 2.0 * m.gamma_M()[:, None, None] * WT) * m.to_grid(K_coeffs))
    return out


# ---------------------------------------------------------------------------
# boundary data on the bulk grid and Upsilon_2..4


class HarmonicData:
    """H(phi_-, phi_+) of mollified data on a tau node set.

    `s` is the variance of H under mu~0 x mu~0 (rough ends) and `c` the Wick
    constant used for [[H^k]]: c = s with wick=True, c = 0 (ordinary powers,
    the deterministic-data convention) with wick=False."""

    def __init__(self, g, T, tau, tg, phim=None, phip=None, rough=(True, True), wick=True):
        self.g, self.T = g, T
        w = g.brackets()
        rho = _rho(g, T)
        A = w.shape
        phim = np.zeros(A, complex) if phim is None else np.asarray(phim, complex)
        phip = np.zeros(A, complex) if phip is None else np.asarray(phip, complex)
        t = np.asarray(tau, float)[:, None, None]
        self.pl = profile_left(t, w[None], -g.L, g.L)
        self.pr = profile_right(t, w[None], -g.L, g.L)
        self.coeffs = self.pl * (rho * phim)[None] + self.pr * (rho * phip)[None]   # (nt, A, A)
        self.s_modes = trace_variance(w, g.L) * rho ** 2
        self.rough = rough
        self.s = np.sum((self.pl ** 2 * rough[0] + self.pr ** 2 * rough[1]) * self.s_modes, axis=(-2, -1))
        self.c = self.s if wick else np.zeros_like(self.s)
        self.tg = tg
        self.grid = tg.to_grid(self.coeffs)                                          # (nt, G, G)

    def kernel_modes(self):
        s = self.s_modes
        return (np.einsum("iab,jab->ijab", self.pl, self.pl) * s * self.rough[0]
                + np.einsum("iab,jab->ijab", self.pr, self.pr) * s * self.rough[1])

    def wick(self, k):
        return wick_power(self.grid, self.c[:, None, None], k)


def _double_form(Cp_modes, F, Gf, w):
    """sum_{tau,tau'} w w mean_{z,z'} Cp(tau,tau',z-z') F(tau,z) G(tau',z')
    with Cp given by its full-grid Fourier coefficients (K, K, G, G)."""
    Gs = F.shape[-1]
    Fh = np.fft.fft2(F, axes=(-2, -1)) / Gs ** 2
    Gh = np.fft.fft2(Gf, axes=(-2, -1)) / Gs ** 2
    return float(np.real(np.einsum("i,j,ijab,iab,jab->", w, w, Cp_modes, Fh, np.conj(Gh), optimize=True)))


def _kernel_pair_mean(Cg, p, Kg, q, w):
    """sum w w mean_d C^p K^q over grid kernels (K, K, G, G)."""
    return float(np.einsum("i,j,ij->", w, w, np.mean(Cg ** p * Kg ** q, axis=(-2, -1))))


class UpsilonConstants:
    """Upsilon_2..4 and their counterterms on a kernel model exposing
    kernel_grid(), grid (tau nodes, weights), tg and gamma_M().

      Upsilon_2 = -48 int int C^3 H H - int gamma^M [[H^2]] - delta3
      Upsilon_3 = -36 int int C^2 [[H^2]] [[H^2]] - delta4
      Upsilon_4 = -8 int int C [[H^3]] [[H^3]] - delta5

    and each delta is the mu~0 x mu~0 mean of the preceding terms, so with
    Wick-ordered data (d = s - c = 0)
      delta3 = -48 int int C^3 K,  delta4 = -72 int int C^2 K^2,  delta5 = -48 int int C K^3,
    K the covariance of H.  With wick=False the means pick up the diagonal d = s."""

    def __init__(self, model, rough=(True, True), wick=True):
        self.m = model
        g, T = model.g, model.T
        self.rough, self.wick_data = rough, wick
        tau, w = model.grid.tau, model.grid.w
        self.tau, self.w = tau, w
        hd = self.data()
        self.Kg = model.tg.to_grid(hd.kernel_modes().astype(complex))
        self.Cg = model.kernel_grid()
        self.gM = model.gamma_M()
        d = hd.s - hd.c
        dd = d[:, None, None, None] * d[None, :, None, None]
        C, Kg = self.Cg, self.Kg

        def pm(F):
            return float(np.einsum("i,j,ij->", w, w, np.mean(F, axis=(-2, -1))))
        self.delta3 = -48.0 * pm(C ** 3 * Kg) - float(w @ (self.gM * d))
        self.delta4 = -36.0 * pm(C ** 2 * (2.0 * Kg ** 2 + dd))
        self.delta5 = -8.0 * pm(C * (6.0 * Kg ** 3 + 9.0 * dd * Kg))
        self.C3 = np.fft.fft2(C ** 3, axes=(-2, -1)).real / model.G ** 2
        self.C2 = np.fft.fft2(C ** 2, axes=(-2, -1)).real / model.G ** 2
        self.C1 = np.fft.fft2(C, axes=(-2, -1)).real / model.G ** 2

    def data(self, phim=None, phip=None):
        return HarmonicData(self.m.g, self.m.T, self.tau, self.m.tg, phim, phip, self.rough, self.wick_data)

    def upsilon2(self, phim=None, phip=None):
        h = self.data(phim, phip)
        a = -48.0 * _double_form(self.C3, h.grid, h.grid, self.w)
        b = -float(self.w @ (self.gM * np.mean(h.wick(2), axis=(-2, -1))))
        return a + b - self.delta3

    def upsilon3(self, phim=None, phip=None):
        h = self.data(phim, phip)
        q = h.wick(2)
        return -36.0 * _double_form(self.C2, q, q, self.w) - self.delta4

    def upsilon4(self, phim=None, phip=None):
        h = self.data(phim, phip)
        q = h.wick(3)
        return -8.0 * _double_form(self.C1, q, q, self.w) - self.delta5

    def upsilon(self, which, phim=None, phip=None):
        return {2: self.upsilon2, 3: self.upsilon3, 4: self.upsilon4}[which](phim, phip)

    def raw(self, which, phim=None, phip=None):
        """Upsilon_i without its counterterm (the divergence witness)."""
        d = {2: self.delta3, 3: self.delta4, 4: self.delta5}[which]
        return self.upsilon(which, phim, phip) + d

    def deltas(self):
        return {"delta3": self.delta3, "delta4": self.delta4, "delta5": self.delta5}


class GreenKernelModel:
    """Exact Dirichlet kernel C^M_T on trapezoid tau nodes (no sine truncation),
    with the interface used by UpsilonConstants."""

    def __init__(self, g, T, K=None, G=None):
        self.g, self.T = g, float(T)
        if K is None:
            K = int(2 ** math.ceil(math.log2(max(64, 16 * min(T, 2 * float(g.brackets().max())) * g.L))))
        tau, w = trapezoid_nodes(-g.L, g.L, K)
        self.grid = _Nodes(tau, w)
        self.tg = TransverseGrid(g.Nz, G)
        self.G = self.tg.G
        self.rho = _rho(g, T)
        self._Cg = None

    def kernel_modes(self):
        w = self.g.brackets()
        t = self.grid.tau
        return green_dirichlet(t[:, None, None, None], t[None, :, None, None], w[None, None],
                               -self.g.L, self.g.L) * self.rho ** 2

    def kernel_grid(self):
        if self._Cg is None:
            self._Cg = self.tg.to_grid(self.kernel_modes().astype(complex))
        return self._Cg

    def gamma_M(self):
        return -48.0 * np.mean(self.kernel_grid() ** 3, axis=(-2, -1)) @ self.grid.w


@dataclass
class _Nodes:
    tau: np.ndarray
    w: np.ndarray


# ---------------------------------------------------------------------------
# boundary enhancement


class BoundaryModel:
    """W0_t on the transverse box (variance clock/(2<n>)) and its extension
    Hbar W0 to the slab [-1, 1], sampled at symmetric Gauss-Legendre tau nodes
    on [0, 1] (weights doubled)."""

    def __init__(self, g, T, t_grid=None, per_mode=8, order=8, h0=None, check=True, coupling=1.0):
        self.g, self.T = g, float(T)
        self.w = g.brackets()
        self.rho = _rho(g, T)
        self.t = clock_grid(self.w, T, per_mode) if t_grid is None else np.asarray(t_grid, float)
        if check:
            _check_time_grid(self.t, self.w)
        t = self.t[:, None, None]
        self.clock = CutoffSchedule.clock(self.w[None], t)
        self.S = self.clock / (2 * self.w[None])                                  # (M+1, A, A)
        self.dS = np.diff(self.S, axis=0)
        if h0 is None:
            h0 = 1.0 / (8.0 * max(min(T, 2 * float(self.w.max())), 1.0))
        tq, wq = graded_nodes(0.0, 1.0, [0.0, 1.0], h0, order)
        self.tq, self.wq = tq, 2.0 * wq
        self.prof = np.exp(-self.w[None] * tq[:, None, None])                   # (Q, A, A)
        self.tg = TransverseGrid(g.Nz)
        self.G = self.tg.G
        self.coupling = float(coupling)

    @property
    def M(self):
        return len(self.t) - 1

    def cbar(self, k=-1):
        """Wick constant sum prof^2 S_t, per tau node, (Q,)."""
        return np.sum(self.prof ** 2 * self.S[k][None], axis=(-2, -1))

    def sample_path(self, seed, size, stream=0):
        out = np.zeros((size, self.M + 1) + self.w.shape, dtype=complex)
        acc = np.zeros((size,) + self.w.shape, dtype=complex)
        for k in range(self.M):
            rng = rng_for(seed, 201, stream, k)
            acc = acc + np.sqrt(self.dS[k]) * conj_symmetric_noise(rng, (size,) + self.w.shape)
            out[:, k + 1] = acc
        return out

    def sample_final(self, seed, size, stream=0):
        rng = rng_for(seed, 203, stream)
        return np.sqrt(self.S[-1]) * conj_symmetric_noise(rng, (size,) + self.w.shape)

    def extend(self, c):
        """Hbar c on the tau nodes, grid values (..., Q, G, G)."""
        return self.tg.to_grid(self.prof * np.asarray(c)[..., None, :, :])

    def adjoint(self, F):
        """Hbar* F: T^2 coefficients of int_{-1}^{1} exp(-<n>|tau|) F(tau) dtau."""
        Fh = self.tg.from_grid(F)                                                 # (..., Q, A, A)
        return np.einsum("q,qab,...qab->...ab", self.wq, self.prof, Fh)

    def integrate(self, F):
        return np.mean(F, axis=(-2, -1)) @ self.wq

    def wick_powers(self, c, k=-1):
        """Xi0 = (X, [[X^2]], [[X^3]]) for X = Hbar c at time node k."""
        X = self.extend(c)
        cb = self.cbar(k)[:, None, None]
        return X, wick_power(X, cb, 2), wick_power(X, cb, 3)


@dataclass
class BoundaryEnhancement:
    T: float
    tau: np.ndarray
    X: np.ndarray
    X2: np.ndarray
    X3: np.ndarray

    def norms(self, alpha=0.5, kappa=0.1, p=np.inf):
        s = -0.5 - kappa
        return [np.array([weighted_sup_norm(F[i], self.tau, alpha, s, p) for i in range(len(F))])
                for F in (self.X, self.X2, self.X3)]


def build_boundary_enhancement(seed, T, g, n=1, model=None, order=8):
    m = BoundaryModel(g, T, t_grid=[0.0, float(T)], check=False, order=order) if model is None else model
    c = m.sample_final(seed, n)
    X, X2, X3 = m.wick_powers(c)
    return BoundaryEnhancement(T=float(T), tau=m.tq, X=X, X2=X2, X3=X3)


def wick_mode_second_moment(m, k, n):
    """Closed-form E|<[[X^k]](tau), e_n>|^2 at T on the slab nodes: k! times the
    k-fold transverse convolution of the per-mode variances prof^2 S_T."""
    v = m.prof ** 2 * m.S[-1][None]                                             # (Q, A, A)
    Gs = fft_size(k * m.g.Nz, factor=1, minimum=2 * k * m.g.Nz + 1)
    tg = TransverseGrid(m.g.Nz, Gs)
    vg = tg.to_grid(v.astype(complex))
    conv = tg.from_grid(vg ** k)
    return math.factorial(k) * np.real(conv)


# ---------------------------------------------------------------------------
# moment diagnostics


def moment_diagnostics(obj, T_grid, g, n_mc, seed, p=2, alpha=0.5, kappa=0.1, band=0.2, which=1,
                       order=8, nodes=None):
    """p-th moments of a designated norm per T with a max/min uniformity verdict.

    obj: 'boundary-wick' (weighted sup of the C^{-which/2-kappa} norm of [[X^which]]
         with weight |tau|^alpha),
         'bulk-wick2' (C^{-1-kappa} norm of [[W_T^2]]), 'bulk-square' (same norm
         of the un-renormalized W_T^2), 'upsilon4' (Upsilon_4 under mu0 x mu0),
         'upsilon4-raw' (without its counterterm)."""
    if p not in (1, 2, 4):
        raise ValueError("p must be 1, 2 or 4")
    vals, ses = [], []
    for T in T_grid:
        if obj == "boundary-wick":
            m = BoundaryModel(g, T, t_grid=[0.0, float(T)], check=False, order=order)
            c = m.sample_final(seed, n_mc)
            X = m.extend(c)
            F = wick_power(X, m.cbar()[:, None, None], which)
            s = -0.5 * which - kappa
            x = np.array([weighted_sup_norm(F[i], m.tq, alpha, s) for i in range(n_mc)])
        elif obj in ("bulk-wick2", "bulk-square"):
            m = SineModel(g, T, t_grid=[0.0, float(T)], check=False)
            WT = m.to_grid(m.sample_final(seed, n_mc))
            c = m.variance()[:, None, None]
            F = WT * WT - (c if obj == "bulk-wick2" else 0.0)
            x = besov_norm(odd_extension(F, axis=-3), -1 - kappa, periods=(4 * g.L, 1.0, 1.0), ndim=3)
        elif obj in ("upsilon4", "upsilon4-raw"):
            km = GreenKernelModel(g, T, K=nodes)
            up = UpsilonConstants(km)
            rng = rng_for(seed, 301)
            var = 1.0 / (2 * g.brackets())
            x = []
            for _ in range(n_mc):
                a = np.sqrt(var) * conj_symmetric_noise(rng, var.shape)
                b = np.sqrt(var) * conj_symmetric_noise(rng, var.shape)
                x.append(up.upsilon4(a, b) if obj == "upsilon4" else up.raw(4, a, b))
            x = np.asarray(x)
        else:
            raise ValueError(f"unknown object {obj!r}")
        mom, se = mean_se(np.abs(x) ** p)
        vals.append(float(mom))
        ses.append(float(se))
    v = np.asarray(vals)
    ratio = float(v.max() / v.min()) if v.min() > 0 else float("inf")
    return EstimateReport(f"moments:{obj}", value=float(v.mean()), n_samples=n_mc, seed=seed,
                          observed=ratio - 1.0, tolerance=band, passed=bool(ratio - 1.0 <= band),
                          extra={"T": list(map(float, T_grid)), "moments": vals, "stderr": ses, "p": p,
                                 "alpha": alpha, "ratio_last_first": float(v[-1] / v[0])})
