"""Wick powers and renormalization constants.

Kernel integrals are evaluated with the transverse-mode representation: for
fixed (tau_x, tau_y) each kernel is a real, even array over the mode box, the
z-integral of a product of kernels is the grid mean of their (alias-free)
inverse FFTs, and the tau integrals use Gauss-Legendre panels graded
geometrically towards the diagonal and the ends, where kernels vary on the
scale 1/T.
"""
from dataclasses import dataclass, field, asdict
from itertools import combinations
from math import comb, factorial
import math

import numpy as np

from .spectral import CutoffSchedule, TransverseGrid
from .gaussian import (green_dirichlet, green_periodic, green_line, profile_left, profile_right,
                       poisson_profile, cut_profile, trace_variance, _rho)
from .estimates import linear_fit

# ---------------------------------------------------------------------------
# Wick polynomials


def wick_power(v, c, k):
    """Hermite-type Wick power of order k <= 4 with variance c (pointwise)."""
    v = np.asarray(v, dtype=float)
    if k == 0:
        return np.ones_like(v + c)
    if k == 1:
        return v + 0.0 * c
    if k == 2:
        return v * v - c
    if k == 3:
        return v ** 3 - 3.0 * c * v
    if k == 4:
        return v ** 4 - 6.0 * c * v * v + 3.0 * c * c
    raise ValueError("Wick powers are implemented up to order 4")


def wick_mixed(w, z, c, k):
    """Sum_j binom(k, j) [[w^j]]_c z^(k-j): Wick ordering applied to the w-part only."""
    if k > 4:
        raise ValueError("Wick powers are implemented up to order 4")
    return sum(comb(k, j) * wick_power(w, c, j) * np.asarray(z, dtype=float) ** (k - j)
               for j in range(k + 1))


def wick_binomial(a, b, ca, cb, k):
    """Sum_j binom(k, j) [[a^j]]_ca [[b^(k-j)]]_cb, which equals [[(a+b)^k]]_(ca+cb)."""
    return sum(comb(k, j) * wick_power(a, ca, j) * wick_power(b, cb, k - j) for j in range(k + 1))


def hermite_coefficients(k, c):
    """Coefficients a_j with [[v^k]]_c = sum_j a_j v^j."""
    out = np.zeros(k + 1)
    for m in range(k // 2 + 1):
        out[k - 2 * m] = (-1) ** m * factorial(k) / (factorial(m) * factorial(k - 2 * m) * 2 ** m) * c ** m
    return out


def perfect_matchings(items):
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for m in perfect_matchings(rest):
            yield [(first, items[i])] + m


def isserlis_moment(cov, labels):
    """E[prod_i X_{labels_i}] for a centred Gaussian vector, by enumerating pairings."""
    if len(labels) % 2:
        return 0.0
    total = 0.0
    for m in perfect_matchings(list(range(len(labels)))):
        p = 1.0
        for i, j in m:
            p *= cov[labels[i], labels[j]]
        total += p
    return total


def wick_pair_oracle(cxx, cxy, cyy, k, j=None):
    """E[[[phi(x)^k]] [[phi(y)^j]]] by expanding the Hermite polynomials into
    monomials and summing Wick pairings (brute force)."""
    j = k if j is None else j
    cov = np.array([[cxx, cxy], [cxy, cyy]], dtype=float)
    ax = hermite_coefficients(k, cxx)
    ay = hermite_coefficients(j, cyy)
    tot = 0.0
    for p in range(k + 1):
        for q in range(j + 1):
            if ax[p] == 0 or ay[q] == 0:
                continue
            tot += ax[p] * ay[q] * isserlis_moment(cov, [0] * p + [1] * q)
    return tot


# ---------------------------------------------------------------------------
# per-mode kernels (callables (tx, ty) -> (P, 2N+1, 2N+1), rho^2 included)


def kernel_dirichlet(g, T, a=None, b=None, mask=None):
    a = -g.L if a is None else a
    b = g.L if b is None else b
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)

    def k(tx, ty):
        tx = np.asarray(tx, float)[:, None, None]
        ty = np.asarray(ty, float)[:, None, None]
        inside = ((tx >= a) & (tx <= b) & (ty >= a) & (ty <= b))
        return np.where(inside, green_dirichlet(tx, ty, w[None], a, b), 0.0) * r2
    return k


def kernel_periodic(g, T, P=None, mask=None):
    P = 2 * g.L if P is None else P
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)

    def k(tx, ty):
        d = (np.asarray(tx, float) - np.asarray(ty, float))[:, None, None]
        return green_periodic(d, w[None], P) * r2
    return k


def kernel_line(g, T, mask=None):
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)

    def k(tx, ty):
        d = (np.asarray(tx, float) - np.asarray(ty, float))[:, None, None]
        return green_line(d, w[None]) * r2
    return k


def kernel_cut(g, T, mask=None):
    """C^B: covariance of the extension of the mu~0 trace on {0} into [-L, L]."""
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)
    v = trace_variance(w, g.L)

    def k(tx, ty):
        tx = np.asarray(tx, float)[:, None, None]
        ty = np.asarray(ty, float)[:, None, None]
        return cut_profile(tx, w[None], g.L) * cut_profile(ty, w[None], g.L) * v * r2
    return k


def kernel_poisson(g, T, mask=None):
    """C-bar^B: infinite-cylinder extension of the mu0 trace on {0}."""
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)

    def k(tx, ty):
        tx = np.asarray(tx, float)[:, None, None]
        ty = np.asarray(ty, float)[:, None, None]
        return poisson_profile(tx, w[None]) * poisson_profile(ty, w[None]) / (2 * w) * r2
    return k


def end_variance(kind, g):
    """Per-mode variance of boundary data of the given kind (without rho^2)."""
    w = g.brackets()
    if kind in (None, "det", "deterministic"):
        return np.zeros_like(w)
    if kind in ("mu0", "rough", "boundary-infinite"):
        return 1.0 / (2 * w)
    if kind in ("mu~0", "dtn", "boundary-dtn"):
        return trace_variance(w, g.L)
    raise ValueError(f"unknown boundary data kind {kind!r}")


def kernel_extension(g, T, left="dtn", right="dtn", a=None, b=None, mask=None):
    """Covariance of H(phi_-, phi_+) on [a, b] for independent end data of the given kinds."""
    a = -g.L if a is None else a
    b = g.L if b is None else b
    w = g.brackets()
    r2 = _rho(g, T) ** 2 * (1.0 if mask is None else mask)
    vl = end_variance(left, g)
    vr = end_variance(right, g)

    def k(tx, ty):
        tx = np.asarray(tx, float)[:, None, None]
        ty = np.asarray(ty, float)[:, None, None]
        pl = profile_left(tx, w[None], a, b) * profile_left(ty, w[None], a, b)
        pr = profile_right(tx, w[None], a, b) * profile_right(ty, w[None], a, b)
        return (vl * pl + vr * pr) * r2
    return k


# ---------------------------------------------------------------------------
# quadrature engine


def gl_panels(breaks, order=8):
    x, w = np.polynomial.legendre.leggauss(order)
    breaks = np.asarray(breaks, float)
    lo, hi = breaks[:-1], breaks[1:]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = (mid[:, None] + half[:, None] * x[None]).ravel()
    weights = (half[:, None] * w[None]).ravel()
    return nodes, weights


def graded_breaks(a, b, points, h0, ratio=2.0):
    """Panel breakpoints on [a, b] refined geometrically around each point."""
    br = {a, b}
    for p in points:
        if p < a - 1e-15 or p > b + 1e-15:
            continue
        br.add(min(max(p, a), b))
        h = h0
        while h < (b - a):
            for q in (p - h, p + h):
                if a < q < b:
                    br.add(q)
            h *= ratio
    br = np.array(sorted(br))
    keep = np.concatenate([[True], np.diff(br) > 1e-13 * max(1.0, b - a)])
    return br[keep]


def graded_nodes(a, b, points, h0, order=8):
    return gl_panels(graded_breaks(a, b, points, h0), order)


def z_product_mean(factors, Nz):
    """mean over T^2 of prod_i (kernel_i)^(p_i); factors = [(mode array (P,A,A), p_i)]."""
    deg = sum(p for _, p in factors)
    G = max(8, deg * Nz + 1)
    G += G % 2
    tg = TransverseGrid(Nz, G)
    out = None
    for arr, p in factors:
        v = tg.to_grid(arr) ** p
        out = v if out is None else out * v
    return out.mean(axis=(-2, -1))


def _scale(T, g):
    Teff = min(T, 2 * float(np.max(g.brackets()))) if T is not None else 2 * float(np.max(g.brackets()))
    return 1.0 / (8.0 * max(Teff, 1.0))


def double_integral(factor_kernels, g, T, a, b, c=None, d=None, order=6, diagonal=True,
                    points_x=(), points_y=(), chunk=4096):
    """int_a^b int_c^d mean_z prod_i K_i(tx, ty)^(p_i) dty dtx.

    factor_kernels = [(callable, power)].  The inner rule is graded towards
    ty = tx (when `diagonal`) and towards the interval ends."""
    c = a if c is None else c
    d = b if d is None else d
    h0 = _scale(T, g)
    xs, xw = graded_nodes(a, b, [a, b, *points_x], h0, order)
    TX, TY, WW = [], [], []
    for x, wx in zip(xs, xw):
        pts = [c, d, *points_y] + ([x] if diagonal else [])
        ys, yw = graded_nodes(c, d, pts, h0, order)
        TX.append(np.full(len(ys), x))
        TY.append(ys)
        WW.append(wx * yw)
    TX = np.concatenate(TX)
    TY = np.concatenate(TY)
    WW = np.concatenate(WW)
    total = 0.0
    for s in range(0, len(TX), chunk):
        sl = slice(s, s + chunk)
        facs = [(k(TX[sl], TY[sl]), p) for k, p in factor_kernels]
        total += float(np.dot(WW[sl], z_product_mean(facs, g.Nz)))
    return total


def single_integral_profile(factor_kernels, g, T, taus, a, b, order=8, chunk=4096):
    """For each tau_x: int_a^b mean_z prod K_i(tau_x, ty)^(p_i) dty."""
    h0 = _scale(T, g)
    out = np.zeros(len(taus))
    for i, x in enumerate(np.atleast_1d(taus)):
        ys, yw = graded_nodes(a, b, [a, b, x], h0, order)
        facs = [(k(np.full(len(ys), x), ys), p) for k, p in factor_kernels]
        out[i] = float(np.dot(yw, z_product_mean(facs, g.Nz)))
    return out


# ---------------------------------------------------------------------------
# renormalization constants


def gamma_T(g, T, P=None, mask=None):
    """Mass counterterm -48 int C^per(x, y)^3 dy on the P-periodic cylinder (a constant)."""
    P = 2 * g.L if P is None else P
    k = kernel_periodic(g, T, P, mask)
    return -48.0 * single_integral_profile([(k, 3)], g, T, [0.0], -P / 2, P / 2)[0]


def gamma_M_profile(g, T, taus, mask=None):
    """gamma^M_T(tau) = -48 int_M C^M(x, y)^3 dy for x at height tau."""
    k = kernel_dirichlet(g, T, mask=mask)
    return -48.0 * single_integral_profile([(k, 3)], g, T, taus, -g.L, g.L)


def triangle_per_volume(g, T, P, K=None, mask=None):
    """int int C^per(x,y)^2 C^per(x,u)^2 C^per(y,u)^2 dy du per unit volume in x,
    on the P-periodic cylinder (uniform tau grid, transverse FFT)."""
    Tm = 2 * float(np.max(g.brackets())) if T is None else T
    if K is None:
        K = int(2 ** math.ceil(math.log2(max(256, 16 * Tm * P))))
    h = P / K
    tau = np.arange(K) * h
    ker = kernel_periodic(g, T, P, mask)
    C = ker(tau, np.zeros(K))                                   # (K, A, A) modes of C(tau, .)
    G = 4 * g.Nz + 2
    tg = TransverseGrid(g.Nz, G)
    A2 = np.fft.fft2(tg.to_grid(C) ** 2, axes=(-2, -1)) / G ** 2   # Fourier modes of C^2, band 2N
    A2 = A2.real
    # per transverse mode n: sum_{i,j} a(i) a(j) a(j - i) h^2 via circular correlation in tau
    F = np.fft.fft(A2, axis=0)
    corr = np.fft.ifft(np.conj(F) * F, axis=0).real               # sum_i a(i) a(i+d)
    val = np.sum(corr * A2) * h * h
    return float(val)


def delta_sigma(g, T, a=None, b=None, mask=None, K=None):
    """Bulk energy counterterm on [a, b]: -12 int int C^4 + 288 |I| (periodic triangle term)."""
    a = -g.L if a is None else a
    b = g.L if b is None else b
    k = kernel_dirichlet(g, T, a, b, mask)
    first = -12.0 * double_integral([(k, 4)], g, T, a, b)
    second = 288.0 * (b - a) * triangle_per_volume(g, T, b - a, K, mask)
    return {"quartic": first, "triangle": second, "total": first + second}


def delta_sigma_boundary(g, T, left=None, right=None, a=None, b=None, mask=None):
    """-12 int int sum_{p=1..3} binom(4,p) C^(4-p) K^p with K the covariance of the
    extension of the rough (mu0-distributed) end data; zero without rough ends."""
    a = -g.L if a is None else a
    b = g.L if b is None else b
    if left in (None, "det") and right in (None, "det"):
        return 0.0
    kc = kernel_dirichlet(g, T, a, b, mask)
    kb = kernel_extension(g, T, left, right, a, b, mask)
    tot = 0.0
    for p in (1, 2, 3):
        tot += comb(4, p) * double_integral([(kc, 4 - p), (kb, p)], g, T, a, b)
    return -12.0 * tot


def delta0(g, T, mask=None):
    """-12 int int over ([-1,1] x T^2)^2 of C-bar^B^4."""
    k = kernel_poisson(g, T, mask)
    return -12.0 * double_integral([(k, 4)], g, T, -1.0, 1.0, diagonal=False,
                                   points_x=(0.0,), points_y=(0.0,))


def delta0_tilde(g, T, mask=None):
    """-12 int_M int_M C^B^4 (finite-cylinder cut covariance)."""
    k = kernel_cut(g, T, mask)
    return -12.0 * double_integral([(k, 4)], g, T, -g.L, g.L, diagonal=False,
                                   points_x=(0.0,), points_y=(0.0,))


def cut_quartic(g, T, mask=None):
    """int int C^B^4 over M x M (used by the recombination diagnostics)."""
    return -delta0_tilde(g, T, mask) / 12.0


def delta_M_kernel_forms(g, T, left="dtn", right="dtn", mask=None):
    """delta^{1,M} and the kernel forms of delta^{3,4,5,M} with C = C^M and
    K = covariance of H(phi_-, phi_+) under independent end laws."""
    kc = kernel_dirichlet(g, T, mask=mask)
    kb = kernel_extension(g, T, left, right, mask=mask)
    L = g.L
    return {
        "delta1": -12.0 * double_integral([(kc, 4)], g, T, -L, L),
        "delta3": (12 ** 2 / 3) * double_integral([(kc, 3), (kb, 1)], g, T, -L, L),
        "delta4": (12 ** 2 / 2) * double_integral([(kc, 2), (kb, 2)], g, T, -L, L),
        "delta5": factorial(3) * (4 ** 2 / 2) * double_integral([(kc, 1), (kb, 3)], g, T, -L, L),
    }


def delta2_kernel_form(g, T, mask=None, K=None):
    """6*16*9*2 int int int C^2 C^2 C^2 over M^3, approximated on the 2L-periodic cylinder."""
    return 6 * 16 * 9 * 2 * 2 * g.L * triangle_per_volume(g, T, 2 * g.L, K, mask)


def energy_density(g, T, P=None, mask=None, K=None):
    """Per-unit-length vacuum counterterm density on the P-periodic cylinder:
    -12 int C^per(0, y)^4 dy + 288 (triangle per volume)."""
    P = 2 * g.L if P is None else P
    kp = kernel_periodic(g, T, P, mask)
    q = -12.0 * single_integral_profile([(kp, 4)], g, T, [0.0], -P / 2, P / 2)[0]
    return q + 288.0 * triangle_per_volume(g, T, P, K, mask)


def gamma_difference_norms(g, T, n_tau=65, mask=None):
    """||gamma_T - gamma^M_T||_{L^p_tau} for p = 1, 2, inf on a uniform tau grid."""
    taus = np.linspace(-g.L, g.L, n_tau)
    gm = gamma_M_profile(g, T, taus, mask)
    gt = gamma_T(g, T, mask=mask)
    d = gt - gm
    w = np.full(n_tau, 2 * g.L / (n_tau - 1))
    w[[0, -1]] *= 0.5
    interior = np.abs(d[(taus > -0.5 * g.L) & (taus < 0.5 * g.L)])
    return {"gamma_T": gt, "Linf": float(np.max(np.abs(d))), "L1": float(np.dot(w, np.abs(d))),
            "L2": float(math.sqrt(np.dot(w, d * d))), "Linf_interior": float(interior.max()),
            "tau": taus, "profile": gm}


@dataclass
class RenormConstants:
    T: float
    gamma: float = None
    delta_sigma: float = None
    delta_sigma_boundary: float = None
    delta0: float = None
    delta0_tilde: float = None
    Delta_delta0: float = None
    delta_M: dict = field(default_factory=dict)
    gamma_M: list = None

    def to_dict(self):
        return asdict(self)


def renorm_constants(g, T, flags=("gamma", "delta_sigma", "delta0")):
    rc = RenormConstants(T=float(T))
    if "gamma" in flags:
        rc.gamma = gamma_T(g, T)
    if "delta_sigma" in flags:
        rc.delta_sigma = delta_sigma(g, T)["total"]
    if "delta_sigma_boundary" in flags:
        rc.delta_sigma_boundary = delta_sigma_boundary(g, T, "rough", "rough")
    if "delta0" in flags:
        rc.delta0 = delta0(g, T)
        rc.delta0_tilde = delta0_tilde(g, T)
        rc.Delta_delta0 = rc.delta0_tilde - rc.delta0
    if "delta_M" in flags:
        rc.delta_M = delta_M_kernel_forms(g, T)
    if "gamma_M" in flags:
        rc.gamma_M = gamma_M_profile(g, T, np.linspace(-g.L, g.L, 33)).tolist()
    return rc


def divergence_fit(values, T_grid, against="logT"):
    """Linear least squares of constant values against log T or T."""
    T_grid = np.asarray(T_grid, float)
    if len(T_grid) < 5:
        raise ValueError("divergence fits need at least 5 grid points")
    x = np.log(T_grid) if against == "logT" else T_grid
    out = linear_fit(x, values)
    out["against"] = against
    return out
