"""Transfer operator on a Gauss-Hermite discretised boundary state space.

The field truncation equals the state-grid mode set (by default the constant
transverse mode only), so the kernel entries K(phi_i, phi_j) are amplitudes
of a cylinder [0, tau] with two rough ends, and the semigroup property is
exact up to quadrature and Monte Carlo error.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .spectral import Geometry
from .amplitudes import (AmplitudeModel, BoundaryMeasure, Piece, log_free_amplitude, log_E_factor)
from .wick import energy_density
from .estimates import EstimateReport, rng_for, batch_means_se


def constant_mode_mask(Nz):
    m = np.zeros((2 * Nz + 1,) * 2)
    m[Nz, Nz] = 1.0
    return m


class StateGrid:
    """Tensor Gauss-Hermite grid over the real dofs of the retained boundary modes,
    matched to mu0 (variance 1/(2w) per real dof).

    modes: list of (n2, n3); (0, 0) gives one real dof, any other n gives the
    two real dofs (Re, Im) of the pair {n, -n}."""

    def __init__(self, g, modes=((0, 0),), nodes=15):
        self.g = g
        self.modes = [tuple(m) for m in modes]
        N = g.Nz
        w = g.brackets()
        t, wt = np.polynomial.hermite.hermgauss(nodes)
        dofs = []
        for n in self.modes:
            idx = (N + n[0], N + n[1])
            s = 1.0 / (2 * w[idx])
            if n == (0, 0):
                dofs.append((idx, 1.0, s))
            else:
                dofs.append((idx, 1.0, s))
                dofs.append((idx, 1j, s))
        if len(dofs) > 7:
            raise ValueError("state grids are limited to 7 real dofs")
        self.dofs = dofs
        self.mask = np.zeros(w.shape)
        for n in self.modes:
            self.mask[N + n[0], N + n[1]] = 1.0
            self.mask[N - n[0], N - n[1]] = 1.0
        pts, wts = [], []
        for combo in itertools.product(range(nodes), repeat=len(dofs)):
            c = np.zeros(w.shape, dtype=complex)
            wgt = 1.0
            for (idx, unit, s), k in zip(dofs, combo):
                x = math.sqrt(2 * s) * t[k]
                if idx == (N, N):
                    c[idx] += x
                else:
                    # real dof x = sqrt2 Re c (or -sqrt2 Im c); keep conj symmetry
                    val = x / math.sqrt(2.0) * (1.0 if unit == 1.0 else -1j)
                    c[idx] += val
                    c[2 * N - idx[0], 2 * N - idx[1]] += np.conj(val)
                wgt *= wt[k] / math.sqrt(math.pi)
            pts.append(c)
            wts.append(wgt)
        self.points = np.asarray(pts)
        self.weights = np.asarray(wts)

    def __len__(self):
        return len(self.weights)


@dataclass
class TransferMatrix:
    K: np.ndarray
    stderr: np.ndarray
    tau: float
    T: float
    nu: np.ndarray
    log_Z0: float
    flagged: list = field(default_factory=list)

    def asymmetry(self):
        return float(np.linalg.norm(self.K - self.K.T) / np.linalg.norm(self.K))


def transfer_model(T, m2=1.0, Nz=1, coupling=1.0, nodes_per_unit=16, grid_modes=((0, 0),),
                   with_energy=False):
    g = Geometry(L=1.0, m2=m2, Nz=Nz, Ntau=8)
    grid = StateGrid(g, grid_modes)
    model = AmplitudeModel(g, T, mask=grid.mask, coupling=coupling, nodes_per_unit=nodes_per_unit)
    if with_energy and model.interacting:
        model.eps = float(energy_density(g, T, mask=grid.mask))
    return model, grid


def assemble(tau, model, grid, n_mc, seed, batch=2000):
    """Kernel matrix K_ij = A_tau(phi_i, phi_j) sqrt(nu_i nu_j) with common random
    numbers for every entry; nu are the nu0 quadrature weights."""
    bm = BoundaryMeasure(model)
    v0 = bm.potential(grid.points)
    lw = np.log(grid.weights) - v0
    log_Z0 = float(logsumexp(lw))
    lnu = lw - log_Z0
    piece = Piece(model, 0.0, tau, "rough", "rough")
    P = len(grid)
    logK = np.zeros((P, P))
    rel = np.zeros((P, P))
    f = np.zeros((piece.K + 1,) + model.w.shape, dtype=complex)
    rng = rng_for(seed, 71)
    x = piece.fluctuation(rng, n_mc)                      # common random numbers for all entries
    nb = max(1, min(P, batch // max(n_mc // 100, 1)))
    for i in range(P):
        a = grid.points[i]
        for j0 in range(0, P, nb):
            bs = grid.points[j0:j0 + nb]
            H = piece.extension(np.broadcast_to(a, bs.shape), bs)          # (nb, K+1, A, A)
            mu = piece.shift(H)
            lv = np.stack([piece.log_integrand(f, x + mu[k], H[k]) for k in range(len(bs))])
            for k, lvk in enumerate(lv):
                j = j0 + k
                sh = lvk.max()
                q, se = batch_means_se(np.exp(lvk - sh))
                rel[i, j] = se / q
                logK[i, j] = (log_free_amplitude(model, tau, a, bs[k])
                              + log_E_factor(piece, a, bs[k], bm, log_Z0)
                              + sh + math.log(q) + 0.5 * (lnu[i] + lnu[j]))
    K = np.exp(logK)
    flagged = [(int(i), int(j)) for i, j in zip(*np.nonzero(rel > 0.1))]
    return TransferMatrix(K=K, stderr=K * rel, tau=float(tau), T=float(model.T), nu=np.exp(lnu),
                          log_Z0=log_Z0, flagged=flagged)


def spectrum(tm, n_sigma=3.0):
    """Eigen-decomposition of the symmetrised kernel."""
    K = tm.K if isinstance(tm, TransferMatrix) else np.asarray(tm)
    Ks = 0.5 * (K + K.T)
    lam, vec = np.linalg.eigh(Ks)
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    # power iteration from |v0|: positive arithmetic keeps every entry > 0 and
    # resolves the tiny tail entries to relative precision
    e0 = np.abs(vec[:, 0])
    for _ in range(500):
        e1 = Ks @ e0
        e1 /= np.linalg.norm(e1)
        if np.max(np.abs(e1 / e0 - 1.0)) < 1e-15:
            e0 = e1
            break
        e0 = e1
    vec[:, 0] = e0
    tau = tm.tau if isinstance(tm, TransferMatrix) else 1.0
    noise = float(np.linalg.norm(tm.stderr)) if isinstance(tm, TransferMatrix) else 0.0
    gap = float(lam[0] - lam[1]) if len(lam) > 1 else float(lam[0])
    resid = float(np.max(np.abs(Ks @ vec - vec * lam[None])))
    return {"eigenvalues": lam, "eigenvectors": vec, "e0": e0, "E0": float(-math.log(lam[0]) / tau),
            "gap": gap, "noise": noise, "simple": bool(gap > n_sigma * noise),
            "positive_e0": bool(np.all(e0 > 0)), "eigen_residual": resid,
            "asymmetry": float(np.linalg.norm(K - K.T) / np.linalg.norm(K))}


def gaussian_tower(tau, m, k):
    return np.exp(-tau * m * (np.arange(k) + 0.5))


def ground_state_transform(tm, spec=None):
    """Stochastic matrix P_ij = K_ij e0_j / (lambda0 e0_i) and its invariant law e0^2."""
    spec = spectrum(tm) if spec is None else spec
    K = 0.5 * (tm.K + tm.K.T) if isinstance(tm, TransferMatrix) else np.asarray(tm)
    e0 = spec["e0"]
    if np.any(e0 <= 0):
        raise ValueError("ground state has non-positive entries")
    lam = float(e0 @ K @ e0)
    P = K * e0[None, :] / (lam * e0[:, None])
    pi = e0 ** 2 / np.sum(e0 ** 2)
    return {"P": P, "row_sums": P.sum(axis=1), "stationary": pi,
            "stationarity_residual": float(np.max(np.abs(pi @ P - pi)))}


def semigroup_residual(tau1, tau2, model, grid, n_mc, seed, gaussian_budget=True):
    """||K_{t1+t2} - K_t1 K_t2||_F / ||K_{t1+t2}||_F against an error budget:
    propagated MC error plus the quadrature error of the same grid in the
    Gaussian model (where the semigroup is exact up to quadrature)."""
    K1 = assemble(tau1, model, grid, n_mc, seed)
    K2 = assemble(tau2, model, grid, n_mc, seed + 1)
    K12 = assemble(tau1 + tau2, model, grid, n_mc, seed + 2)
    prod = K1.K @ K2.K
    nrm = np.linalg.norm(K12.K)
    resid = float(np.linalg.norm(K12.K - prod) / nrm)
    mc = math.sqrt(np.linalg.norm(K12.stderr) ** 2 + np.linalg.norm(K1.stderr @ K2.K) ** 2
                   + np.linalg.norm(K1.K @ K2.stderr) ** 2) / nrm
    quad = 0.0
    if gaussian_budget:
        gm = AmplitudeModel(model.g, model.T, mask=model.mask, coupling=0.0,
                            nodes_per_unit=round(1 / model.h))
        G1 = assemble(tau1, gm, grid, 1, seed)
        G2 = assemble(tau2, gm, grid, 1, seed)
        G12 = assemble(tau1 + tau2, gm, grid, 1, seed)
        quad = float(np.linalg.norm(G12.K - G1.K @ G2.K) / np.linalg.norm(G12.K))
    budget = mc + quad
    return EstimateReport("semigroup", value=resid, n_samples=n_mc, seed=seed, observed=resid,
                          tolerance=3.0 * budget, passed=bool(resid <= 3.0 * budget),
                          extra={"tau1": tau1, "tau2": tau2, "mc_budget": mc, "quadrature_budget": quad})


def ground_state_function(spec, nu):
    """e0 as a function on the grid, normalised in L^2(nu0)."""
    return spec["e0"] / np.sqrt(nu)


def orlicz_integral(psi, nu, alpha):
    lp = np.log(np.maximum(psi, 1.0))
    return float(np.sum(nu * psi ** 2 * lp ** alpha))


def orlicz_norm(psi, nu, alpha):
    """Luxemburg norm for Phi(t) = t^2 (log_+ t)^alpha: inf{k : int Phi(psi/k) dnu <= 1}."""
    lo, hi = 1e-6, max(1.0, float(np.max(np.abs(psi))) * 10)
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if orlicz_integral(np.abs(psi) / mid, nu, alpha) > 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def orlicz_diagnostic(psis, nus, T_grid, alpha=1.0, band=0.3):
    """Orlicz integral and norm of the ground state per T, with a uniformity verdict."""
    vals = [orlicz_integral(p, n, alpha) for p, n in zip(psis, nus)]
    norms = [orlicz_norm(p, n, alpha) for p, n in zip(psis, nus)]
    v = np.asarray(vals)
    spread = float((v.max() - v.min()) / max(abs(v).mean(), 1e-300)) if len(v) else 0.0
    return EstimateReport("orlicz-trend", value=float(v.mean()), observed=spread, tolerance=band,
                          passed=bool(spread <= band),
                          extra={"T": list(map(float, T_grid)), "integral": vals, "norm": norms,
                                 "alpha": alpha})
