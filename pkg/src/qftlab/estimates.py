"""Monte Carlo estimate containers and small statistics helpers."""
from dataclasses import dataclass, field, asdict
import math

import numpy as np
from scipy.special import logsumexp


@dataclass
class EstimateReport:
    """Either a Monte Carlo estimate (value, stderr, n_samples, seed) or an
    exact-identity residual (observed, tolerance, passed)."""
    name: str
    value: float = float("nan")
    stderr: float = float("nan")
    n_samples: int = 0
    seed: int = None
    observed: float = None
    tolerance: float = None
    passed: bool = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}


def rng_for(seed, *stream):
    """Independent generator for a (seed, stream...) tuple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(s) for s in stream]))


def mean_se(x, axis=0):
    """Sample mean and its standard error."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    m = x.mean(axis=axis)
    s = x.std(axis=axis, ddof=1) if n > 1 else np.zeros_like(m)
    return m, s / math.sqrt(max(n, 1))


def batch_means_se(x, n_batches=20):
    """Standard error of the mean from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    nb = min(n_batches, n)
    if nb < 2:
        return float(x.mean()), float("nan")
    size = n // nb
    b = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(x.mean()), float(b.std(ddof=1) / math.sqrt(nb))


def ratio_mean_se(num, den):
    """Self-normalised ratio estimate sum(num)/sum(den) with a delta-method SE."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = len(num)
    r = num.sum() / den.sum()
    resid = (num - r * den) / den.mean()
    return float(r), float(resid.std(ddof=1) / math.sqrt(n))


def log_mean_exp(logw):
    """log of the sample mean of exp(logw) (streaming-safe)."""
    logw = np.asarray(logw, dtype=float)
    return float(logsumexp(logw) - math.log(len(logw)))


def log_mean_exp_se(logw):
    """log-mean-exp and the delta-method SE of the log."""
    logw = np.asarray(logw, dtype=float)
    lm = log_mean_exp(logw)
    w = np.exp(logw - lm)
    return lm, float(w.std(ddof=1) / math.sqrt(len(w)))


def ess(logw):
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - logw.max())
    return float(w.sum() ** 2 / np.sum(w * w))


def z_score(a, sa, b, sb):
    s = math.sqrt(sa * sa + sb * sb)
    return (a - b) / s if s > 0 else (0.0 if a == b else float("inf"))


def integrated_autocorr_time(x, c=5.0):
    """Sokal's windowed estimate of the integrated autocorrelation time."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = len(x)
    if n < 4 or np.allclose(x, 0):
        return 1.0
    f = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 1.0
    for m in range(1, n):
        tau += 2.0 * acf[m]
        if m >= c * tau:
            break
    return max(tau, 1.0)


def linear_fit(x, y):
    """Least squares y = a + b x; returns slope, intercept and R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coef[1]), "intercept": float(coef[0]), "r2": r2}
