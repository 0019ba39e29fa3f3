"""Zero-mean Gaussian-process surrogate on the unit cube.

Kernel ``k(x, x') = exp(-||x - x'||^2 / 2)`` on inputs already rescaled to
``[0, 1]^d``.  Targets are standardized before fitting, which is the same as
using a constant prior mean and a kernel amplitude equal to their variance.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import log_ndtr


def se_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-0.5 * np.maximum(sq, 0.0))


class GaussianProcess:
    def __init__(self, jitter: float = 1e-8, max_jitter: float = 1e-4):
        self.jitter = jitter
        self.max_jitter = max_jitter

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        self.x = x
        self.y_mean = y.mean()
        self.y_std = y.std() if y.std() > 0 else 1.0
        self.y_norm = (y - self.y_mean) / self.y_std
        base = se_kernel(x, x)
        jitter = self.jitter
        while True:
            try:
                self._chol = cho_factor(base + jitter * np.eye(len(x)), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > self.max_jitter:
                    raise
        self.used_jitter = jitter
        self.alpha = cho_solve(self._chol, self.y_norm)
        return self

    def normalize(self, value):
        return (np.asarray(value, dtype=float) - self.y_mean) / self.y_std

    def predict(self, x: np.ndarray, normalized: bool = False):
        """Posterior mean and variance at ``x`` (rows).  Variance is clamped at zero."""
        x = np.atleast_2d(x)
        k = se_kernel(x, self.x)
        mean = k @ self.alpha
        v = solve_triangular(self._chol[0], k.T, lower=True)
        var = np.maximum(1.0 - (v * v).sum(0), 0.0)
        if normalized:
            return mean, var
        return self.y_mean + self.y_std * mean, var * self.y_std ** 2

    def log_improvement_probability(self, x: np.ndarray, threshold: float):
        """``log P(f(x) <= threshold)`` for rows of ``x``; threshold in original units."""
        mean, var = self.predict(x, normalized=True)
        t = self.normalize(threshold)
        sd = np.sqrt(np.maximum(var, 1e-300))
        return log_ndtr((t - mean) / sd)

    def log_improvement_probability_grad(self, z: np.ndarray, threshold: float):
        """Value and gradient of the log improvement probability at one point."""
        z = np.asarray(z, dtype=float)
        diff = z[None, :] - self.x
        k = np.exp(-0.5 * (diff * diff).sum(1))
        dk = -k[:, None] * diff
        mean = k @ self.alpha
        dmean = self.alpha @ dk
        kinv_k = cho_solve(self._chol, k)
        var = 1.0 - k @ kinv_k
        dvar = -2.0 * kinv_k @ dk
        var = max(var, 1e-300)
        sd = np.sqrt(var)
        dsd = dvar / (2.0 * sd)
        t = float(self.normalize(threshold))
        u = (t - mean) / sd
        du = -dmean / sd - u * dsd / sd
        logcdf = log_ndtr(u)
        with np.errstate(over="ignore", invalid="ignore"):
            ratio = np.exp(-0.5 * u * u - 0.5 * np.log(2 * np.pi) - logcdf)
        if not np.isfinite(ratio):
            ratio = max(-u, 0.0)  # pdf/cdf tends to -u far in the lower tail
        return float(logcdf), ratio * du
