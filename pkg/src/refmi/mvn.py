"""Dense small-dimension multivariate normal primitives.

Everything here works on plain numpy arrays. Dimensions are tiny (a handful of
scheduled visits), so the factorizations are written as explicit loops with a
scale-invariant pivot guard instead of deferring to LAPACK error codes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

# Pivot threshold relative to the largest diagonal entry.
PD_RTOL = 1e-12
SYM_RTOL = 1e-12


def check_symmetric(mat: np.ndarray, rtol: float = SYM_RTOL) -> None:
    scale = np.abs(mat).max()
    if scale == 0.0:
        return
    if np.abs(mat - mat.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")


def cholesky(mat: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == mat.

    Raises NotPositiveDefinite when any pivot falls at or below
    PD_RTOL times the largest diagonal entry.
    """
    a = np.asarray(mat, dtype=float)
    n = a.shape[0]
    tol = PD_RTOL * max(np.max(np.diag(a)), 0.0) if n else 0.0
    if n == 1:
        if a[0, 0] <= tol:
            raise NotPositiveDefinite(f"pivot {a[0, 0]:.3e} at index 0 (tol {tol:.3e})")
        return np.array([[np.sqrt(a[0, 0])]])
    if n == 2:
        d0 = a[0, 0]
        if d0 <= tol:
            raise NotPositiveDefinite(f"pivot {d0:.3e} at index 0 (tol {tol:.3e})")
        l00 = np.sqrt(d0)
        l10 = a[1, 0] / l00
        d1 = a[1, 1] - l10 * l10
        if d1 <= tol:
            raise NotPositiveDefinite(f"pivot {d1:.3e} at index 1 (tol {tol:.3e})")
        return np.array([[l00, 0.0], [l10, np.sqrt(d1)]])
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d <= tol:
            raise NotPositiveDefinite(f"pivot {d:.3e} at index {j} (tol {tol:.3e})")
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def psd_factor(mat: np.ndarray) -> np.ndarray:
    """Cholesky-like factor tolerating zero pivots (positive semidefinite input).

    Used for sampling, where degenerate (zero-variance) components are legal.
    """
    a = np.asarray(mat, dtype=float)
    n = a.shape[0]
    scale = max(np.max(np.abs(np.diag(a))), 0.0) if n else 0.0
    tol = PD_RTOL * scale
    if n == 1:
        d = a[0, 0]
        if d <= tol:
            if d < -max(tol, 1e-10 * scale):
                raise NotPositiveDefinite(f"negative pivot {d:.3e} at index 0")
            return np.zeros((1, 1))
        return np.array([[np.sqrt(d)]])
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if d <= tol:
            if d < -max(tol, 1e-10 * scale):
                raise NotPositiveDefinite(f"negative pivot {d:.3e} at index {j}")
            continue  # leave column j zero
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L') x = b given the lower factor L; b may be a matrix.

    Small systems are solved with scalar substitution to avoid LAPACK call
    overhead in the imputation hot loop.
    """
    n = L.shape[0]
    if n == 1:
        return b / (L[0, 0] * L[0, 0])
    if n == 2:
        y0 = b[0] / L[0, 0]
        y1 = (b[1] - L[1, 0] * y0) / L[1, 1]
        x1 = y1 / L[1, 1]
        x0 = (y0 - L[1, 0] * x1) / L[0, 0]
        return np.stack([x0, x1])
    return solve_triangular(
        L.T, solve_triangular(L, b, lower=True, check_finite=False),
        lower=False, check_finite=False,
    )


@dataclass(frozen=True)
class ConditionalGaussian:
    """Gaussian law of the unconditioned coordinates given the observed ones."""

    mean: np.ndarray
    cov: np.ndarray
    conditioned_on: tuple[int, ...] = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def condition(mu: np.ndarray, sigma: np.ndarray, obs_idx, y_obs) -> ConditionalGaussian:
    """Condition N(mu, sigma) on coordinates obs_idx taking values y_obs.

    Returns the distribution of the remaining coordinates (in increasing index
    order). An empty obs_idx returns the marginal unchanged. Computed through
    Cholesky solves on the observed block, never an explicit inverse.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    obs_idx = tuple(int(i) for i in obs_idx)
    y_obs = np.asarray(y_obs, dtype=float)
    k = mu.shape[0]
    if any(i < 0 or i >= k for i in obs_idx):
        raise IndexError("observed index out of range")
    if y_obs.shape[0] != len(obs_idx):
        raise ValueError("y_obs length must match obs_idx")
    if not obs_idx:
        return ConditionalGaussian(mu.copy(), sigma.copy(), ())

    mis_idx = [i for i in range(k) if i not in obs_idx]
    o = np.array(obs_idx)
    m = np.array(mis_idx, dtype=int)
    s_oo = sigma[np.ix_(o, o)]
    L = cholesky(s_oo)
    if not mis_idx:
        return ConditionalGaussian(np.empty(0), np.empty((0, 0)), obs_idx)
    s_om = sigma[np.ix_(o, m)]
    # W = L^{-1} S_om, so S_mo S_oo^{-1} S_om = W' W
    w = solve_triangular(L, s_om, lower=True, check_finite=False)
    z = solve_triangular(L, y_obs - mu[o], lower=True, check_finite=False)
    cond_mean = mu[m] + w.T @ z
    cond_cov = sigma[np.ix_(m, m)] - w.T @ w
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    return ConditionalGaussian(cond_mean, cond_cov, obs_idx)


def sample(g: ConditionalGaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw `count` iid vectors from g; (count, dim) array, reproducible by seed."""
    if count < 1:
        raise ValueError("count must be positive")
    L = psd_factor(g.cov)
    z = rng.standard_normal((count, g.dim))
    return g.mean + z @ L.T
