"""Per-arm multivariate normal estimation under monotone MAR.

The likelihood for monotone data factorizes into the marginal law of the
baseline and a sequence of regressions of each visit on its predecessors, so
the MLE is available in closed form and a posterior draw reduces to standard
Bayesian linear regression at each stage (noninformative prior per stage).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrialDataset
from .errors import InsufficientData, NotPositiveDefinite, SingularDesign
from .mvn import chol_solve, cholesky

# Each stage needs (#regressors + 2) observations so residual-variance draws
# stay proper.
_STAGE_MARGIN = 2


@dataclass(frozen=True)
class ArmModel:
    """Multivariate normal model for one arm: mean vector and PD covariance."""

    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def validate(self) -> "ArmModel":
        if self.mu.shape[0] != self.sigma.shape[0] or self.sigma.shape[0] != self.sigma.shape[1]:
            raise ValueError("inconsistent model dimensions")
        cholesky(self.sigma)  # raises NotPositiveDefinite
        return self


@dataclass(frozen=True)
class SequentialFactors:
    """Factored parameterization: baseline marginal plus one regression per visit.

    coefs[j] holds (intercept, beta_0..beta_j) for the regression of visit j+1
    on the baseline and all earlier visits; resvars[j] is its residual variance.
    """

    baseline_mean: float
    baseline_var: float
    coefs: tuple
    resvars: tuple

    @property
    def dim(self) -> int:
        return len(self.coefs) + 1


def compose_factors(f: SequentialFactors) -> ArmModel:
    """Rebuild (mu, Sigma) from the sequential factorization."""
    k = f.dim
    mu = np.empty(k)
    sigma = np.empty((k, k))
    mu[0] = f.baseline_mean
    sigma[0, 0] = f.baseline_var
    for j in range(1, k):
        c = np.asarray(f.coefs[j - 1], dtype=float)
        alpha, beta = c[0], c[1:]
        mu[j] = alpha + beta @ mu[:j]
        cross = beta @ sigma[:j, :j]
        sigma[j, :j] = cross
        sigma[:j, j] = cross
        sigma[j, j] = f.resvars[j - 1] + cross @ beta
    return ArmModel(mu, sigma)


def decompose_model(m: ArmModel) -> SequentialFactors:
    """Inverse of compose_factors (used for round-trip checks)."""
    k = m.dim
    coefs, resvars = [], []
    for j in range(1, k):
        s = m.sigma[:j, :j]
        L = cholesky(s)
        beta = np.linalg.solve(L.T, np.linalg.solve(L, m.sigma[:j, j]))
        alpha = m.mu[j] - beta @ m.mu[:j]
        coefs.append(np.concatenate(([alpha], beta)))
        resvars.append(float(m.sigma[j, j] - beta @ m.sigma[:j, j]))
    return SequentialFactors(float(m.mu[0]), float(m.sigma[0, 0]), tuple(coefs), tuple(resvars))


def _extract(arm_data):
    if isinstance(arm_data, TrialDataset):
        return arm_data.outcomes, arm_data.dropout
    y, d = arm_data
    return np.asarray(y, dtype=float), np.asarray(d)


def _stage_lstsq(x: np.ndarray, t: np.ndarray):
    """Solve the normal equations by Cholesky; (coef, rss)."""
    xtx = x.T @ x
    try:
        L = cholesky(xtx)
    except NotPositiveDefinite:
        raise SingularDesign("collinear regressors in sequential stage") from None
    beta = chol_solve(L, x.T @ t)
    resid = t - x @ beta
    return beta, float(resid @ resid), L

def fit_factors(arm_data) -> SequentialFactors:
    """Exact MLE of the sequential factors from monotone data (ML divisors)."""
    y, d = _extract(arm_data)
    n, k = y.shape
    if n < 1 + _STAGE_MARGIN:
        raise InsufficientData(f"baseline stage has {n} patients, needs {1 + _STAGE_MARGIN}")
    y0 = y[:, 0]
    coefs, resvars = [], []
    for j in range(1, k):
        rows = d >= j
        nj = int(rows.sum())
        p = j + 1
        if nj < p + _STAGE_MARGIN:
            raise InsufficientData(f"stage {j} has {nj} patients, needs {p + _STAGE_MARGIN}")
        x = np.column_stack([np.ones(nj), y[rows, :j]])
        beta, rss, _ = _stage_lstsq(x, y[rows, j])
        coefs.append(beta)
        resvars.append(rss / nj)
    return SequentialFactors(
        float(y0.mean()), float(y0.var()), tuple(coefs), tuple(resvars)
    )


def fit_mle(arm_data) -> ArmModel:
    """Maximum likelihood (mu, Sigma) for one arm under monotone MAR.

    With no missingness this equals the sample mean and the divisor-n sample
    covariance exactly.
    """
    return compose_factors(fit_factors(arm_data))


def posterior_draw(arm_data, rng: np.random.Generator) -> ArmModel:
    """One draw from the posterior under the per-stage noninformative prior.

    Stage residual variances come from scaled inverse-chi-square draws and the
    coefficients from their conditional normal; the recomposed draw is a valid
    ArmModel.
    """
    y, d = _extract(arm_data)
    n, k = y.shape
    if n < 1 + _STAGE_MARGIN:
        raise InsufficientData(f"baseline stage has {n} patients, needs {1 + _STAGE_MARGIN}")
    y0 = y[:, 0]
    ss0 = float(((y0 - y0.mean()) ** 2).sum())
    v0 = ss0 / rng.chisquare(n - 1)
    m0 = rng.normal(y0.mean(), np.sqrt(v0 / n))
    coefs, resvars = [], []
    for j in range(1, k):
        rows = d >= j
        nj = int(rows.sum())
        p = j + 1
        if nj < p + _STAGE_MARGIN:
            raise InsufficientData(f"stage {j} has {nj} patients, needs {p + _STAGE_MARGIN}")
        x = np.column_stack([np.ones(nj), y[rows, :j]])
        beta_hat, rss, L = _stage_lstsq(x, y[rows, j])
        s2 = rss / rng.chisquare(nj - p)
        # beta | s2 ~ N(beta_hat, s2 (X'X)^{-1});  X'X = L L'
        z = rng.standard_normal(p)
        beta = beta_hat + np.sqrt(s2) * np.linalg.solve(L.T, z)
        coefs.append(beta)
        resvars.append(float(s2))
    return compose_factors(
        SequentialFactors(float(m0), float(v0), tuple(coefs), tuple(resvars))
    )
