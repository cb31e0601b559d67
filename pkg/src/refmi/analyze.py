"""Analyst complete-data procedures and Rubin's-rules pooling."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import TrialDataset
from .errors import (
    DegenerateVariance,
    EmptyArm,
    NotPositiveDefinite,
    SingularDesign,
    TooFewImputations,
)
from .mvn import cholesky


@dataclass(frozen=True)
class CompleteDataEstimate:
    """Point estimate and model-based variance from one completed dataset."""

    theta_hat: float
    w: float
    df_com: float | None = None


@dataclass(frozen=True)
class PooledEstimate:
    theta_bar: float
    w_bar: float
    b: float
    t_total: float
    df: float
    ci: tuple[float, float]
    alpha: float
    m: int

    @property
    def se(self) -> float:
        return float(np.sqrt(self.t_total))


def _require_complete(data: TrialDataset):
    if not data.is_complete():
        raise ValueError("analysis requires a fully observed dataset")


def analyze_diff_means(completed: TrialDataset) -> CompleteDataEstimate:
    """Difference in final-visit means, with unpooled per-arm sample variances."""
    _require_complete(completed)
    yj = completed.outcomes[:, -1]
    act = yj[completed.arm == 1]
    ref = yj[completed.arm == 0]
    if act.size == 0 or ref.size == 0:
        raise EmptyArm("both arms required for the difference in means")
    if act.size < 2 or ref.size < 2:
        raise DegenerateVariance("need at least two patients per arm")
    theta = float(act.mean() - ref.mean())
    w = float(act.var(ddof=1) / act.size + ref.var(ddof=1) / ref.size)
    return CompleteDataEstimate(theta, w, df_com=act.size + ref.size - 2)


def analyze_ancova(completed: TrialDataset) -> CompleteDataEstimate:
    """OLS of the final visit on baseline and arm; treatment coefficient and
    its model-based variance."""
    _require_complete(completed)
    n = completed.n
    if n < 4:
        raise DegenerateVariance("ANCOVA needs at least four patients")
    x = np.column_stack(
        [np.ones(n), completed.outcomes[:, 0], completed.arm.astype(float)]
    )
    t = completed.outcomes[:, -1]
    xtx = x.T @ x
    try:
        L = cholesky(xtx)
    except NotPositiveDefinite:
        raise SingularDesign("design matrix (1, y0, arm) is rank deficient") from None
    beta = np.linalg.solve(L.T, np.linalg.solve(L, x.T @ t))
    resid = t - x @ beta
    s2 = float(resid @ resid) / (n - 3)
    # Var(beta_X) = s2 * [(X'X)^{-1}]_{22}
    e2 = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(3)[:, 2]))
    return CompleteDataEstimate(float(beta[2]), s2 * float(e2[2]), df_com=n - 3)


def _t_quantile(q: float, df: float) -> float:
    if not np.isfinite(df):
        return float(stats.norm.ppf(q))
    return float(stats.t.ppf(q, df))


def rubin_pool(estimates, alpha: float = 0.05) -> PooledEstimate:
    """Rubin's rules with the Barnard-Rubin small-sample degrees of freedom.

    Estimates must carry a consistent complete-data df (df_com); when it is
    None, the large-sample Rubin df is used instead.
    """
    m = len(estimates)
    if m < 2:
        raise TooFewImputations("Rubin pooling needs M >= 2")
    thetas = np.array([e.theta_hat for e in estimates], dtype=float)
    ws = np.array([e.w for e in estimates], dtype=float)
    theta_bar = float(thetas.mean())
    w_bar = float(ws.mean())
    b = float(thetas.var(ddof=1))
    t_total = w_bar + (1.0 + 1.0 / m) * b
    if b > 0.0:
        ratio = w_bar / ((1.0 + 1.0 / m) * b)
        nu_old = (m - 1) * (1.0 + ratio) ** 2 if ratio < 1e150 else np.inf
    else:
        nu_old = np.inf
    df_com = estimates[0].df_com
    if df_com is None:
        df = nu_old
    else:
        gamma = (1.0 + 1.0 / m) * b / t_total if t_total > 0.0 else 0.0
        nu_obs = df_com * (df_com + 1.0) / (df_com + 3.0) * (1.0 - gamma)
        df = 1.0 / (1.0 / nu_old + 1.0 / nu_obs) if np.isfinite(nu_old) else nu_obs
    half = _t_quantile(1.0 - alpha / 2.0, df) * np.sqrt(t_total)
    return PooledEstimate(
        theta_bar, w_bar, b, float(t_total), float(df),
        (float(theta_bar - half), float(theta_bar + half)), alpha, m,
    )


def pooled_to_json(est: PooledEstimate, method: str) -> str:
    return json.dumps(
        {
            "estimate": est.theta_bar,
            "se": est.se,
            "df": est.df,
            "ci": list(est.ci),
            "components": {"within": est.w_bar, "between": est.b},
            "method": method,
        },
        indent=2,
    )
