"""Jump-to-reference joint construction and dataset completion.

The J2R joint for a patient dropping out after visit D keeps the active-arm
law over the observed prefix and switches the conditional law of the missing
tail to the reference arm's. Completion is vectorized over patients sharing
the same (arm, dropout) pattern.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import TrialDataset, split_by_arm
from .fit import ArmModel, fit_mle, posterior_draw
from .mvn import chol_solve, cholesky, condition, psd_factor, sample


class Strategy(enum.Enum):
    MAR = "mar"
    J2R = "j2r"


@dataclass(frozen=True)
class J2RJoint:
    """Patient-pattern joint law: observed block 0..split, missing block after."""

    mu_tilde: np.ndarray
    sigma_tilde: np.ndarray
    split: int


def build_j2r_joint(ref: ArmModel, act: ArmModel, D: int) -> J2RJoint:
    """Assemble the jump-to-reference joint for dropout index D.

    The observed block of the covariance is the active arm's block, copied
    verbatim; the cross and tail blocks are chosen so the conditional
    covariance of the missing tail given the prefix equals the reference
    arm's.
    """
    J = ref.dim - 1
    if not (0 <= D < J):
        raise ValueError(f"dropout index {D} out of range for J={J}")
    if act.dim != ref.dim:
        raise ValueError("arm models must share dimensions")
    o = slice(0, D + 1)
    m = slice(D + 1, J + 1)
    r11, r12, r22 = ref.sigma[o, o], ref.sigma[o, m], ref.sigma[m, m]
    a11 = act.sigma[o, o]
    L = cholesky(r11)
    # T = R21 R11^{-1}, via Cholesky solves
    t = chol_solve(L, r12).T
    s21 = t @ a11
    s22 = r22 - t @ (r11 - a11) @ t.T
    s22 = 0.5 * (s22 + s22.T)
    k = J + 1
    sigma = np.empty((k, k))
    sigma[o, o] = a11
    sigma[m, o] = s21
    sigma[o, m] = s21.T
    sigma[m, m] = s22
    cholesky(sigma)  # raises NotPositiveDefinite if the assembly degenerated
    mu = np.concatenate([act.mu[o], ref.mu[m]])
    return J2RJoint(mu, sigma, D)


def _pattern_conditional(mu: np.ndarray, sigma: np.ndarray, D: int):
    """Tail-given-prefix conditional in regression form.

    Returns (reg, base, factor): conditional mean of the tail is
    base + reg @ y_prefix and the conditional covariance factor is `factor`
    (lower triangular, possibly semidefinite).
    """
    o = slice(0, D + 1)
    m = slice(D + 1, mu.shape[0])
    L = cholesky(sigma[o, o])
    reg = chol_solve(L, sigma[o, m]).T
    base = mu[m] - reg @ mu[o]
    cov = sigma[m, m] - reg @ sigma[o, m]
    return reg, base, psd_factor(0.5 * (cov + cov.T))


def _pattern_joint(arm: int, D: int, self_model: ArmModel, ref_model: ArmModel, j2r: bool):
    if j2r and arm == 1:
        joint = build_j2r_joint(ref_model, self_model, D)
        return joint.mu_tilde, joint.sigma_tilde
    return self_model.mu, self_model.sigma


def complete_arm(
    y: np.ndarray,
    d: np.ndarray,
    arm: int,
    self_model: ArmModel,
    ref_model: ArmModel,
    j2r: bool,
    rng: np.random.Generator,
    cache: dict | None = None,
) -> np.ndarray:
    """Return a completed copy of one arm's outcome matrix.

    Patients sharing a dropout index are imputed in one vectorized draw from
    the tail conditional of their pattern joint. Observed entries are never
    altered. A cache dict (valid for one fixed parameter pair) can be passed
    to reuse pattern conditionals across imputations.
    """
    J = y.shape[1] - 1
    if int(d.min(initial=J)) >= J:
        return y.copy()
    out = y.copy()
    for D in np.unique(d):
        D = int(D)
        if D >= J:
            continue
        rows = np.flatnonzero(d == D)
        key = (arm, D)
        if cache is not None and key in cache:
            reg, base, factor = cache[key]
        else:
            mu, sigma = _pattern_joint(arm, D, self_model, ref_model, j2r)
            reg, base, factor = _pattern_conditional(mu, sigma, D)
            if cache is not None:
                cache[key] = (reg, base, factor)
        means = base + y[rows, : D + 1] @ reg.T
        z = rng.standard_normal((rows.size, J - D))
        out[np.ix_(rows, np.arange(D + 1, J + 1))] = means + z @ factor.T
    return out


def impute_patient(
    rec, ref: ArmModel, act: ArmModel, strategy: Strategy, rng: np.random.Generator
):
    """Complete a single PatientRecord (returned unchanged when fully observed)."""
    from .data import PatientRecord

    D = rec.dropout
    J = ref.dim - 1
    if D >= J:
        return rec
    if strategy is Strategy.J2R and rec.arm == 1:
        joint = build_j2r_joint(ref, act, D)
        mu, sigma = joint.mu_tilde, joint.sigma_tilde
    else:
        model = act if rec.arm == 1 else ref
        mu, sigma = model.mu, model.sigma
    y_obs = np.array(rec.outcomes[: D + 1], dtype=float)
    g = condition(mu, sigma, range(D + 1), y_obs)
    tail = sample(g, rng, 1)[0]
    completed = rec.outcomes[: D + 1] + tuple(float(v) for v in tail)
    return PatientRecord(rec.id, rec.arm, completed)


def impute_dataset(
    data: TrialDataset,
    strategy: Strategy,
    M: int,
    proper: bool,
    rng: np.random.Generator,
) -> list[TrialDataset]:
    """Generate M completed copies of the dataset.

    proper=True refits a posterior draw of each arm's model per imputation;
    proper=False conditions every imputation on the single per-arm MLE.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    ref_ds, act_ds = split_by_arm(data)
    ref_args = (ref_ds.outcomes, ref_ds.dropout)
    act_args = (act_ds.outcomes, act_ds.dropout)
    if not proper:
        ref_mle = fit_mle(ref_args)
        act_mle = fit_mle(act_args)
    j2r = strategy is Strategy.J2R
    ref_rows = np.flatnonzero(data.arm == 0)
    act_rows = np.flatnonzero(data.arm == 1)
    streams = rng.spawn(M)
    mle_cache: dict | None = None if proper else {}
    out = []
    for m in range(M):
        sub = streams[m]
        if proper:
            ref_model = posterior_draw(ref_args, sub)
            act_model = posterior_draw(act_args, sub)
        else:
            ref_model, act_model = ref_mle, act_mle
        completed = data.outcomes.copy()
        completed[ref_rows] = complete_arm(
            ref_ds.outcomes, ref_ds.dropout, 0, ref_model, ref_model, j2r, sub,
            cache=mle_cache,
        )
        completed[act_rows] = complete_arm(
            act_ds.outcomes, act_ds.dropout, 1, act_model, ref_model, j2r, sub,
            cache=mle_cache,
        )
        out.append(TrialDataset(data.ids, data.arm, completed, validate=False))
    return out
