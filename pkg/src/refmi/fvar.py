"""Frequentist variance estimation for reference-based MI estimators.

Three routes are provided: bootstrap-then-impute with random-intercepts
(one-way ANOVA) pooling of the bootstrap-by-imputation grid, closed forms for
the single-follow-up no-baseline case, and a congenial Bayesian posterior for
that same case.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .analyze import analyze_ancova, _t_quantile
from .data import TrialDataset, split_by_arm
from .errors import InsufficientData, NoObservedReference, RefmiError
from .fit import fit_mle
from .impute import Strategy, complete_arm, _pattern_conditional, _pattern_joint

_BOOT_RETRIES = 10


@dataclass(frozen=True)
class BootMiGrid:
    """theta estimates indexed by (bootstrap replicate, imputation)."""

    estimates: np.ndarray  # (B, M)

    @property
    def B(self) -> int:
        return self.estimates.shape[0]

    @property
    def M(self) -> int:
        return self.estimates.shape[1]


@dataclass(frozen=True)
class BootMiEstimate:
    theta_bar: float
    sigma2_b: float
    sigma2_w: float
    v_hat: float
    df: float
    ci: tuple[float, float]
    alpha: float
    degenerate: bool = False

    @property
    def se(self) -> float:
        return float(np.sqrt(self.v_hat))


@dataclass(frozen=True)
class SimplifiedStats:
    """Group summaries for the single-follow-up, no-baseline configuration.

    mu_hat_r_com pools the reference arm with active-arm dropouts (computable
    on completed data; on observed data it reduces to the reference mean).
    n_r_obs counts reference patients with an observed endpoint.
    """

    mu_hat_a: float
    mu_hat_r_obs: float
    mu_hat_r_com: float
    pi_hat_1: float
    sigma2_hat_a: float
    sigma2_hat_r: float
    n_a: int
    n_r: int
    n_r_obs: int


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    ci: tuple[float, float]
    n_draws: int


def boot_then_impute(
    data: TrialDataset,
    strategy: Strategy,
    B: int,
    M: int,
    rng: np.random.Generator,
    method: str = "diff_means",
) -> BootMiGrid:
    """Resample-first bootstrap with M improper imputations per replicate.

    Each replicate resamples stratified within arm, refits the per-arm MLEs,
    imputes M times conditional on those MLEs, and analyzes each completed
    dataset. A replicate whose fit fails is retried with a fresh resample, up
    to a small cap.
    """
    if B < 2 or M < 2:
        raise ValueError("B and M must both be at least 2")
    ref, act = split_by_arm(data)
    j2r = strategy is Strategy.J2R
    fast = method == "diff_means"
    grid = np.empty((B, M))
    for b in range(B):
        for attempt in range(_BOOT_RETRIES + 1):
            ri = rng.integers(0, ref.n, size=ref.n)
            ai = rng.integers(0, act.n, size=act.n)
            ry, rd = ref.outcomes[ri], ref.dropout[ri]
            ay, ad = act.outcomes[ai], act.dropout[ai]
            try:
                ref_model = fit_mle((ry, rd))
                act_model = fit_mle((ay, ad))
                if fast:
                    ref_means = _final_mean_draws(ry, rd, 0, ref_model, ref_model,
                                                  j2r, M, rng)
                    act_means = _final_mean_draws(ay, ad, 1, act_model, ref_model,
                                                  j2r, M, rng)
                    grid[b] = act_means - ref_means
                else:
                    for m in range(M):
                        rc = complete_arm(ry, rd, 0, ref_model, ref_model, j2r, rng)
                        ac = complete_arm(ay, ad, 1, act_model, ref_model, j2r, rng)
                        grid[b, m] = _ancova_theta(rc, ac)
            except RefmiError:
                if attempt == _BOOT_RETRIES:
                    raise RefmiError(
                        f"bootstrap replicate {b} failed {_BOOT_RETRIES + 1} times"
                    ) from None
                continue
            break
    return BootMiGrid(grid)


def _final_mean_draws(y, d, arm, self_model, ref_model, j2r, M, rng) -> np.ndarray:
    """Final-visit arm means for M improper imputations of one arm.

    Only the final coordinate of each tail conditional is needed for the
    difference-in-means analysis, so all M imputations are drawn in one pass
    per dropout pattern.
    """
    J = y.shape[1] - 1
    n = y.shape[0]
    complete = d == J
    obs_sum = float(y[complete, J].sum())
    sums = np.full(M, obs_sum)
    for D in np.unique(d):
        D = int(D)
        if D >= J:
            continue
        rows = np.flatnonzero(d == D)
        mu, sigma = _pattern_joint(arm, D, self_model, ref_model, j2r)
        reg, base, factor = _pattern_conditional(mu, sigma, D)
        mean_final = base[-1] + y[rows, : D + 1] @ reg[-1]
        scale = float(np.sqrt(factor[-1] @ factor[-1]))
        draws = mean_final + scale * rng.standard_normal((M, rows.size))
        sums += draws.sum(axis=1)
    return sums / n


def _ancova_theta(rc, ac) -> float:
    arm = np.concatenate([np.zeros(rc.shape[0], dtype=int), np.ones(ac.shape[0], dtype=int)])
    outcomes = np.concatenate([rc, ac])
    ids = [f"r{k}" for k in range(arm.size)]
    ds = TrialDataset(ids, arm, outcomes, validate=False)
    return analyze_ancova(ds).theta_hat


def vonhippel_pool(grid: BootMiGrid, alpha: float = 0.05) -> BootMiEstimate:
    """Method-of-moments one-way ANOVA pooling of the bootstrap/MI grid.

    Total variance of the grand mean is (1+1/B) * sigma2_b + sigma2_w / (B*M),
    with the between component truncated at zero and degrees of freedom from a
    Satterthwaite combination of the two mean squares.
    """
    g = grid.estimates
    B, M = g.shape
    row_means = g.mean(axis=1)
    grand = float(row_means.mean())
    msb = M * float(row_means.var(ddof=1))
    msw = float(((g - row_means[:, None]) ** 2).sum() / (B * (M - 1)))
    sigma2_w = msw
    sigma2_b = max(0.0, (msb - msw) / M)
    v_hat = (1.0 + 1.0 / B) * sigma2_b + sigma2_w / (B * M)
    if v_hat <= 0.0:
        return BootMiEstimate(
            grand, 0.0, 0.0, 0.0, np.inf, (grand, grand), alpha, degenerate=True
        )
    if sigma2_b > 0.0:
        a = (1.0 + 1.0 / B) / M
        c = 1.0 / (B * M) - a
        denom = (a * msb) ** 2 / (B - 1) + (c * msw) ** 2 / (B * (M - 1))
        df = v_hat**2 / denom if denom > 0.0 else np.inf
    else:
        df = float(B * (M - 1))
    half = _t_quantile(1.0 - alpha / 2.0, df) * np.sqrt(v_hat)
    return BootMiEstimate(
        grand, sigma2_b, sigma2_w, float(v_hat), float(df),
        (float(grand - half), float(grand + half)), alpha,
    )


def grid_to_csv(grid: BootMiGrid, target) -> None:
    """Dump the grid as ``b,m,theta`` rows for external audit."""
    def emit(fh):
        w = csv.writer(fh)
        w.writerow(["b", "m", "theta"])
        for b in range(grid.B):
            for m in range(grid.M):
                w.writerow([b, m, repr(float(grid.estimates[b, m]))])

    if hasattr(target, "write"):
        emit(target)
    else:
        with open(target, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def grid_from_csv(source) -> BootMiGrid:
    def parse(fh):
        rows = list(csv.reader(fh))
        if not rows or rows[0] != ["b", "m", "theta"]:
            raise ValueError("expected header b,m,theta")
        triples = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:]]
        B = max(t[0] for t in triples) + 1
        M = max(t[1] for t in triples) + 1
        g = np.full((B, M), np.nan)
        for b, m, th in triples:
            g[b, m] = th
        if np.isnan(g).any():
            raise ValueError("incomplete grid")
        return BootMiGrid(g)

    if hasattr(source, "read"):
        return parse(source)
    with open(source, newline="", encoding="utf-8") as fh:
        return parse(fh)


def simplified_stats(data: TrialDataset) -> SimplifiedStats:
    """Group summaries from a single-follow-up dataset (baseline ignored).

    Works on observed data (missing endpoints excluded from every mean) and on
    completed data, where the pooled reference group includes the imputed
    active-arm dropouts.
    """
    if data.J != 1:
        raise ValueError("simplified-case statistics require J = 1")
    y1 = data.outcomes[:, 1]
    observed = ~np.isnan(y1)
    active = data.arm == 1
    dropped = data.dropout == 0

    n_a = int(active.sum())
    n_r = int((~active).sum())
    if n_a == 0 or n_r == 0:
        raise NoObservedReference("both arms must be present")
    pi1 = float(dropped[active].mean())

    comp = active & ~dropped & observed
    mu_a = float(y1[comp].mean()) if comp.any() else np.nan
    s2_a = float(y1[comp].var(ddof=1)) if comp.sum() >= 2 else np.nan

    ref_obs = ~active & observed
    n_r_obs = int(ref_obs.sum())
    if n_r_obs == 0:
        raise NoObservedReference("no observed reference-arm endpoints")
    mu_r_obs = float(y1[ref_obs].mean())

    pooled = (~active | (active & dropped)) & observed
    mu_r_com = float(y1[pooled].mean())
    s2_r = float(y1[pooled].var(ddof=1)) if pooled.sum() >= 2 else np.nan
    return SimplifiedStats(mu_a, mu_r_obs, mu_r_com, pi1, s2_a, s2_r, n_a, n_r, n_r_obs)


def simplified_point(data: TrialDataset) -> float:
    """Large-M limit of the J2R MI estimator in the simplified case."""
    s = simplified_stats(data)
    if s.pi_hat_1 >= 1.0:
        return 0.0
    return (s.mu_hat_a - s.mu_hat_r_obs) * (1.0 - s.pi_hat_1)


def simplified_mle_variance(s: SimplifiedStats) -> float:
    """Complete-data MLE variance of the treatment effect under the embedding
    model (large-n observed-information form)."""
    pi = s.pi_hat_1
    if pi >= 1.0:
        return 0.0
    return (1.0 - pi) * (
        s.sigma2_hat_r * (1.0 - pi) / (s.n_r + s.n_a * pi)
        + s.sigma2_hat_a / s.n_a
        + (s.mu_hat_r_com - s.mu_hat_a) ** 2 * pi / s.n_a
    )


def simplified_obs_variance(s: SimplifiedStats) -> float:
    """Observed-data MLE variance of the treatment effect.

    Identical in structure to the complete-data form except that the pooled
    mean carries only the information of reference patients whose endpoint was
    actually observed.
    """
    pi = s.pi_hat_1
    if pi >= 1.0:
        return 0.0
    return (1.0 - pi) * (
        s.sigma2_hat_r * (1.0 - pi) / s.n_r_obs
        + s.sigma2_hat_a / s.n_a
        + (s.mu_hat_r_obs - s.mu_hat_a) ** 2 * pi / s.n_a
    )


def simplified_var_active(
    mu_a: float, mu_r: float, sigma2_a: float, sigma2_r: float, pi_1: float
) -> float:
    """Marginal endpoint variance in the active arm under the two-group
    mixture (law of total variance)."""
    if not 0.0 <= pi_1 <= 1.0:
        raise ValueError("pi_1 must lie in [0, 1]")
    return (
        (mu_a - mu_r) ** 2 * pi_1 * (1.0 - pi_1)
        + sigma2_a * (1.0 - pi_1)
        + sigma2_r * pi_1
    )


def congenial_bayes_simplified(
    data: TrialDataset,
    n_draws: int,
    rng: np.random.Generator,
    alpha: float = 0.05,
) -> PosteriorSummary:
    """Posterior for the treatment effect under the embedding two-group model.

    Independent noninformative normal/inverse-chi-square posteriors for each
    group's mean and variance, a Beta(1,1)-Binomial posterior for the
    active-arm dropout probability, and each joint draw mapped through
    theta = (mu_a - mu_r) * (1 - pi_1).
    """
    if n_draws < 2:
        raise ValueError("n_draws must be at least 2")
    s_data = data.outcomes[:, 1]
    active = data.arm == 1
    observed = ~np.isnan(s_data)
    comp = active & observed & (data.dropout == 1)
    ref_obs = ~active & observed
    k0 = int((active & (data.dropout == 0)).sum())
    k1 = int(comp.sum())
    if k1 < 2:
        raise InsufficientData("need at least two observed active-arm endpoints")
    if ref_obs.sum() < 2:
        raise InsufficientData("need at least two observed reference-arm endpoints")

    def group_draws(vals):
        n = vals.size
        ybar, ss = vals.mean(), ((vals - vals.mean()) ** 2).sum()
        var = ss / rng.chisquare(n - 1, size=n_draws)
        return rng.normal(ybar, np.sqrt(var / n))

    mu_a = group_draws(s_data[comp])
    mu_r = group_draws(s_data[ref_obs])
    pi1 = rng.beta(1 + k0, 1 + k1, size=n_draws)
    theta = (mu_a - mu_r) * (1.0 - pi1)
    lo, hi = np.quantile(theta, [alpha / 2.0, 1.0 - alpha / 2.0])
    return PosteriorSummary(
        float(theta.mean()), float(theta.std(ddof=1)), (float(lo), float(hi)), n_draws
    )
