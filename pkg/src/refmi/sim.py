"""Scenario-driven Monte-Carlo study engine.

A scenario fixes the per-arm data-generating truths, a dropout mechanism, the
imputation strategy and the estimators under study; the engine replicates
trial generation and estimation, then aggregates point-estimate spread,
average estimated variances, variance ratios, CI coverage and rejection
rates with Monte-Carlo standard errors. Replication r of a scenario always
sees the stream derived from (seed, r), so results are independent of worker
count and scheduling.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from .analyze import analyze_ancova, analyze_diff_means, rubin_pool, _t_quantile
from .data import TrialDataset
from .errors import RefmiError
from .fit import ArmModel
from .fvar import (
    boot_then_impute,
    congenial_bayes_simplified,
    simplified_obs_variance,
    simplified_point,
    simplified_stats,
    vonhippel_pool,
)
from .impute import Strategy, impute_dataset

ESTIMATORS = ("rubin", "bootMI", "simplifiedMLE", "congenialBayes")


@dataclass(frozen=True)
class DropoutSpec:
    """Dropout mechanism: per-visit MCAR hazards or a MAR logistic hazard.

    Hazards act sequentially: a patient seen at visit j-1 drops before visit j
    with the visit-j hazard, so dropout never depends on unobserved outcomes.
    """

    kind: str  # "mcar" | "mar_logistic"
    rates_reference: tuple = ()
    rates_active: tuple = ()
    intercept: float = 0.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mcar", "mar_logistic"):
            raise ValueError(f"unknown dropout kind {self.kind!r}")
        for r in (*self.rates_reference, *self.rates_active):
            if not 0.0 <= r <= 1.0:
                raise ValueError("dropout rates must lie in [0, 1]")

    def hazards(self, arm: int, j: int, last_y: np.ndarray) -> np.ndarray:
        if self.kind == "mcar":
            rates = self.rates_active if arm == 1 else self.rates_reference
            rate = rates[j - 1] if j - 1 < len(rates) else 0.0
            return np.full(last_y.shape[0], float(rate))
        return expit(self.intercept + self.slope * last_y)


@dataclass(frozen=True)
class ScenarioConfig:
    n_a: int
    n_r: int
    J: int
    true_ref: ArmModel
    true_act: ArmModel
    dropout: DropoutSpec
    strategy: Strategy = Strategy.J2R
    estimators: tuple = ("rubin",)
    M: int = 25
    B: int = 200
    M_boot: int = 2
    bayes_draws: int = 2000
    reps: int = 1000
    alpha: float = 0.05
    seed: int = 0
    analysis: str = "diff_means"
    true_theta: float | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.true_ref.dim != self.J + 1 or self.true_act.dim != self.J + 1:
            raise ValueError("arm-model truths must have J+1 visits")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}")

    @property
    def theta_truth(self) -> float:
        if self.true_theta is not None:
            return self.true_theta
        return float(self.true_act.mu[-1] - self.true_ref.mu[-1])


def generate_trial(cfg: ScenarioConfig, rng: np.random.Generator) -> TrialDataset:
    """Draw one trial: per-arm multivariate normal outcomes with sequential
    dropout; the baseline is always observed."""
    blocks = []
    arms = []
    for arm, model, n in ((0, cfg.true_ref, cfg.n_r), (1, cfg.true_act, cfg.n_a)):
        L = np.linalg.cholesky(model.sigma)
        y = model.mu + rng.standard_normal((n, cfg.J + 1)) @ L.T
        d = np.full(n, cfg.J, dtype=int)
        alive = np.ones(n, dtype=bool)
        for j in range(1, cfg.J + 1):
            p = cfg.dropout.hazards(arm, j, y[:, j - 1])
            drop = alive & (rng.random(n) < p)
            d[drop] = j - 1
            alive &= ~drop
        cols = np.arange(cfg.J + 1)
        y[cols[None, :] > d[:, None]] = np.nan
        blocks.append(y)
        arms.append(np.full(n, arm))
    outcomes = np.concatenate(blocks)
    arm = np.concatenate(arms)
    ids = [f"p{i}" for i in range(outcomes.shape[0])]
    return TrialDataset(ids, arm, outcomes, validate=False)


def _normal_interval(point: float, var: float, alpha: float) -> tuple[float, float]:
    half = _t_quantile(1.0 - alpha / 2.0, np.inf) * np.sqrt(max(var, 0.0))
    return point - half, point + half


def run_replication(cfg: ScenarioConfig, rep: int) -> dict:
    """One replication: generate a trial, apply every requested estimator."""
    data_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep, 0)))
    data = generate_trial(cfg, data_rng)
    analyze = analyze_diff_means if cfg.analysis == "diff_means" else analyze_ancova
    out = {"rep": rep}
    for k, name in enumerate(cfg.estimators, start=1):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep, k)))
        try:
            if name == "rubin":
                imps = impute_dataset(data, cfg.strategy, cfg.M, True, rng)
                pooled = rubin_pool([analyze(d) for d in imps], cfg.alpha)
                rec = (pooled.theta_bar, pooled.t_total, pooled.ci)
            elif name == "simplifiedMLE":
                point = simplified_point(data)
                var = simplified_obs_variance(simplified_stats(data))
                rec = (point, var, _normal_interval(point, var, cfg.alpha))
            elif name == "bootMI":
                grid = boot_then_impute(
                    data, cfg.strategy, cfg.B, cfg.M_boot, rng, method=cfg.analysis
                )
                est = vonhippel_pool(grid, cfg.alpha)
                rec = (est.theta_bar, est.v_hat, est.ci)
            else:  # congenialBayes
                s = congenial_bayes_simplified(data, cfg.bayes_draws, rng, cfg.alpha)
                rec = (s.mean, s.sd**2, s.ci)
            point, var, (lo, hi) = rec
            out[name] = {
                "point": float(point),
                "variance": float(var),
                "ci": (float(lo), float(hi)),
            }
        except RefmiError as exc:
            out[name] = {"error": str(exc)}
    return out


@dataclass(frozen=True)
class SimReport:
    scenario: dict
    estimators: dict
    n_reps: int
    n_failed: int
    runtime_seconds: float

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "estimators": self.estimators,
                "n_reps": self.n_reps,
                "n_failed": self.n_failed,
                "runtime_seconds": self.runtime_seconds,
            },
            indent=indent,
            sort_keys=True,
        )


def aggregate(cfg: ScenarioConfig, records: list, runtime: float = 0.0) -> SimReport:
    """Fold per-replication records into a SimReport.

    Aggregation is a pure function of the record set, so merging two
    half-runs equals aggregating the full run.
    """
    records = sorted(records, key=lambda r: r["rep"])
    truth = cfg.theta_truth
    report = {}
    n_failed = 0
    for name in cfg.estimators:
        ok = [r[name] for r in records if "error" not in r[name]]
        n_err = len(records) - len(ok)
        n_failed = max(n_failed, n_err)
        if n_err > 0.01 * len(records):
            raise RefmiError(
                f"estimator {name}: {n_err}/{len(records)} replications failed"
            )
        points = np.array([r["point"] for r in ok])
        variances = np.array([r["variance"] for r in ok])
        cis = np.array([r["ci"] for r in ok])
        R = points.size
        emp_var = float(points.var(ddof=1)) if R >= 2 else np.nan
        covered = (cis[:, 0] <= truth) & (truth <= cis[:, 1])
        rejected = (cis[:, 0] > 0.0) | (cis[:, 1] < 0.0)
        coverage = float(covered.mean())
        rejection = float(rejected.mean())
        report[name] = {
            "mean_point": float(points.mean()),
            "empirical_sd": float(np.sqrt(emp_var)) if R >= 2 else None,
            "mean_variance": float(variances.mean()),
            "variance_ratio": float(variances.mean() / emp_var) if R >= 2 else None,
            "coverage": coverage,
            "rejection_rate": rejection,
            "n_used": R,
            "mc_se": {
                "mean_point": float(np.sqrt(emp_var / R)) if R >= 2 else None,
                "empirical_var": float(emp_var * np.sqrt(2.0 / (R - 1))) if R >= 2 else None,
                "coverage": float(np.sqrt(coverage * (1 - coverage) / R)),
                "rejection_rate": float(np.sqrt(rejection * (1 - rejection) / R)),
            },
        }
    return SimReport(scenario_to_dict(cfg), report, len(records), n_failed, runtime)


def run_replications(cfg: ScenarioConfig, start: int, stop: int, n_jobs: int = 1) -> list:
    reps = range(start, stop)
    if n_jobs == 1:
        return [run_replication(cfg, r) for r in reps]
    return Parallel(n_jobs=n_jobs)(delayed(run_replication)(cfg, r) for r in reps)


def run_scenario(cfg: ScenarioConfig, n_jobs: int = 1) -> SimReport:
    t0 = time.perf_counter()
    records = run_replications(cfg, 0, cfg.reps, n_jobs=n_jobs)
    return aggregate(cfg, records, runtime=time.perf_counter() - t0)


# --- configuration (de)serialization ------------------------------------------

def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = {
        "n_a": cfg.n_a,
        "n_r": cfg.n_r,
        "J": cfg.J,
        "true_ref": {"mu": cfg.true_ref.mu.tolist(), "sigma": cfg.true_ref.sigma.tolist()},
        "true_act": {"mu": cfg.true_act.mu.tolist(), "sigma": cfg.true_act.sigma.tolist()},
        "dropout": {
            "kind": cfg.dropout.kind,
            "rates_reference": list(cfg.dropout.rates_reference),
            "rates_active": list(cfg.dropout.rates_active),
            "intercept": cfg.dropout.intercept,
            "slope": cfg.dropout.slope,
        },
        "strategy": cfg.strategy.value,
        "estimators": list(cfg.estimators),
        "M": cfg.M,
        "B": cfg.B,
        "M_boot": cfg.M_boot,
        "bayes_draws": cfg.bayes_draws,
        "reps": cfg.reps,
        "alpha": cfg.alpha,
        "seed": cfg.seed,
        "analysis": cfg.analysis,
    }
    if cfg.true_theta is not None:
        d["true_theta"] = cfg.true_theta
    return d


def scenario_from_dict(d: dict) -> ScenarioConfig:
    def model(md):
        return ArmModel(np.asarray(md["mu"], float), np.asarray(md["sigma"], float))

    dd = d["dropout"]
    dropout = DropoutSpec(
        kind=dd["kind"],
        rates_reference=tuple(dd.get("rates_reference", ())),
        rates_active=tuple(dd.get("rates_active", ())),
        intercept=float(dd.get("intercept", 0.0)),
        slope=float(dd.get("slope", 0.0)),
    )
    return ScenarioConfig(
        n_a=int(d["n_a"]),
        n_r=int(d["n_r"]),
        J=int(d["J"]),
        true_ref=model(d["true_ref"]),
        true_act=model(d["true_act"]),
        dropout=dropout,
        strategy=Strategy(d.get("strategy", "j2r")),
        estimators=tuple(d.get("estimators", ("rubin",))),
        M=int(d.get("M", 25)),
        B=int(d.get("B", 200)),
        M_boot=int(d.get("M_boot", 2)),
        bayes_draws=int(d.get("bayes_draws", 2000)),
        reps=int(d.get("reps", 1000)),
        alpha=float(d.get("alpha", 0.05)),
        seed=int(d.get("seed", 0)),
        analysis=d.get("analysis", "diff_means"),
        true_theta=d.get("true_theta"),
    )


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario from a TOML or JSON file (by extension)."""
    path = str(path)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return scenario_from_dict(tomllib.load(fh))
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
