"""Goodness-of-fit statistics and the one- and two-level parametric
bootstrap procedures that turn them into approximate p-values.

A statistic compares a rank-based nonparametric extremal-coefficient
estimate with the model-implied value at the fitted parameters,

    S = sqrt(n) * | xi_hat_B - xi_B(theta_hat) |,

either for the full site set (global) or summed over site pairs. The
model-implied value comes from a closed form where one exists (always for
pairs; Smith in any dimension through the multivariate normal c.d.f.) and
otherwise from applying the same nonparametric estimator to a fresh
simulated sample of size m from the fitted copula (the second bootstrap
level; Schlather has no closed form beyond pairs).

One-level bootstrap: fit, compute the statistic, then for k = 1..N draw an
n-sample from the fitted copula, re-rank, re-fit, and recompute the
statistic; the p-value is the fraction of replicate statistics at or above
the observed one. The two-level variant additionally draws an m-sample for
the observed statistic and one per replicate (from the replicate's fitted
parameters) to estimate the null coefficient.

Replicates run in deterministic RNG substreams keyed by the replicate
index, so reports are bit-identical for a fixed seed at any parallelism
degree; replicate k draws its panel from substream k and its second-level
sample from substream N + k, and the observed-statistic sample uses
substream 0. Failed replicate re-fits are dropped (recorded in the
report); more than 5% failures aborts.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import models, mvn
from .fit import FitResult, OptConfig, PairSet, fit_model
from .pickands import (
    EstimatorKind,
    PanelTerms,
    estimate_A,
    extremal_coefficient_np,
    pairwise_extremal_coefficients,
    zeta,
)
from .ranks import pseudo_observations
from .simulate import SimConfig, sample_copula
from .types import (
    MaximaPanel,
    FitError,
    ModelParams,
    NumericalError,
    PseudoObsPanel,
    SiteSet,
    SubsetB,
    ValidationError,
    model_kind,
    pairwise_distances,
    weight_for_subset,
)

DEFAULT_SECOND_LEVEL_M = 2500


@dataclass(frozen=True)
class StatisticSpec:
    """Which statistic to compute and how the null coefficient is obtained.

    ``gamma`` sets the second-level sample size as m = floor(gamma * n)
    when the null coefficient is simulated and no explicit m is supplied;
    left unset, m defaults to DEFAULT_SECOND_LEVEL_M.
    """

    kind: Literal["global", "pairwise_sum"] = "global"
    estimator: EstimatorKind = EstimatorKind.CFG
    null_xi: Literal["closed_form", "simulated"] = "closed_form"
    gamma: float | None = None
    min_dist: float = 0.0

    def __post_init__(self):
        if self.kind not in ("global", "pairwise_sum"):
            raise ValidationError(f"unknown statistic kind {self.kind!r}")
        if self.null_xi not in ("closed_form", "simulated"):
            raise ValidationError(f"unknown null_xi {self.null_xi!r}")
        object.__setattr__(self, "estimator", EstimatorKind(self.estimator))
        if self.gamma is not None and self.gamma <= 1.0:
            raise ValidationError("gamma must exceed 1")
        if self.kind == "pairwise_sum" and self.null_xi != "closed_form":
            raise ValidationError("the pairwise statistic always uses closed-form pair coefficients")
        if self.min_dist < 0.0:
            raise ValidationError("min_dist must be nonnegative")


@dataclass
class GofReport:
    statistic: float
    p_value: float
    n_bootstrap: int
    n_requested: int
    n_failed: int
    replicate_stats: np.ndarray
    fit: FitResult
    spec: StatisticSpec
    model: str
    m: int | None
    seed: int
    substreams: dict
    smoothed: bool
    timing: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "model": self.model,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_bootstrap": self.n_bootstrap,
            "n_requested": self.n_requested,
            "n_failed": self.n_failed,
            "replicate_stats": [float(s) for s in self.replicate_stats],
            "fit": {
                "params": self.fit.params.to_dict(),
                "objective": self.fit.objective,
                "converged": self.fit.converged,
                "n_evaluations": self.fit.n_evaluations,
            },
            "spec": {
                "kind": self.spec.kind,
                "estimator": self.spec.estimator.value,
                "null_xi": self.spec.null_xi,
                "gamma": self.spec.gamma,
                "min_dist": self.spec.min_dist,
            },
            "m": self.m,
            "seed": self.seed,
            "substreams": self.substreams,
            "smoothed": self.smoothed,
            "timing": self.timing,
        }


def _resolve_m(spec: StatisticSpec, n: int, m_override: int | None) -> int | None:
    if spec.null_xi != "simulated":
        return None
    if m_override is not None:
        if m_override < 2:
            raise ValidationError("m must be at least 2")
        return int(m_override)
    if spec.gamma is not None:
        return max(2, int(np.floor(spec.gamma * n)))
    return DEFAULT_SECOND_LEVEL_M


def _null_xi_subset(subset: SubsetB, params: ModelParams, sites: SiteSet,
                    mvn_tol: float, mvn_seed: int) -> float:
    """Closed-form model-implied extremal coefficient for a subset."""
    kind = model_kind(params)
    if kind == "smith":
        return models.smith_extremal_coefficient(subset, params, sites, tol=mvn_tol, seed=mvn_seed)
    if subset.b == 2:
        j, k = subset.indices
        rho = models.schlather_correlation(sites.coords[j] - sites.coords[k], params)
        return models.schlather_pair_extremal_coefficient(rho)
    raise ValidationError("no closed form for Schlather subsets beyond pairs; "
                          "use a simulated null coefficient")


def _simulated_xi(subset: SubsetB, params: ModelParams, sites: SiteSet, estimator: EstimatorKind,
                  m: int, sim_seed: int, sim_stream: int, sim_cfg: SimConfig) -> float:
    cfg = SimConfig(seed=sim_seed, stream_id=sim_stream,
                    truncation_threshold=sim_cfg.truncation_threshold,
                    max_points=sim_cfg.max_points, jitter=sim_cfg.jitter,
                    center_padding=sim_cfg.center_padding)
    sample = sample_copula(params, sites, m, cfg)
    pseudo = pseudo_observations(sample)
    return extremal_coefficient_np(pseudo, subset, estimator)


def statistic_SB(pseudo: PseudoObsPanel, subset: SubsetB, fit_params: ModelParams,
                 sites: SiteSet, spec: StatisticSpec, *, m: int | None = None,
                 sim_seed: int = 0, sim_stream: int = 0, sim_cfg: SimConfig = SimConfig(),
                 mvn_tol: float = mvn.DEFAULT_TOL, mvn_seed: int = 0) -> float:
    """sqrt(n) times the absolute gap between the nonparametric and the
    model-implied extremal coefficient of one subset."""
    xi_np = extremal_coefficient_np(pseudo, subset, spec.estimator)
    if spec.null_xi == "closed_form":
        xi_null = _null_xi_subset(subset, fit_params, sites, mvn_tol, mvn_seed)
    else:
        m = _resolve_m(spec, pseudo.n, m)
        xi_null = _simulated_xi(subset, fit_params, sites, spec.estimator,
                                m, sim_seed, sim_stream, sim_cfg)
    return float(np.sqrt(pseudo.n) * abs(xi_np - xi_null))


def _pairwise_model_matrix(params: ModelParams, sites: SiteSet) -> np.ndarray:
    if model_kind(params) == "smith":
        return models.smith_pairwise_extremal_coefficients(params, sites)
    return models.schlather_pairwise_extremal_coefficients(params, sites)


def statistic_pairwise_sum(pseudo: PseudoObsPanel, fit_params: ModelParams, sites: SiteSet,
                           spec: StatisticSpec, min_dist: float | None = None,
                           terms: PanelTerms | None = None) -> float:
    """Sum of the pair statistics over all pairs at distance >= min_dist."""
    if min_dist is None:
        min_dist = spec.min_dist
    dist = pairwise_distances(sites)
    iu = np.triu_indices(sites.d, k=1)
    keep = dist[iu] >= min_dist
    if not keep.any():
        raise ValidationError(f"no site pair at distance >= {min_dist}")
    xi_np = pairwise_extremal_coefficients(pseudo, spec.estimator, terms)[iu][keep]
    xi_model = _pairwise_model_matrix(fit_params, sites)[iu][keep]
    return float(np.sqrt(pseudo.n) * np.abs(xi_np - xi_model).sum())


def decompose_statistic(pseudo: PseudoObsPanel, subset: SubsetB, theta0: ModelParams,
                        fit_params: ModelParams, sites: SiteSet, spec: StatisticSpec, *,
                        m: int | None = None, sim_seed: int = 0,
                        sim_cfg: SimConfig = SimConfig(),
                        mvn_tol: float = mvn.DEFAULT_TOL, mvn_seed: int = 0
                        ) -> tuple[float, float]:
    """Centered terms sqrt(n)(xi_hat - xi_theta0) and
    sqrt(n)(xi_theta_hat - xi_theta0); the absolute difference of the two
    equals statistic_SB at the same seed (testing hook)."""
    root_n = np.sqrt(pseudo.n)
    xi_np = extremal_coefficient_np(pseudo, subset, spec.estimator)
    if spec.null_xi == "closed_form":
        xi_fit = _null_xi_subset(subset, fit_params, sites, mvn_tol, mvn_seed)
        xi_true = _null_xi_subset(subset, theta0, sites, mvn_tol, mvn_seed)
    else:
        m = _resolve_m(spec, pseudo.n, m)
        xi_fit = _simulated_xi(subset, fit_params, sites, spec.estimator, m,
                               sim_seed, 0, sim_cfg)
        xi_true = _simulated_xi(subset, theta0, sites, spec.estimator, m,
                                sim_seed, 1, sim_cfg)
    return (float(root_n * (xi_np - xi_true)), float(root_n * (xi_fit - xi_true)))


# ---------------------------------------------------------------------------
# bootstrap machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _BootTask:
    """Everything a worker needs to run one replicate."""

    model: str
    theta_hat: ModelParams
    sites: SiteSet
    specs: tuple[StatisticSpec, ...]
    n: int
    N: int
    m: int | None
    seed: int
    pairs: PairSet
    opt: OptConfig
    sim_cfg: SimConfig
    mvn_tol: float
    mvn_seed: int


def _statistics_bundle(pseudo: PseudoObsPanel, params: ModelParams, task: _BootTask,
                       sim_stream: int) -> list[float]:
    """Evaluate every spec on one panel, sharing the expensive pieces.

    The closed-form null coefficient does not depend on the estimator, and
    all simulated-null specs share one second-level sample, so each is
    computed once per panel.
    """
    terms = PanelTerms.from_panel(pseudo)
    full = SubsetB.full(task.sites.d)
    w_full = weight_for_subset(full)
    zeta_full = None
    root_n = np.sqrt(pseudo.n)

    closed_global: float | None = None
    sim_pseudo: PseudoObsPanel | None = None
    sim_terms: PanelTerms | None = None
    sim_zeta = None

    out = []
    for spec in task.specs:
        if spec.kind == "pairwise_sum":
            out.append(statistic_pairwise_sum(pseudo, params, task.sites, spec, terms=terms))
            continue
        if zeta_full is None:
            zeta_full = zeta(pseudo, w_full)
        xi_np = full.b * estimate_A(pseudo, w_full, spec.estimator, terms=terms,
                                    zeta_cache=zeta_full)
        if spec.null_xi == "closed_form":
            if closed_global is None:
                closed_global = _null_xi_subset(full, params, task.sites,
                                                task.mvn_tol, task.mvn_seed)
            xi_null = closed_global
        else:
            if sim_pseudo is None:
                cfg = SimConfig(seed=task.seed, stream_id=sim_stream,
                                truncation_threshold=task.sim_cfg.truncation_threshold,
                                max_points=task.sim_cfg.max_points,
                                jitter=task.sim_cfg.jitter,
                                center_padding=task.sim_cfg.center_padding)
                sample = sample_copula(params, task.sites, task.m, cfg)
                sim_pseudo = pseudo_observations(sample)
                sim_terms = PanelTerms.from_panel(sim_pseudo)
                sim_zeta = zeta(sim_pseudo, w_full)
            xi_null = full.b * estimate_A(sim_pseudo, w_full, spec.estimator,
                                          terms=sim_terms, zeta_cache=sim_zeta)
        out.append(float(root_n * abs(xi_np - xi_null)))
    return out


def _run_replicate(task: _BootTask, k: int):
    cfg = SimConfig(seed=task.seed, stream_id=k,
                    truncation_threshold=task.sim_cfg.truncation_threshold,
                    max_points=task.sim_cfg.max_points, jitter=task.sim_cfg.jitter,
                    center_padding=task.sim_cfg.center_padding)
    sample = sample_copula(task.theta_hat, task.sites, task.n, cfg)
    pseudo = pseudo_observations(sample)
    try:
        refit = fit_model(pseudo, task.model, task.sites, pairs=task.pairs,
                          opt=task.opt, warm_start=task.theta_hat)
    except FitError:
        return k, None
    return k, _statistics_bundle(pseudo, refit.params, task, sim_stream=task.N + k)


def _replicate_star(args):
    return _run_replicate(*args)


def _validate_specs(specs, model: str, d: int) -> None:
    if not specs:
        raise ValidationError("at least one statistic spec is required")
    for spec in specs:
        if (spec.kind == "global" and spec.null_xi == "closed_form"
                and model == "schlather" and d >= 3):
            raise ValidationError("the global Schlather statistic needs a simulated "
                                  "null coefficient (no closed form beyond pairs)")


def bootstrap_suite(panel: MaximaPanel, model: str, sites: SiteSet,
                    specs: list[StatisticSpec] | tuple[StatisticSpec, ...], N: int,
                    seed: int, pairs: PairSet | None = None, m_override: int | None = None,
                    workers: int = 1, opt: OptConfig = OptConfig(),
                    sim_cfg: SimConfig = SimConfig(), smoothed: bool = False,
                    mvn_tol: float = mvn.DEFAULT_TOL, mvn_seed: int = 0
                    ) -> list[GofReport]:
    """Run one parametric bootstrap and evaluate several statistics on the
    shared replicate samples and re-fits (one report per spec).

    All simulated-null specs in one call must resolve to the same
    second-level sample size m.
    """
    specs = tuple(specs)
    if N < 1:
        raise ValidationError("N must be at least 1")
    if workers < 1:
        raise ValidationError("workers must be at least 1")
    _validate_specs(specs, model, sites.d)
    if panel.d != sites.d:
        raise ValidationError("panel and site set disagree on d")
    n = panel.n

    ms = {_resolve_m(spec, n, m_override) for spec in specs if spec.null_xi == "simulated"}
    if len(ms) > 1:
        raise ValidationError(f"simulated-null specs disagree on m: {sorted(ms)}")
    m = ms.pop() if ms else None

    t0 = time.perf_counter()
    pseudo = pseudo_observations(panel)
    fit = fit_model(pseudo, model, sites, pairs=pairs, opt=opt)
    t_fit = time.perf_counter()

    task = _BootTask(model=model, theta_hat=fit.params, sites=sites, specs=specs,
                     n=n, N=N, m=m, seed=seed,
                     pairs=pairs if pairs is not None else PairSet.all_pairs(sites.d),
                     opt=opt, sim_cfg=sim_cfg, mvn_tol=mvn_tol, mvn_seed=mvn_seed)
    observed = _statistics_bundle(pseudo, fit.params, task, sim_stream=0)
    t_obs = time.perf_counter()

    results: dict[int, list[float] | None] = {}
    args = [(task, k) for k in range(1, N + 1)]
    if workers > 1:
        chunk = max(1, N // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, stats in pool.map(_replicate_star, args, chunksize=chunk):
                results[k] = stats
    else:
        for a in args:
            k, stats = _replicate_star(a)
            results[k] = stats
    t_rep = time.perf_counter()

    ok = [k for k in range(1, N + 1) if results[k] is not None]
    n_failed = N - len(ok)
    if n_failed > 0.05 * N:
        raise NumericalError(f"{n_failed} of {N} replicate fits failed (> 5%); "
                             "the null distribution would be biased")

    timing = {"fit": t_fit - t0, "observed_statistic": t_obs - t_fit,
              "replicates": t_rep - t_obs, "total": t_rep - t0}
    substreams = {"observed_m_sample": "stream 0", "replicate_k_sample": "stream k",
                  "second_level_k_sample": f"stream {N} + k"}

    reports = []
    for i, spec in enumerate(specs):
        reps = np.array([results[k][i] for k in ok])
        count = int(np.sum(reps >= observed[i]))
        if smoothed:
            p = (count + 1.0) / (len(ok) + 1.0)
        else:
            p = count / len(ok)
        reports.append(GofReport(
            statistic=float(observed[i]), p_value=float(p), n_bootstrap=len(ok),
            n_requested=N, n_failed=n_failed, replicate_stats=reps, fit=fit,
            spec=spec, model=model, m=m if spec.null_xi == "simulated" else None,
            seed=seed, substreams=substreams, smoothed=smoothed, timing=dict(timing)))
    return reports


def bootstrap_one_level(panel: MaximaPanel, model: str, sites: SiteSet,
                        spec: StatisticSpec, N: int, seed: int,
                        pairs: PairSet | None = None, **kwargs) -> GofReport:
    """One-level parametric bootstrap; the null coefficient must have a
    closed form (any pairwise statistic, or a global Smith statistic)."""
    if spec.null_xi != "closed_form":
        raise ValidationError("one-level bootstrap requires a closed-form null coefficient")
    return bootstrap_suite(panel, model, sites, [spec], N, seed, pairs=pairs, **kwargs)[0]


def bootstrap_two_level(panel: MaximaPanel, model: str, sites: SiteSet,
                        spec: StatisticSpec, N: int, m_override: int | None = None,
                        seed: int = 0, pairs: PairSet | None = None, **kwargs) -> GofReport:
    """Two-level parametric bootstrap; the null coefficient is estimated on
    a fresh m-sample from the fitted copula at each level."""
    if spec.null_xi != "simulated":
        raise ValidationError("two-level bootstrap requires a simulated null coefficient")
    return bootstrap_suite(panel, model, sites, [spec], N, seed, pairs=pairs,
                           m_override=m_override, **kwargs)[0]
