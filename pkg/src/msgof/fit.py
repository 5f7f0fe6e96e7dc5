"""Maximum composite pseudo-likelihood estimation.

The objective is the sum over blocks and site pairs of the log pair copula
density evaluated at the pseudo-observations, with the pair dependence
implied by the candidate parameters (storm-metric distance for Smith,
Gaussian-type correlation for Schlather).

Optimization runs over unconstrained reparametrizations so the simplex
search never touches a constraint boundary:

* Smith: log-Cholesky of the covariance, raw = (log L11, L21, log L22);
* Schlather: (log c, phi, logit r) with phi wrapped modulo pi into
  [-pi/2, pi/2). The model is exactly invariant under
  (c, phi, r) -> (r c, phi + pi/2, 1/r), so constraining r to (0, 1)
  selects the canonical representative by construction.

No analytic score is available, so a Nelder-Mead simplex search is used
with a small deterministic multistart; the first start moment-matches the
median nonparametric pairwise extremal coefficient at the median intersite
distance, the rest perturb the spatial scale on the log scale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit, ndtri

from . import models
from .pickands import EstimatorKind, PanelTerms, pairwise_extremal_coefficients
from .types import (
    FitError,
    ModelParams,
    PseudoObsPanel,
    SchlatherParams,
    SiteSet,
    SmithParams,
    ValidationError,
    pairwise_distances,
)

_RAW_CLIP = 25.0
_A_MIN, _A_MAX = 1e-10, 1e10
_RHO_MAX = 1.0 - 1e-10


@dataclass(frozen=True)
class PairSet:
    """Site index pairs entering the composite likelihood."""

    pairs: tuple[tuple[int, int], ...]
    cutoff: float | None = None

    def __post_init__(self):
        pairs = tuple(sorted((min(j, k), max(j, k)) for j, k in self.pairs))
        if not pairs:
            raise ValidationError("pair set must not be empty")
        if len(set(pairs)) != len(pairs):
            raise ValidationError("pairs must be distinct")
        for j, k in pairs:
            if j == k or j < 0:
                raise ValidationError(f"invalid pair ({j}, {k})")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def all_pairs(cls, d: int) -> "PairSet":
        return cls(tuple(itertools.combinations(range(d), 2)))

    @classmethod
    def within_distance(cls, sites: SiteSet, max_dist: float) -> "PairSet":
        dist = pairwise_distances(sites)
        pairs = tuple((j, k) for j, k in itertools.combinations(range(sites.d), 2)
                      if dist[j, k] <= max_dist)
        if not pairs:
            raise ValidationError(f"no site pair within distance {max_dist}")
        return cls(pairs, cutoff=max_dist)

    def validate_for(self, d: int) -> None:
        if max(k for _, k in self.pairs) >= d:
            raise ValidationError("pair index out of range for the site set")


@dataclass(frozen=True)
class OptConfig:
    max_evals: int = 2000
    rel_tol: float = 1e-8
    xatol: float = 1e-4
    n_starts: int = 5
    min_rows: int = 10


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    objective: float
    converged: bool
    n_evaluations: int
    start: ModelParams
    model: str


# ---------------------------------------------------------------------------
# reparametrizations
# ---------------------------------------------------------------------------

def smith_unconstrain(params: SmithParams) -> np.ndarray:
    l11 = np.sqrt(params.s11)
    l21 = params.s12 / l11
    l22 = np.sqrt(params.s22 - l21**2)
    return np.array([np.log(l11), l21, np.log(l22)])


def smith_constrain(raw) -> SmithParams:
    r0, l21, r2 = np.clip(np.asarray(raw, dtype=float), -_RAW_CLIP, _RAW_CLIP)
    l11 = np.exp(r0)
    l22 = np.exp(r2)
    s11 = l11**2
    s22 = l21**2 + l22**2
    # the factorization is PD for any raw vector, but s11*s22 - s12^2 can
    # cancel to <= 0 in floats when l22 << |l21|; nudge s12 inside the cone
    cap = np.sqrt(s11 * s22) * (1.0 - 1e-12)
    s12 = min(max(l11 * l21, -cap), cap)
    return SmithParams(s11, s12, s22)


def _wrap_angle(phi: float) -> float:
    return float(np.mod(phi + np.pi / 2.0, np.pi) - np.pi / 2.0)


def schlather_unconstrain(params: SchlatherParams) -> np.ndarray:
    return np.array([np.log(params.c), params.phi, logit(params.r)])


def schlather_constrain(raw) -> SchlatherParams:
    raw = np.asarray(raw, dtype=float)
    c = float(np.exp(np.clip(raw[0], -_RAW_CLIP, _RAW_CLIP)))
    phi = _wrap_angle(raw[1])
    r = float(expit(np.clip(raw[2], -30.0, 30.0)))
    return SchlatherParams(c, phi, r)


def unconstrain(params: ModelParams) -> np.ndarray:
    if isinstance(params, SmithParams):
        return smith_unconstrain(params)
    return schlather_unconstrain(params)


def constrain(kind: str, raw) -> ModelParams:
    if kind == "smith":
        return smith_constrain(raw)
    if kind == "schlather":
        return schlather_constrain(raw)
    raise ValidationError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# composite log pseudo-likelihood
# ---------------------------------------------------------------------------

class _PairData:
    """Per-fit precomputation: log pseudo-observations by pair, displacements."""

    def __init__(self, values: np.ndarray, sites: SiteSet, pairs: PairSet):
        pairs.validate_for(values.shape[1])
        j_idx = np.array([j for j, _ in pairs.pairs])
        k_idx = np.array([k for _, k in pairs.pairs])
        u1 = np.clip(values[:, j_idx], 1e-12, 1.0 - 1e-12)
        u2 = np.clip(values[:, k_idx], 1e-12, 1.0 - 1e-12)
        self.x = np.log(u1)
        self.y = np.log(u2)
        self.s = self.x + self.y
        self.t = self.x / self.s
        self.diffs = sites.coords[j_idx] - sites.coords[k_idx]
        self.n = values.shape[0]
        self.n_pairs = j_idx.size


def _log_density_sum(data: _PairData, terms_fn, dep: np.ndarray) -> float:
    A, A1, A2 = terms_fn(data.t, dep[None, :])
    bracket = (A - data.t * A1) * (A + (1.0 - data.t) * A1) - data.t * (1.0 - data.t) * A2 / data.s
    bracket = np.maximum(bracket, 1e-300)
    ll = data.s * A - data.x - data.y + np.log(bracket)
    return float(ll.sum())


def _smith_pair_distances(raw, diffs) -> np.ndarray:
    r0, l21, r2 = np.clip(np.asarray(raw, dtype=float), -_RAW_CLIP, _RAW_CLIP)
    l11 = np.exp(r0)
    l22 = np.exp(r2)
    # a^2 = |L^{-1} h|^2 for the lower-triangular storm Cholesky factor
    v1 = diffs[:, 0] / l11
    v2 = (diffs[:, 1] - l21 * v1) / l22
    return np.clip(np.sqrt(v1**2 + v2**2), _A_MIN, _A_MAX)


def _schlather_pair_correlations(raw, diffs) -> np.ndarray:
    params = schlather_constrain(raw)
    b = models.anisotropy_matrix(params)
    quad = np.einsum("mi,ij,mj->m", diffs, b, diffs)
    return np.minimum(np.exp(-quad / params.c**2), _RHO_MAX)


def _composite_loglik_prepared(kind: str, raw, data: _PairData) -> float:
    if kind == "smith":
        a = _smith_pair_distances(raw, data.diffs)
        return _log_density_sum(data, models._smith_A_terms, a)
    rho = _schlather_pair_correlations(raw, data.diffs)
    return _log_density_sum(data, models._schlather_A_terms, rho)


def composite_loglik(pseudo: PseudoObsPanel | np.ndarray, kind: str, raw_params,
                     sites: SiteSet, pairs: PairSet | None = None) -> float:
    """Composite log pseudo-likelihood at an unconstrained parameter vector.

    Returns -inf for parameter vectors outside the valid region so that
    derivative-free optimizers simply reject the step.
    """
    values = pseudo.values if isinstance(pseudo, PseudoObsPanel) else np.asarray(pseudo, dtype=float)
    if pairs is None:
        pairs = PairSet.all_pairs(values.shape[1])
    raw = np.asarray(raw_params, dtype=float)
    if not np.all(np.isfinite(raw)):
        return -np.inf
    data = _PairData(values, sites, pairs)
    try:
        out = _composite_loglik_prepared(kind, raw, data)
    except (ValidationError, FloatingPointError):
        return -np.inf
    return out if np.isfinite(out) else -np.inf


# ---------------------------------------------------------------------------
# starting points and the optimizer driver
# ---------------------------------------------------------------------------

def moment_start(pseudo, kind: str, sites: SiteSet) -> ModelParams:
    """Moment-matching start: invert the pair extremal coefficient relation
    at the median nonparametric CFG estimate and median intersite distance."""
    values = pseudo.values if isinstance(pseudo, PseudoObsPanel) else np.asarray(pseudo, dtype=float)
    terms = PanelTerms.from_panel(values)
    xi = pairwise_extremal_coefficients(values, EstimatorKind.CFG, terms)
    iu = np.triu_indices(values.shape[1], k=1)
    xi_med = float(np.median(xi[iu]))
    h_med = float(np.median(pairwise_distances(sites)[iu]))
    if kind == "smith":
        xi_med = min(max(xi_med, 1.02), 1.95)
        s = h_med / (2.0 * ndtri(xi_med / 2.0))
        return SmithParams(s**2, 0.0, s**2)
    if kind == "schlather":
        xi_med = min(max(xi_med, 1.01), 1.70)
        rho = min(max(1.0 - 2.0 * (xi_med - 1.0) ** 2, 0.02), 0.98)
        c = h_med / np.sqrt(-np.log(rho))
        return SchlatherParams(c, 0.0, 0.7)
    raise ValidationError(f"unknown model kind {kind!r}")


def _scaled_start(params: ModelParams, log_offset: float) -> ModelParams:
    if isinstance(params, SmithParams):
        f = np.exp(2.0 * log_offset)
        return SmithParams(params.s11 * f, params.s12 * f, params.s22 * f)
    return SchlatherParams(params.c * np.exp(log_offset), params.phi, params.r)


def default_starts(pseudo, kind: str, sites: SiteSet, n_starts: int) -> list[ModelParams]:
    base = moment_start(pseudo, kind, sites)
    offsets = [0.0, 1.0, -1.0, 2.0, -2.0]
    return [_scaled_start(base, off) for off in offsets[:max(1, n_starts)]]


def fit_model(pseudo: PseudoObsPanel | np.ndarray, kind: str, sites: SiteSet,
              pairs: PairSet | None = None, opt: OptConfig = OptConfig(),
              warm_start: ModelParams | None = None) -> FitResult:
    """Maximize the composite log pseudo-likelihood.

    With ``warm_start`` the search begins at the given parameters and the
    multistart is used only as a fallback if that single run fails. Raises
    FitError (carrying the best attempt) when no start converges.
    """
    values = pseudo.values if isinstance(pseudo, PseudoObsPanel) else np.asarray(pseudo, dtype=float)
    if values.shape[0] < opt.min_rows:
        raise ValidationError(f"need at least {opt.min_rows} blocks to fit, got {values.shape[0]}")
    if pairs is None:
        pairs = PairSet.all_pairs(values.shape[1])
    data = _PairData(values, sites, pairs)

    def neg(raw):
        return -_composite_loglik_prepared(kind, raw, data)

    if warm_start is not None:
        starts = [warm_start]
    else:
        starts = default_starts(values, kind, sites, opt.n_starts)

    best_converged = None
    best_any = None
    total_evals = 0
    attempt = 0
    while True:
        for start in starts:
            raw0 = unconstrain(start)
            f0 = neg(raw0)
            if not np.isfinite(f0):
                continue
            res = minimize(neg, raw0, method="Nelder-Mead",
                           options=dict(maxfev=opt.max_evals, xatol=opt.xatol,
                                        fatol=opt.rel_tol * max(1.0, abs(f0)),
                                        adaptive=False))
            total_evals += res.nfev
            cand = FitResult(params=constrain(kind, res.x), objective=float(-res.fun),
                             converged=bool(res.success), n_evaluations=total_evals,
                             start=start, model=kind)
            if best_any is None or cand.objective > best_any.objective:
                best_any = cand
            if cand.converged and (best_converged is None
                                   or cand.objective > best_converged.objective):
                best_converged = cand
        if best_converged is not None:
            return FitResult(best_converged.params, best_converged.objective, True,
                             total_evals, best_converged.start, kind)
        if warm_start is not None and attempt == 0:
            # warm start failed; fall back to the standard multistart
            starts = default_starts(values, kind, sites, opt.n_starts)
            attempt += 1
            continue
        break
    raise FitError("no optimizer start converged", best=best_any)
