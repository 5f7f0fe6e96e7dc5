"""Closed-form kernels of the Smith and Schlather models.

Bivariate distribution functions, extreme-value pair copula densities for
the composite likelihood, Pickands dependence functions, and model-implied
extremal coefficients.

An extreme-value copula in dimension two is
``C(u, v) = exp(s * A(t))`` with ``s = log(uv)`` and ``t = log(u)/s``,
so its density follows from A and its first two derivatives:

    c(u, v) = C(u, v)/(uv) * [ (A - t A') (A + (1-t) A') - t (1-t) A'' / s ].

Both families admit clean derivative expressions.  For the Hüsler-Reiss
(Smith pair) function, with z1 = a/2 + log(t/(1-t))/a and z2 = a - z1, the
identity t*phi(z1) = (1-t)*phi(z2) collapses the derivatives to

    A  = t Phi(z1) + (1-t) Phi(z2),
    A' = Phi(z1) - Phi(z2),
    A'' = phi(z1) / (a t (1-t)^2),

and for the Schlather pair function, with q = 1 - 2 (rho+1) t (1-t),

    A  = (1 + sqrt(q)) / 2,
    A' = -(rho+1) (1-2t) / (2 sqrt(q)),
    A'' = (1 - rho^2) / (2 q^{3/2}).

Inputs on the copula scale are clamped to [1e-12, 1 - 1e-12] before the
log transforms; rank-based pseudo-observations never reach those bounds,
but simulated panels mapped through exp(-1/z) can approach them.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from . import mvn
from .types import (
    NumericalError,
    SchlatherParams,
    SiteSet,
    SmithParams,
    SubsetB,
    ValidationError,
)

_CLAMP = 1e-12


def _clamp_unit(u):
    return np.clip(np.asarray(u, dtype=float), _CLAMP, 1.0 - _CLAMP)


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# bivariate distribution functions on the unit-Frechet scale
# ---------------------------------------------------------------------------

def smith_bivariate_cdf(z1, z2, a):
    """P(Z1 <= z1, Z2 <= z2) for a Smith pair at Mahalanobis distance a."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any(z1 <= 0.0) or np.any(z2 <= 0.0):
        raise ValidationError("field values must be positive")
    if np.any(np.asarray(a) <= 0.0):
        raise ValidationError("Mahalanobis distance must be positive")
    lr = np.log(z2 / z1)
    v = ndtr(a / 2.0 + lr / a) / z1 + ndtr(a / 2.0 - lr / a) / z2
    out = np.exp(-v)
    return float(out) if out.ndim == 0 else out


def schlather_bivariate_cdf(z1, z2, rho):
    """P(Z1 <= z1, Z2 <= z2) for a Schlather pair with correlation rho."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any(z1 <= 0.0) or np.any(z2 <= 0.0):
        raise ValidationError("field values must be positive")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= -1.0) or np.any(rho > 1.0):
        raise ValidationError("correlation must lie in (-1, 1]")
    rad = 1.0 - 2.0 * (rho + 1.0) * z1 * z2 / (z1 + z2) ** 2
    if np.any(rad < -1e-12):
        raise NumericalError("negative radicand in the pair distribution")
    rad = np.maximum(rad, 0.0)
    out = np.exp(-0.5 * (1.0 / z1 + 1.0 / z2) * (1.0 + np.sqrt(rad)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# pair Pickands functions and their derivatives
# ---------------------------------------------------------------------------

def smith_pair_pickands(t, a):
    """Hüsler-Reiss pair Pickands function at weight (t, 1-t)."""
    t = np.asarray(t, dtype=float)
    z1 = a / 2.0 + np.log(t / (1.0 - t)) / a
    return t * ndtr(z1) + (1.0 - t) * ndtr(a - z1)


def _smith_A_terms(t, a):
    z1 = a / 2.0 + np.log(t / (1.0 - t)) / a
    z2 = a - z1
    A = t * ndtr(z1) + (1.0 - t) * ndtr(z2)
    A1 = ndtr(z1) - ndtr(z2)
    A2 = _norm_pdf(z1) / (a * t * (1.0 - t) ** 2)
    return A, A1, A2


def schlather_pair_pickands(t, rho):
    """Schlather pair Pickands function at weight (t, 1-t)."""
    t = np.asarray(t, dtype=float)
    q = 1.0 - 2.0 * (rho + 1.0) * t * (1.0 - t)
    return 0.5 * (1.0 + np.sqrt(np.maximum(q, 0.0)))


def _schlather_A_terms(t, rho):
    q = np.maximum(1.0 - 2.0 * (rho + 1.0) * t * (1.0 - t), 1e-300)
    sq = np.sqrt(q)
    A = 0.5 * (1.0 + sq)
    A1 = -(rho + 1.0) * (1.0 - 2.0 * t) / (2.0 * sq)
    A2 = (1.0 - rho * rho) / (2.0 * q * sq)
    return A, A1, A2


# ---------------------------------------------------------------------------
# pair copulas: c.d.f., density, log density
# ---------------------------------------------------------------------------

def _ev_pair_cdf(u1, u2, terms, dep):
    u1 = _clamp_unit(u1)
    u2 = _clamp_unit(u2)
    s = np.log(u1) + np.log(u2)
    t = np.log(u1) / s
    A = terms(t, dep)[0]
    out = np.exp(s * A)
    return float(out) if out.ndim == 0 else out


def _ev_pair_log_density(u1, u2, terms, dep):
    u1 = _clamp_unit(u1)
    u2 = _clamp_unit(u2)
    x = np.log(u1)
    y = np.log(u2)
    s = x + y
    t = x / s
    A, A1, A2 = terms(t, dep)
    bracket = (A - t * A1) * (A + (1.0 - t) * A1) - t * (1.0 - t) * A2 / s
    bracket = np.maximum(bracket, 1e-300)
    out = s * A - x - y + np.log(bracket)
    return float(out) if out.ndim == 0 else out


def smith_pair_copula_cdf(u1, u2, a):
    """Hüsler-Reiss pair copula C(u1, u2) at Mahalanobis distance a."""
    if np.any(np.asarray(a) <= 0.0):
        raise ValidationError("Mahalanobis distance must be positive")
    return _ev_pair_cdf(u1, u2, _smith_A_terms, np.asarray(a, dtype=float))


def smith_pair_copula_density(u1, u2, a):
    """Mixed second partial of the Hüsler-Reiss pair copula."""
    out = np.exp(smith_pair_copula_log_density(u1, u2, a))
    return float(out) if np.ndim(out) == 0 else out


def smith_pair_copula_log_density(u1, u2, a):
    if np.any(np.asarray(a) <= 0.0):
        raise ValidationError("Mahalanobis distance must be positive")
    _check_open_unit(u1, u2)
    return _ev_pair_log_density(u1, u2, _smith_A_terms, np.asarray(a, dtype=float))


def schlather_pair_copula_cdf(u1, u2, rho):
    """Schlather pair copula C(u1, u2) at correlation rho."""
    _check_rho(rho)
    return _ev_pair_cdf(u1, u2, _schlather_A_terms, np.asarray(rho, dtype=float))


def schlather_pair_copula_density(u1, u2, rho):
    """Mixed second partial of the Schlather pair copula."""
    out = np.exp(schlather_pair_copula_log_density(u1, u2, rho))
    return float(out) if np.ndim(out) == 0 else out


def schlather_pair_copula_log_density(u1, u2, rho):
    _check_rho(rho)
    _check_open_unit(u1, u2)
    return _ev_pair_log_density(u1, u2, _schlather_A_terms, np.asarray(rho, dtype=float))


def _check_open_unit(u1, u2):
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any(u1 <= 0.0) or np.any(u1 >= 1.0) or np.any(u2 <= 0.0) or np.any(u2 >= 1.0):
        raise ValidationError("copula arguments must lie strictly inside (0, 1)")


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= -1.0) or np.any(rho > 1.0):
        raise ValidationError("correlation must lie in (-1, 1]")


# ---------------------------------------------------------------------------
# Smith model: Mahalanobis geometry and d-dimensional Hüsler-Reiss pieces
# ---------------------------------------------------------------------------

def mahalanobis_distances(sites: SiteSet, params: SmithParams) -> np.ndarray:
    """d x d matrix of a_ij = sqrt((x_i - x_j)^T Sigma^{-1} (x_i - x_j))."""
    sigma_inv = np.linalg.inv(params.matrix)
    diff = sites.coords[:, None, :] - sites.coords[None, :, :]
    a2 = np.einsum("ijk,kl,ijl->ij", diff, sigma_inv, diff)
    return np.sqrt(np.maximum(a2, 0.0))


def hr_partial_correlation(a: np.ndarray, j: int, others: np.ndarray) -> np.ndarray:
    """Correlation matrix paired with site j in the Hüsler-Reiss c.d.f.

    Entry (i, k) is (a_ij^2 + a_kj^2 - a_ik^2) / (2 a_ij a_kj), the cosine
    of the angle between the displacement vectors of i and k seen from j
    in the storm metric, hence a Gram matrix (rank <= 2 for planar sites).
    """
    ai = a[others, j]
    num = ai[:, None] ** 2 + ai[None, :] ** 2 - a[np.ix_(others, others)] ** 2
    corr = num / (2.0 * ai[:, None] * ai[None, :])
    np.fill_diagonal(corr, 1.0)
    corr = 0.5 * (corr + corr.T)
    return np.clip(corr, -1.0, 1.0)


def smith_pickands(w, params: SmithParams, sites: SiteSet,
                   tol: float = mvn.DEFAULT_TOL, seed: int = 0) -> float:
    """Hüsler-Reiss Pickands dependence function at an arbitrary weight.

    Coordinates with zero weight are marginalized exactly (they contribute
    +inf upper limits). Each term is a (b-1)-dimensional normal c.d.f.
    evaluated by the mvn engine.
    """
    wv = np.asarray(w.w if hasattr(w, "w") else w, dtype=float)
    if wv.shape[0] != sites.d:
        raise ValidationError("weight length must match the number of sites")
    active = np.flatnonzero(wv > 0.0)
    if active.size == 0:
        raise ValidationError("weight must have a positive coordinate")
    if active.size == 1:
        return 1.0
    a = mahalanobis_distances(sites, params)
    total = 0.0
    for j in active:
        others = active[active != j]
        aij = a[others, j]
        if np.any(aij <= 0.0):
            raise NumericalError("coincident sites in the storm metric")
        upper = aij / 2.0 + np.log(wv[j] / wv[others]) / aij
        corr = hr_partial_correlation(a, j, others)
        res = mvn.mvn_cdf(upper, corr, tol=tol, seed=seed)
        total += wv[j] * res.value
    return float(total)


def smith_extremal_coefficient(subset: SubsetB, params: SmithParams, sites: SiteSet,
                               tol: float = mvn.DEFAULT_TOL, seed: int = 0) -> float:
    """Model-implied extremal coefficient of a subset under the Smith model.

    Sum over j in B of the (b-1)-dimensional normal c.d.f. at a_ij/2. The
    pair case reduces to 2 Phi(a/2).
    """
    if subset.d != sites.d:
        raise ValidationError("subset was built for a different site count")
    a = mahalanobis_distances(sites, params)
    idx = np.asarray(subset.indices)
    total = 0.0
    for j in idx:
        others = idx[idx != j]
        upper = a[others, j] / 2.0
        if np.any(upper <= 0.0):
            raise NumericalError("coincident sites in the storm metric")
        corr = hr_partial_correlation(a, j, others)
        total += mvn.mvn_cdf(upper, corr, tol=tol, seed=seed).value
    return float(total)


def smith_pairwise_extremal_coefficients(params: SmithParams, sites: SiteSet) -> np.ndarray:
    """d x d matrix of pairwise Smith extremal coefficients 2 Phi(a_jk / 2)."""
    a = mahalanobis_distances(sites, params)
    xi = 2.0 * ndtr(a / 2.0)
    np.fill_diagonal(xi, 1.0)
    return xi


# ---------------------------------------------------------------------------
# Schlather model: correlation function and pair extremal coefficients
# ---------------------------------------------------------------------------

def anisotropy_matrix(params: SchlatherParams) -> np.ndarray:
    """B = H^T H for the rotation/stretch H built from (phi, r)."""
    c, s = np.cos(params.phi), np.sin(params.phi)
    h = np.array([[c, s], [-s / params.r, c / params.r]])
    return h.T @ h


def schlather_correlation(h, params: SchlatherParams):
    """Gaussian-type correlation exp(-h^T B h / c^2) of displacement(s) h.

    ``h`` is a planar displacement vector or an array of them (…, 2);
    anisotropy makes the direction matter, not just the length.
    """
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != 2:
        raise ValidationError("displacements must have two components")
    B = anisotropy_matrix(params)
    quad = np.einsum("...i,ij,...j->...", h, B, h)
    out = np.exp(-quad / params.c**2)
    return float(out) if out.ndim == 0 else out


def schlather_correlation_matrix(sites: SiteSet, params: SchlatherParams) -> np.ndarray:
    """d x d matrix of rho(x_i - x_j) over the site set."""
    diff = sites.coords[:, None, :] - sites.coords[None, :, :]
    return schlather_correlation(diff, params)


def schlather_pair_extremal_coefficient(rho):
    """Pair extremal coefficient 1 + sqrt((1 - rho)/2); capped at 1 + 2^{-1/2}
    for correlations produced by the Gaussian-type correlation function."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= -1.0) or np.any(rho > 1.0):
        raise ValidationError("correlation must lie in (-1, 1]")
    out = 1.0 + np.sqrt((1.0 - rho) / 2.0)
    return float(out) if out.ndim == 0 else out


def schlather_pairwise_extremal_coefficients(params: SchlatherParams, sites: SiteSet) -> np.ndarray:
    """d x d matrix of pairwise Schlather extremal coefficients."""
    rho = schlather_correlation_matrix(sites, params)
    xi = schlather_pair_extremal_coefficient(rho)
    np.fill_diagonal(xi, 1.0)
    return xi
