"""Samplers for the Smith and Schlather max-stable processes at fixed sites,
and the induced copula sampler used by the parametric bootstrap.

Both samplers realize the spectral construction Z(x) = sup_j S_j W_j(x)
with S_1 > S_2 > ... the points of a Poisson process of intensity s^{-2} ds
(obtained as reciprocals of cumulated unit exponentials) and model-specific
storm profiles W_j:

* Smith: W_j(x) = f(x - X_j) with f the bivariate normal density with
  covariance Sigma and X_j uniform storm centers. Centers are drawn on the
  site bounding box padded by ``center_padding`` times the largest storm
  standard deviation; beyond that a storm contributes less than
  exp(-center_padding^2/2) of the density peak at any site. Conditional on
  the padded window, the stopping rule (stop once S_j times the density
  peak cannot beat the smallest accumulated maximum) is exact.
* Schlather: W_j(x) = sqrt(2 pi) * max(0, eps_j(x)) with eps_j a stationary
  standard Gaussian field; sqrt(2 pi) = 1/E[max(0, eps)] gives unit Frechet
  margins. Unbounded profiles make exact stopping impossible; the standard
  threshold rule stops once S_j * sqrt(2 pi) * truncation_threshold drops
  below the smallest accumulated maximum, where ``truncation_threshold``
  bounds the Gaussian field maximum (default 5 standard deviations).

Replicates are generated in vectorized storm blocks; processing a few
storms past a replicate's stopping point is a no-op on the running maxima
because the Poisson intensities only decrease. RNG use is organized in
deterministic substreams: (seed, stream_id) fully determines a panel, and
distinct stream ids never share generator state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .ranks import frechet_to_uniform
from .types import (
    MaximaPanel,
    ModelParams,
    NumericalError,
    SchlatherParams,
    SiteSet,
    SmithParams,
    ValidationError,
    model_kind,
)
from . import models

#: rows per internal chunk; each chunk owns a derived RNG substream
_ROW_CHUNK = 4096
_MAX_RESTARTS = 3


@dataclass(frozen=True)
class SimConfig:
    """Sampler configuration.

    truncation_threshold bounds the standard Gaussian field maximum in the
    Schlather stopping rule; center_padding is the Smith storm-center
    window padding in units of the largest storm standard deviation;
    jitter regularizes the Gaussian-field Cholesky; (seed, stream_id)
    select the deterministic RNG substream.
    """

    seed: int = 0
    stream_id: int = 0
    truncation_threshold: float = 5.0
    max_points: int = 100_000
    jitter: float = 1e-10
    center_padding: float = 6.0

    def __post_init__(self):
        if self.truncation_threshold <= 0.0:
            raise ValidationError("truncation_threshold must be positive")
        if self.max_points < 1:
            raise ValidationError("max_points must be at least 1")
        if self.jitter < 0.0:
            raise ValidationError("jitter must be nonnegative")
        if self.center_padding <= 0.0:
            raise ValidationError("center_padding must be positive")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Deterministic, non-overlapping generator for a substream key."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _block_size(rows: int, d: int) -> int:
    return int(max(4, min(64, 2_000_000 // max(1, rows * d))))


def _simulate_chunk_smith(rng, rows, sites, params, cfg):
    coords = sites.coords
    d = coords.shape[0]
    sigma = params.matrix
    sigma_inv = np.linalg.inv(sigma)
    det = np.linalg.det(sigma)
    f_max = 1.0 / (2.0 * np.pi * np.sqrt(det))
    pad = cfg.center_padding * np.sqrt(np.linalg.eigvalsh(sigma)[-1])
    low = coords.min(axis=0) - pad
    high = coords.max(axis=0) + pad
    volume = float(np.prod(high - low))

    K = _block_size(rows, d)
    gam = np.zeros(rows)
    z = np.zeros((rows, d))
    npts = np.zeros(rows, dtype=np.int64)
    restarts = 0
    active = np.arange(rows)
    while active.size:
        m = active.size
        steps = rng.standard_exponential((m, K))
        gam_block = gam[active, None] + np.cumsum(steps, axis=1)
        s = volume / gam_block
        centers = low + rng.random((m, K, 2)) * (high - low)
        diff = coords[None, None, :, :] - centers[:, :, None, :]
        quad = np.einsum("mkdi,ij,mkdj->mkd", diff, sigma_inv, diff)
        contrib = s[:, :, None] * (f_max * np.exp(-0.5 * quad))
        z[active] = np.maximum(z[active], contrib.max(axis=1))
        gam[active] = gam_block[:, -1]
        npts[active] += K
        done = s[:, -1] * f_max <= z[active].min(axis=1)
        over = (~done) & (npts[active] >= cfg.max_points)
        if over.any():
            restarts += 1
            warnings.warn("storm budget exhausted before the stopping rule; "
                          "rejecting and redrawing the affected replicates",
                          RuntimeWarning, stacklevel=3)
            if restarts > _MAX_RESTARTS:
                raise NumericalError("replicates repeatedly exhausted max_points")
            rows_over = active[over]
            gam[rows_over] = 0.0
            z[rows_over] = 0.0
            npts[rows_over] = 0
        active = active[~done]
    return z


def _simulate_chunk_schlather(rng, rows, sites, params, cfg, chol):
    d = sites.d
    c0 = np.sqrt(2.0 * np.pi)
    bound = c0 * cfg.truncation_threshold

    K = _block_size(rows, d)
    gam = np.zeros(rows)
    z = np.zeros((rows, d))
    npts = np.zeros(rows, dtype=np.int64)
    restarts = 0
    active = np.arange(rows)
    while active.size:
        m = active.size
        steps = rng.standard_exponential((m, K))
        gam_block = gam[active, None] + np.cumsum(steps, axis=1)
        s = 1.0 / gam_block
        eps = rng.standard_normal((m, K, d)) @ chol.T
        contrib = s[:, :, None] * (c0 * np.maximum(eps, 0.0))
        z[active] = np.maximum(z[active], contrib.max(axis=1))
        gam[active] = gam_block[:, -1]
        npts[active] += K
        done = s[:, -1] * bound <= z[active].min(axis=1)
        over = (~done) & (npts[active] >= cfg.max_points)
        if over.any():
            restarts += 1
            warnings.warn("storm budget exhausted before the stopping rule; "
                          "rejecting and redrawing the affected replicates",
                          RuntimeWarning, stacklevel=3)
            if restarts > _MAX_RESTARTS:
                raise NumericalError("replicates repeatedly exhausted max_points")
            rows_over = active[over]
            gam[rows_over] = 0.0
            z[rows_over] = 0.0
            npts[rows_over] = 0
        active = active[~done]
    return z


def _run_chunked(n, sites, cfg, chunk_fn):
    out = np.empty((n, sites.d))
    start = 0
    chunk_idx = 0
    while start < n:
        rows = min(_ROW_CHUNK, n - start)
        rng = substream(cfg.seed, cfg.stream_id, chunk_idx)
        out[start:start + rows] = chunk_fn(rng, rows)
        start += rows
        chunk_idx += 1
    return out


def simulate_smith(sites: SiteSet, params: SmithParams, n: int,
                   cfg: SimConfig = SimConfig()) -> MaximaPanel:
    """n field realizations of the Smith model at the sites, unit Frechet scale."""
    if not isinstance(params, SmithParams):
        raise ValidationError("simulate_smith needs Smith parameters")
    if n < 1:
        raise ValidationError("need at least one replicate")
    values = _run_chunked(n, sites, cfg,
                          lambda rng, rows: _simulate_chunk_smith(rng, rows, sites, params, cfg))
    return MaximaPanel(values, site_ids=sites.labels)


def simulate_schlather(sites: SiteSet, params: SchlatherParams, n: int,
                       cfg: SimConfig = SimConfig()) -> MaximaPanel:
    """n field realizations of the Schlather model at the sites, unit Frechet scale."""
    if not isinstance(params, SchlatherParams):
        raise ValidationError("simulate_schlather needs Schlather parameters")
    if n < 1:
        raise ValidationError("need at least one replicate")
    corr = models.schlather_correlation_matrix(sites, params)
    try:
        chol = np.linalg.cholesky(corr + cfg.jitter * np.eye(sites.d))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("site correlation matrix not factorizable after jitter") from exc
    values = _run_chunked(n, sites, cfg,
                          lambda rng, rows: _simulate_chunk_schlather(rng, rows, sites, params, cfg, chol))
    return MaximaPanel(values, site_ids=sites.labels)


def simulate_model(sites: SiteSet, params: ModelParams, n: int,
                   cfg: SimConfig = SimConfig()) -> MaximaPanel:
    """Dispatch on the parameter type."""
    if model_kind(params) == "smith":
        return simulate_smith(sites, params, n, cfg)
    return simulate_schlather(sites, params, n, cfg)


def sample_copula(params: ModelParams, sites: SiteSet, n: int,
                  cfg: SimConfig = SimConfig()) -> np.ndarray:
    """n i.i.d. rows from the model copula: the field mapped through exp(-1/z)."""
    panel = simulate_model(sites, params, n, cfg)
    u = frechet_to_uniform(panel.values)
    return np.clip(u, 1e-300, 1.0 - 1e-16)


def config_for_stream(cfg: SimConfig, stream_id: int) -> SimConfig:
    """Copy of cfg pointing at another substream."""
    return replace(cfg, stream_id=stream_id)
