"""Rank transforms: raw block maxima to margin-free pseudo-observations."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .types import MaximaPanel, PseudoObsPanel, ValidationError


def pseudo_observations(panel: MaximaPanel | np.ndarray) -> PseudoObsPanel:
    """Columnwise ranks divided by n + 1.

    Entry (i, j) is the rank of X[i, j] within column j, scaled by
    1/(n+1) so every value stays strictly inside (0, 1). Ties receive
    average ranks, which keeps column means invariant; block maxima of
    continuous quantities are tie-free almost surely, so the policy only
    matters for discretized inputs.
    """
    values = panel.values if isinstance(panel, MaximaPanel) else np.asarray(panel, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValidationError("pseudo_observations needs an n x d matrix with n >= 2")
    if not np.all(np.isfinite(values)):
        raise ValidationError("panel entries must be finite")
    ranks = rankdata(values, method="average", axis=0)
    return PseudoObsPanel(ranks / (values.shape[0] + 1))


def frechet_to_uniform(z):
    """Unit-Frechet c.d.f. exp(-1/z), mapping field values to copula scale.

    Accepts scalars or arrays; every input must be strictly positive.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0) or not np.all(np.isfinite(z)):
        raise ValidationError("unit-Frechet values must be finite and > 0")
    out = np.exp(-1.0 / z)
    return float(out) if out.ndim == 0 else out
