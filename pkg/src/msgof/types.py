"""Core domain types shared by every other module.

All types are immutable after construction (frozen dataclasses wrapping
read-only numpy arrays) and therefore safe to share across worker
processes and threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


class ValidationError(ValueError):
    """Raised when input data or configuration violates a documented invariant."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy result."""


class FitError(NumericalError):
    """Raised when no optimizer start converges; carries the best attempt."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SiteSet:
    """A set of d >= 2 distinct planar site coordinates.

    Coordinates are abstract planar units (projected easting/northing or
    simply unitless positions); no geodesy is applied.
    """

    coords: np.ndarray  # (d, 2)
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        coords = _frozen_array(self.coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValidationError(f"site coordinates must be (d, 2), got {coords.shape}")
        if coords.shape[0] < 2:
            raise ValidationError("at least 2 sites are required")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("site coordinates must be finite")
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= 0.0:
            raise ValidationError("sites must be pairwise distinct")
        object.__setattr__(self, "coords", coords)
        labels = tuple(self.labels) if self.labels else tuple(f"s{i + 1}" for i in range(coords.shape[0]))
        if len(labels) != coords.shape[0]:
            raise ValidationError("number of labels must match number of sites")
        object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class MaximaPanel:
    """An n x d matrix of componentwise block maxima (one row per block)."""

    values: np.ndarray  # (n, d)
    site_ids: tuple[str, ...] = ()

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 2:
            raise ValidationError(f"panel must be a 2-d matrix, got shape {values.shape}")
        n, d = values.shape
        if n < 2:
            raise ValidationError("at least 2 blocks (rows) are required to rank")
        if d < 2:
            raise ValidationError("at least 2 sites (columns) are required")
        if not np.all(np.isfinite(values)):
            raise ValidationError("panel entries must be finite")
        object.__setattr__(self, "values", values)
        ids = tuple(self.site_ids) if self.site_ids else tuple(f"s{j + 1}" for j in range(d))
        if len(ids) != d:
            raise ValidationError("number of site ids must match number of columns")
        object.__setattr__(self, "site_ids", ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PseudoObsPanel:
    """An n x d matrix of rank-based pseudo-observations, entries in (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.ndim != 2:
            raise ValidationError(f"pseudo-observations must be a 2-d matrix, got {values.shape}")
        if values.shape[0] < 2 or values.shape[1] < 2:
            raise ValidationError("pseudo-observation panel must be at least 2 x 2")
        if not np.all((values > 0.0) & (values < 1.0)):
            raise ValidationError("pseudo-observations must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


#: absolute tolerance on the simplex-weight sum constraint
SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class SimplexWeight:
    """A nonnegative weight vector summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.w)
        if w.ndim != 1:
            raise ValidationError("weight must be a vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValidationError(f"weights must sum to 1 within {SIMPLEX_TOL}, got {w.sum()!r}")
        object.__setattr__(self, "w", w)

    @property
    def d(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class SubsetB:
    """A subset of site indices (0-based) with cardinality b >= 2."""

    indices: tuple[int, ...]
    d: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValidationError("subset indices must be distinct")
        if len(idx) < 2:
            raise ValidationError("a subset must contain at least 2 sites")
        if self.d < 2 or len(idx) > self.d:
            raise ValidationError("subset larger than the site set")
        if idx[0] < 0 or idx[-1] >= self.d:
            raise ValidationError(f"subset indices must lie in [0, {self.d - 1}]")
        object.__setattr__(self, "indices", idx)

    @property
    def b(self) -> int:
        return len(self.indices)

    @classmethod
    def full(cls, d: int) -> "SubsetB":
        return cls(tuple(range(d)), d)


@dataclass(frozen=True)
class SmithParams:
    """Storm-shape covariance of the Gaussian extreme-value (Smith) model."""

    s11: float
    s12: float
    s22: float

    def __post_init__(self):
        for name in ("s11", "s12", "s22"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.s11 <= 0.0 or self.s22 <= 0.0 or self.s11 * self.s22 - self.s12**2 <= 0.0:
            raise ValidationError("covariance matrix must be positive definite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])

    def to_dict(self) -> dict:
        return {"model": "smith", "s11": self.s11, "s12": self.s12, "s22": self.s22}


@dataclass(frozen=True)
class SchlatherParams:
    """Anisotropic Gaussian correlation parameters of the extremal Gaussian
    (Schlather) model: range c > 0, rotation phi in [-pi/2, pi/2), axis
    ratio r in (0, 1)."""

    c: float
    phi: float
    r: float

    def __post_init__(self):
        for name in ("c", "phi", "r"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.c <= 0.0:
            raise ValidationError("range parameter c must be positive")
        if not (-np.pi / 2 <= self.phi < np.pi / 2):
            raise ValidationError("phi must lie in [-pi/2, pi/2)")
        if not (0.0 < self.r < 1.0):
            raise ValidationError("axis ratio r must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"model": "schlather", "c": self.c, "phi": self.phi, "r": self.r}


ModelParams = Union[SmithParams, SchlatherParams]


def model_kind(params: ModelParams) -> str:
    """Return 'smith' or 'schlather' for a parameter object."""
    if isinstance(params, SmithParams):
        return "smith"
    if isinstance(params, SchlatherParams):
        return "schlather"
    raise ValidationError(f"unknown model parameter type {type(params)!r}")


def params_from_dict(payload: dict) -> ModelParams:
    """Inverse of SmithParams/SchlatherParams.to_dict."""
    kind = payload.get("model")
    if kind == "smith":
        return SmithParams(payload["s11"], payload["s12"], payload["s22"])
    if kind == "schlather":
        return SchlatherParams(payload["c"], payload["phi"], payload["r"])
    raise ValidationError(f"unknown model kind {kind!r}")


def weight_for_subset(subset: SubsetB, d: int | None = None) -> SimplexWeight:
    """Uniform weight 1/b on the subset's sites, 0 elsewhere."""
    if d is None:
        d = subset.d
    if d != subset.d:
        raise ValidationError(f"subset was built for d={subset.d}, not d={d}")
    w = np.zeros(d)
    w[list(subset.indices)] = 1.0 / subset.b
    return SimplexWeight(w)


def pairwise_distances(sites: SiteSet) -> np.ndarray:
    """Symmetric d x d matrix of Euclidean intersite distances."""
    diff = sites.coords[:, None, :] - sites.coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))
