"""Goodness-of-fit testing for Smith and Schlather max-stable process models.

Rank-based extremal-coefficient estimators, composite pseudo-likelihood
fitting, and one- or two-level parametric bootstrap p-values for
multivariate block-maxima panels at fixed planar sites.
"""

from .types import (
    FitError,
    MaximaPanel,
    ModelParams,
    NumericalError,
    PseudoObsPanel,
    SchlatherParams,
    SimplexWeight,
    SiteSet,
    SmithParams,
    SubsetB,
    ValidationError,
    model_kind,
    pairwise_distances,
    params_from_dict,
    weight_for_subset,
)
from .ranks import frechet_to_uniform, pseudo_observations
from .pickands import (
    EstimatorKind,
    ZetaCache,
    cfg_raw,
    estimate_A,
    extremal_coefficient_np,
    pairwise_extremal_coefficients,
    pickands_raw,
    zeta,
)
from .mvn import MvnResult, bvn_cdf, mvn_cdf, scalar_phi, scalar_phi_inv
from .models import (
    schlather_bivariate_cdf,
    schlather_correlation,
    schlather_pair_copula_cdf,
    schlather_pair_copula_density,
    schlather_pair_extremal_coefficient,
    smith_bivariate_cdf,
    smith_extremal_coefficient,
    smith_pair_copula_cdf,
    smith_pair_copula_density,
    smith_pickands,
)
from .simulate import SimConfig, sample_copula, simulate_model, simulate_schlather, simulate_smith
from .fit import FitResult, OptConfig, PairSet, composite_loglik, fit_model
from .gof import (
    GofReport,
    StatisticSpec,
    bootstrap_one_level,
    bootstrap_suite,
    bootstrap_two_level,
    decompose_statistic,
    statistic_SB,
    statistic_pairwise_sum,
)

__version__ = "0.1.0"
