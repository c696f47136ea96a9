"""Weighted pseudo-likelihood for the single-factor latent-variable model."""

__version__ = "0.1.0"

from .asymptotics import (
    LimitReport,
    check_limit_convergence,
    enmll_limit,
    enwmll_limit,
    mvn_nll_oracle,
)
from .em import EmConfig, default_init, fit_em, m_step
from .exceptions import (
    DataFormatError,
    DegenerateIndicatorError,
    InvalidInputError,
    InvalidParamsError,
    PseudoFactorError,
    UnidentifiableIndicatorError,
)
from .io import load_long_csv, save_long_csv, standardize_indicators, unstandardize
from .marginal import OptConfig, fit_marginal, profile_objective
from .model import (
    FitResult,
    IndicatorPanel,
    ModelParams,
    PosteriorMoments,
    WeightMatrix,
    conditional_log_density,
    joint_neg_log_density,
    marginal_neg2_pll,
    marginal_neg2_pll_gradient,
    posterior_moments,
    subject_neg2_pll,
)
from .sim import (
    SimScenario,
    SimSummary,
    extreme_scenario,
    gen_degenerate_panel,
    gen_equicorrelated_panel,
    gen_gamma_weights,
    regular_scenario,
    run_extreme_study,
    run_regular_study,
)
from .weights import (
    log_transform_volumes,
    normalize_by_indicator_mean,
    scale_weights,
    standard_weights,
    zero_missing,
)

__all__ = [name for name in dir() if not name.startswith("_")]
