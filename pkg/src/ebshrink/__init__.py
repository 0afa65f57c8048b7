"""Empirical Bayes estimation of prior hyperparameters for shrinkage regression."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BlockCovariance,
    ConstantColumnError,
    Dataset,
    EBShrinkError,
    GroupStructure,
    NotPositiveDefiniteError,
    PosteriorChain,
    RngStream,
    generate_response,
    read_dataset_csv,
    sample_coefficients,
    sample_design,
    standardize,
)
from .normal_means import (  # noqa: E402
    ConvolutionData,
    GaussianPrior,
    MixturePrior,
    dlda_classify,
    extend_batting,
    fit_gaussian_prior,
    fit_mixture_prior_em,
    posterior_mean_gaussian,
    posterior_mean_mixture,
    z_scores,
)
from .ridge_eb import (  # noqa: E402
    RidgeFit,
    cv_ridge,
    direct_mml_ridge,
    emse_closed_form,
    emse_independent,
    group_moment_eb,
    laplace_log_ml_logistic,
    multiplier_reparam,
    ridge_fit,
    tau2_bias_corrected,
    tau2_unbiased_ols,
)
from .bayes_enet import EnetHyper, chib_log_ml, gibbs_enet, grid_scan_experiment, sample_enet_prior  # noqa: E402
from .spike_slab import SpikeSlabModel, fit_alpha_binomial, run_mcem, ss_gibbs  # noqa: E402
from .interval_models import (  # noqa: E402
    PrecisionSpec,
    coverage_experiment,
    intervals_from_chain,
    moving_average_coverage,
    pg_logistic_gibbs,
)
