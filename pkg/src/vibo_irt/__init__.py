"""Item response theory with amortized variational inference.

Fits classical (1PL/2PL/3PL/MIRT/LPE/IDL) and deep nonlinear response
models to possibly-incomplete binary or bounded-continuous response
matrices, with joint maximum likelihood and marginal-likelihood EM
baselines, missing-response imputation, and importance-sampled model
evidence.
"""

from .baselines import (
    EmResult,
    JmleResult,
    em_eap_abilities,
    em_fit,
    fit_jmle,
    gauss_hermite_rule,
    refit_abilities,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ResponseDataset,
    read_response_csv,
    simulate,
    write_response_csv,
)
from .diffcore import DimensionError, NumericalError
from .engine import (
    FitResult,
    ViboConfig,
    fit,
    fit_report,
    infer_ability_posterior,
    item_point_estimates,
    predicted_probabilities,
    vibo_value,
)
from .estimators import EmIRT, JmleIRT, ViboIRT
from .evaluation import (
    HoldoutSplit,
    impute_accuracy,
    log_marginal,
    log_marginal_per_person,
    make_holdout,
    posterior_predictive_stats,
    recovery_correlation,
)
from .models import (
    ANALYTIC_FAMILIES,
    DEEP_FAMILIES,
    FAMILIES,
    ModelSpec,
    build_generative_model,
    loglik_matrix,
    prob_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "ANALYTIC_FAMILIES",
    "DEEP_FAMILIES",
    "DimensionError",
    "EmIRT",
    "EmResult",
    "FAMILIES",
    "FitResult",
    "HoldoutSplit",
    "JmleIRT",
    "JmleResult",
    "ModelSpec",
    "NumericalError",
    "ResponseDataset",
    "ViboConfig",
    "ViboIRT",
    "build_generative_model",
    "em_eap_abilities",
    "em_fit",
    "fit",
    "fit_jmle",
    "fit_report",
    "gauss_hermite_rule",
    "impute_accuracy",
    "infer_ability_posterior",
    "item_point_estimates",
    "load_checkpoint",
    "log_marginal",
    "log_marginal_per_person",
    "loglik_matrix",
    "make_holdout",
    "posterior_predictive_stats",
    "predicted_probabilities",
    "prob_matrix",
    "read_response_csv",
    "recovery_correlation",
    "refit_abilities",
    "save_checkpoint",
    "simulate",
    "vibo_value",
    "write_response_csv",
    "__version__",
]
