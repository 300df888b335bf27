"""Grade-of-membership mixture models for multivariate binary data.

Individuals hold partial memberships in K extreme profiles; each binary item
fires with the membership-weighted mixture of profile probabilities.  The
package provides exact small-table probabilities with a latent-class
expansion, a Gibbs/Metropolis sampler for the full posterior, a two-part
extension with a deterministic all-zero compartment, a variational EM
estimator, model-selection criteria over K, convergence diagnostics, and a
command-line interface around all of it.
"""

from .data import Dataset, ResponsePattern, as_pattern
from .diagnostics import (
    DiagnosticsReport,
    diagnose_chain,
    effective_sample_size,
    geweke_z,
    profile_separation,
)
from .extended import (
    CompartmentState,
    all_zero_response_prob,
    run_extended_chain,
    sample_compartment_indicators,
    update_theta,
)
from .latent_class import LatentClassFit, fit_latent_class
from .mcmc import (
    ChainConfig,
    ChainOutput,
    NumericalAbortError,
    PosteriorSummary,
    gibbs_sweep,
    loglik_given_g,
    posterior_summary,
    run_chain,
)
from .model import (
    GomParams,
    conditional_response_prob,
    dirichlet_product_moment,
    latent_class_pattern_prob,
    marginal_pattern_prob_exact,
    marginal_pattern_prob_mc,
    pattern_prob_given_g,
    relative_frequencies,
)
from .representation import (
    RepresentationReport,
    marginal_pattern_prob_quadrature,
    run_representation_check,
)
from .selection import (
    BicApprox,
    CriteriaReport,
    CriterionRecord,
    aicm,
    bic_approx,
    chi2_truncated,
    criteria_sweep,
    dic,
    expected_count_mcmc,
    expected_count_vem,
    expected_counts_mcmc,
    expected_counts_vem,
)
from .simulate import PRESETS, GenerationTruth, ScenarioPreset, generate_dataset
from .vem import VariationalState, VemFit, e_step, fit_vem, lower_bound

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ResponsePattern",
    "as_pattern",
    "GomParams",
    "conditional_response_prob",
    "pattern_prob_given_g",
    "dirichlet_product_moment",
    "latent_class_pattern_prob",
    "relative_frequencies",
    "marginal_pattern_prob_exact",
    "marginal_pattern_prob_mc",
    "marginal_pattern_prob_quadrature",
    "RepresentationReport",
    "run_representation_check",
    "LatentClassFit",
    "fit_latent_class",
    "ChainConfig",
    "ChainOutput",
    "NumericalAbortError",
    "gibbs_sweep",
    "loglik_given_g",
    "run_chain",
    "posterior_summary",
    "PosteriorSummary",
    "CompartmentState",
    "all_zero_response_prob",
    "sample_compartment_indicators",
    "update_theta",
    "run_extended_chain",
    "VariationalState",
    "VemFit",
    "e_step",
    "fit_vem",
    "lower_bound",
    "BicApprox",
    "CriteriaReport",
    "CriterionRecord",
    "aicm",
    "bic_approx",
    "chi2_truncated",
    "criteria_sweep",
    "dic",
    "expected_count_mcmc",
    "expected_counts_mcmc",
    "expected_count_vem",
    "expected_counts_vem",
    "DiagnosticsReport",
    "diagnose_chain",
    "effective_sample_size",
    "geweke_z",
    "profile_separation",
    "PRESETS",
    "GenerationTruth",
    "ScenarioPreset",
    "generate_dataset",
    "__version__",
]
