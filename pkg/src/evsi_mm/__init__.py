"""EVSI across sample sizes by moment matching and Bayesian non-linear regression."""
from ._backend import BACKEND
from .conditional import (ConditionalInb, SmootherConfig, conditional_from_fitted, evppi,
                          fit_conditional_inb)
from .models import (ModelSpec, StudyDesign, bk_model, get_model, net_benefit,
                     normal_toy_model, posterior_update, sample_data, sample_prior,
                     study_design)
from .moment_matching import (build_quantile_design, estimate_posterior_variances,
                              evsi_dual, evsi_multi, matrix_sqrt_spd, pooled_sigma_x,
                              rescale_dual, rescale_multi)
from .nlreg import (EvsiCurve, McmcConfig, NlregPosterior, PriorConfig, evsi_curve,
                    fit_variance_curve)
from .oracle import OracleEstimate, closed_form_toy_evppi, closed_form_toy_evsi, nested_mc_evsi
from .pipeline import compare_designs, run_evsi, run_oracle, run_psa
from .psa import InbDraws, InbMoments, compute_inb, inb_moments

__all__ = [
    "BACKEND",
    "ConditionalInb", "SmootherConfig", "conditional_from_fitted", "evppi",
    "fit_conditional_inb",
    "ModelSpec", "StudyDesign", "bk_model", "get_model", "net_benefit", "normal_toy_model",
    "posterior_update", "sample_data", "sample_prior", "study_design",
    "build_quantile_design", "estimate_posterior_variances", "evsi_dual", "evsi_multi",
    "matrix_sqrt_spd", "pooled_sigma_x", "rescale_dual", "rescale_multi",
    "EvsiCurve", "McmcConfig", "NlregPosterior", "PriorConfig", "evsi_curve",
    "fit_variance_curve",
    "OracleEstimate", "closed_form_toy_evppi", "closed_form_toy_evsi", "nested_mc_evsi",
    "compare_designs", "run_evsi", "run_oracle", "run_psa",
    "InbDraws", "InbMoments", "compute_inb", "inb_moments",
]
