"""Network growth modeled as discrete choice.

Edge formation is recast as a conditional-logit choice among candidate
targets; the package generates synthetic growth graphs, extracts choice
data, fits conditional and mixed logits, and evaluates the results.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .clogit import (
    LogitFit, choice_prob, fit, fit_nonparametric_pa, gradient, hessian, log_likelihood,
)
from .evalstats import (
    holdout_accuracy, lr_test, newman_kernel, pham_ls_alpha, powerlaw_mle,
)
from .features import ChoiceData, ChoiceEvent, EventFilter, FeatureSpec, extract_choices, negative_sample
from .generators import GrowthConfig, generate
from .graph import TemporalGraph, read_edgelist, write_edgelist
from .mixlogit import (
    MixtureModel, Mode, em_fit, fit_copy, fit_local_search, likelihood_surface, mixture_loglik,
)

__all__ = [
    "BACKEND", "ChoiceData", "ChoiceEvent", "EventFilter", "FeatureSpec", "GrowthConfig",
    "LogitFit", "MixtureModel", "Mode", "TemporalGraph", "choice_prob", "em_fit",
    "extract_choices", "fit", "fit_copy", "fit_local_search", "fit_nonparametric_pa",
    "generate", "gradient", "hessian", "holdout_accuracy", "likelihood_surface",
    "log_likelihood", "lr_test", "mixture_loglik", "negative_sample", "newman_kernel",
    "pham_ls_alpha", "powerlaw_mle", "read_edgelist", "write_edgelist",
]
