"""Posterior-focused polynomial chaos surrogates for Bayesian inverse problems.

Surrogates are built with respect to a sequence of Gaussian biasing
distributions chosen by a tempered cross-entropy loop, so that their accuracy
is concentrated where the posterior lives.
"""
__version__ = "0.1.0"

from .polynomials import PolynomialFamily, MultiIndexSet, eval_univariate, eval_multivariate, total_order_set
from .quadrature import QuadratureRule, SparseGridSpec, gauss_rule, clenshaw_curtis_rule, smolyak_rule, tensor_rule
from .polychaos import InputDistribution, PCSurrogate, project, l2_error, save_surrogate, load_surrogate
from .models import (ForwardModel, FunctionModel, SourceModel, SourceModelConfig, HeatModel,
                     HeatModelConfig, flux_eval, source_forward, heat_forward, synthesize)
from .bayes import Prior, GaussianLikelihood, TemperedLikelihood, Posterior, log_posterior_unnormalized
from .adaptive import BiasingParams, CEConfig, RuleSpec, run, update_lambda, update_params, objective_hat
from .mcmc import Chain, independence_sampler, dram, autocorrelation, ess
from .analysis import kde2, kl_divergence_2d, flux_moments
