"""Sparse multivariate-normal exposure priors for two-stage Bayesian health models.

Modules
-------
linalg     dense/sparse Cholesky, triangular solves, log-determinants
rng        random streams, inverse-gamma, Polya-Gamma and MVN draws
vecchia    conditioning plans, Vecchia surrogates, KL divergence
exposure   DPC exposure model (first stage) and predictive summaries
health     second-stage linear and logistic Gibbs samplers
joint      fully Bayesian joint samplers
timeavg    window-averaged exposure mean and covariance
simulate   simulation scenarios, benchmark harness, KL/timing table
config, dataio, cli   configuration, file formats, command line
"""

from .chains import (FIRST_STAGE_SCHEDULE, SECOND_STAGE_SCHEDULE, ChainOutput, Schedule,
                     summarize_chain)
from .errors import (NotPositiveDefinite, NumericError, SparseMvnError, ValidationError)
from .exposure import (DpcModel, DpcPriors, PredictiveSummary, gibbs_first_stage, default_grid,
                       predict_at, summarize)
from .health import (DenseMvn, IndependentNormal, PlugIn, SparseMvn, gibbs_linear,
                     gibbs_logistic, make_prior, x_full_conditional_params)
from .joint import gibbs_joint_linear, gibbs_joint_logistic
from .rng import RngStream, make_rng
from .vecchia import build_plan, build_surrogate, kl_divergence

__version__ = "0.1.0"
