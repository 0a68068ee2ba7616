"""Importance Markov chains: an instrumental MCMC chain whose points are
replicated a random number of times with mean equal to the importance weight.

The submodules are ``model`` (densities and weights), ``kernels``
(instrumental chains), ``replication`` (copy-count laws), ``engine`` (the
sampler and its estimators), ``diagnostics``, ``oracle`` (exact finite-state
checks), ``experiments`` and ``cli``.
"""
from ._accel import backend
from .diagnostics import (CltVarianceReport, DiagnosticsReport, clt_variance_plugin, ess_is, ess_kappa,
                          kappa_opt, kappa_scan, poisson_solve)
from .engine import (AugmentedState, RunLengthSample, estimate_imc, estimate_is, expand, expand_arrays,
                     run_semi_markov, run_semi_markov_many, tune_kappa)
from .errors import *  # noqa: F401,F403
from .kernels import FiniteKernel, IIDKernel, IndependentMHKernel, RWMKernel
from .model import LogDensity, WeightFunction, gaussian_mixture, ring_bimodal, tempered, weight
from .oracle import FiniteChainSpec, make_random_spec, verify_spec
from .replication import (BERNOULLI, OPTIMAL, OSR, PseudoMarginalLaw, draw_bernoulli_rejection, draw_optimal,
                          draw_osr)
from .rng import RandomSource

__version__ = "0.1.0"
