"""Bayesian g-computation of dynamic treatment rules for multi-course
survival data with semiparametric (Gamma Process) transition hazards."""

from .data_model import Cohort, CourseRecord, Covariate, Schema, SubjectRecord, export, ingest
from .gcomp import GCompConfig, estimate_survival, gcompute, hdi_set, optimize_rule, posterior_summary
from .mcmc import ParameterDraw, Sampler, SamplerConfig, run_sampler
from .rules import FeasibleSet, ThresholdRuleParams, below_rule, fixed_rule, parse_rule, threshold_rule

__version__ = "0.1.0"
