"""Adaptive hierarchical partitioning for Monte Carlo inference."""

from .base_infer import SMC, ImportanceSampling, RunResult, is_run, particle_filter, smc_sweep
from .baselines import PmmhState, pmmh_step, run_pmmh, vanilla_is
from .harness import RunConfig, Sampler, compare, load_config, resume, run
from .models import (ChaosModel, ConjugateGaussian, GaussianMixtureModel, LinearGaussianSSM,
                     NetworkModel, generate_synthetic, model_from_dataset)
from .refine import RefineConfig, refine
from .reparam import HyperRect
from .traversal import TraversalParams, default_schedules, naive_it_preset, select_leaf
from .tree import InferenceTree, Node

__version__ = "0.1.0"
