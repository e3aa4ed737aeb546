"""Selectively contextual bandits and their evaluation harness."""

from .core import (BanditError, ConfigError, DataError, DecisionRecord, ProtocolError, Provenance,
                   SolverError, StateCorruptionError, derive_seed, make_rng,
                   noncontextual_fraction, normalized_cumulative_regret, regret_curve)
from .env import ClassificationEnv, Dataset, load_dataset
from .glm import GaussianPosterior, LogisticAgent, laplace_precision_update, map_estimate, sigmoid
from .harness import ExperimentConfig, build_agent, emit_results, run_experiment
from .noncontextual import BetaArmState, BetaBernoulliAgent
from .replay import LoggedEvent, ReplayReport, delta_sweep, replay_evaluate
from .scb import ScbConfig, SelectiveAgent, anneal, compare_ratio, compare_reldiff

__version__ = "0.1.0"
