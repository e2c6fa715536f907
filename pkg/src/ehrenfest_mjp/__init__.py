"""Generative modelling with time-reversed Ehrenfest jump processes."""

from .distributions import DiscreteDistribution, compare, discretize_gmm, load_letter_e
from .ehrenfest import (
    EhrenfestSpec,
    forward_transition_pmf,
    log_transition_pmf,
    ou_stats,
    sample_forward,
    scale_state,
    unscale_state,
)
from .errors import CheckpointError, DomainError, NumericError, TrainingError, UnreachableStateError
from .jump_core import RateSchedule, make_rng
from .reversal import exact_backward_rates, ratio_to_score, score_to_ratio

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DiscreteDistribution",
    "DomainError",
    "EhrenfestSpec",
    "NumericError",
    "RateSchedule",
    "TrainingError",
    "UnreachableStateError",
    "compare",
    "discretize_gmm",
    "exact_backward_rates",
    "forward_transition_pmf",
    "load_letter_e",
    "log_transition_pmf",
    "make_rng",
    "ou_stats",
    "ratio_to_score",
    "sample_forward",
    "scale_state",
    "score_to_ratio",
    "unscale_state",
]
