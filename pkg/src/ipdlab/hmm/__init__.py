"""Left-to-right multinomial HMMs over conditional-action symbols."""

from .display import DisplayModel, model_to_dot, prune_for_display, to_dot
from .fit import (
    FitConfig,
    FitResult,
    Selection,
    closed_form_single_state,
    em_trace,
    fit_baum_welch,
    fit_with_score,
    select_model,
)
from .inference import (
    forward_log_likelihood,
    sample,
    state_occupancy,
    viterbi_decode,
    viterbi_log_likelihood,
)
from .model import HMMModel, ModelError

__all__ = [
    "DisplayModel",
    "FitConfig",
    "FitResult",
    "HMMModel",
    "ModelError",
    "Selection",
    "closed_form_single_state",
    "em_trace",
    "fit_baum_welch",
    "fit_with_score",
    "forward_log_likelihood",
    "model_to_dot",
    "prune_for_display",
    "sample",
    "select_model",
    "state_occupancy",
    "to_dot",
    "viterbi_decode",
    "viterbi_log_likelihood",
]
