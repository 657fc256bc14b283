"""SHORE propagator estimation from sparse diffusion MRI samples with a two-network learner."""

from .evaluation import evaluate, metric_mean_abs_diff, paired_t_test
from .fo_extract import PeakConfig, find_peaks, fo_error, tessellate_sphere
from .gradients import GradientScheme
from .leape import LeapeModel, LeapeSetup, TrainingConfig, build_training_set, predict, train_leape
from .phantom import TensorMixture, add_rician_noise, make_corpus, make_hcp_like_scheme, simulate_signal
from .shore_basis import ShoreBasis, fibonacci_directions, odf_matrix, signal_design_matrix
from .shore_fit import FitConfig, ShoreFitter, eap_eval, fit_shore, msd, rtop

__version__ = "0.1.0"

__all__ = [
    "FitConfig", "GradientScheme", "LeapeModel", "LeapeSetup", "PeakConfig", "ShoreBasis",
    "ShoreFitter", "TensorMixture", "TrainingConfig", "add_rician_noise", "build_training_set",
    "eap_eval", "evaluate", "fibonacci_directions", "find_peaks", "fit_shore", "fo_error",
    "make_corpus", "make_hcp_like_scheme", "metric_mean_abs_diff", "msd", "odf_matrix", "paired_t_test",
    "predict", "rtop", "signal_design_matrix", "simulate_signal", "tessellate_sphere",
    "train_leape",
]
