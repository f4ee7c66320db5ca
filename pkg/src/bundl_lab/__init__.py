"""Training lab for seizure detectors under noisy annotations.

Modules
-------
eegsim
    Synthetic 19-channel scalp EEG with one annotated seizure per recording.
labelnoise
    Per-window labels and over-, under- and random label corruption.
model
    Window features and the dropout MLP predictor.
bundl
    MC-dropout uncertainty, the clean-label posterior and its training loop.
baselines
    Cross-entropy, SelfAdapt-style soft targets and a noise adaptation layer.
evaluation
    Window and event metrics, threshold choice, transition matrices and CV.
cli
    The ``bundl-lab`` command.
"""
from .bundl import clean_param, mc_uncertainty
from .model import init_params, load_params, save_params

__version__ = "0.1.0"

__all__ = ["clean_param", "init_params", "load_params", "mc_uncertainty", "save_params"]
