"""Gauss-, Student's-t and empirical Bayesian IDLMA for multichannel source separation."""
from ._backend import DEFAULT_BACKEND as BACKEND
from .errors import ConfigError, NumericalError
from .separator import SeparationConfig, SeparationState, separate
from .spectral import StftConfig, istft, stft

__all__ = [
    "BACKEND",
    "ConfigError",
    "NumericalError",
    "SeparationConfig",
    "SeparationState",
    "StftConfig",
    "istft",
    "separate",
    "stft",
]
__version__ = "0.1.0"
