"""Noise-robust DFT-domain Kalman adaptive filtering with a learned IS-NMF noise dictionary."""

__version__ = "0.1.0"

from .engine import BlockResult, EchoCanceller, VariantConfig, make_canceller
from .noisemodel import NoiseDictionary, load_dictionary, save_dictionary, train_dictionary

__all__ = [
    "BlockResult",
    "EchoCanceller",
    "NoiseDictionary",
    "VariantConfig",
    "load_dictionary",
    "make_canceller",
    "save_dictionary",
    "train_dictionary",
]
