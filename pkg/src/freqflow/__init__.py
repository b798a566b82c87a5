"""Spectral interpolation forecaster with a flow-matching residual head."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, TrainConfig, load_config
from .data import RawDataset, SynthSpec, impute, load_csv, split_and_window, standardize, synth_generate
from .model import FreqFlow, build_model
from .training import train

__version__ = "0.1.0"

__all__ = [
    "FreqFlow", "RawDataset", "RunConfig", "SynthSpec", "TrainConfig", "build_model", "impute",
    "load_checkpoint", "load_config", "load_csv", "save_checkpoint", "split_and_window",
    "standardize", "synth_generate", "train",
]
