"""Connectivity-weighted multi-band EEG decoding with a conv + transformer network."""

__version__ = "0.1.0"

from .connectivity import ChannelWeights, EdgeList, PlvMatrix, channel_weights, plv_matrix, strong_edges
from .data import BandSpec, EpochSet, Montage, SynthSpec, load_epochset, save_epochset, synth_generate
from .errors import ConfigError, FormatError, TrainingDivergedError
from .model import FcdnConfig, FcdnModel, build, forward, load_checkpoint, predict, save_checkpoint, train

__all__ = [
    "BandSpec",
    "ChannelWeights",
    "ConfigError",
    "EdgeList",
    "EpochSet",
    "FcdnConfig",
    "FcdnModel",
    "FormatError",
    "Montage",
    "PlvMatrix",
    "SynthSpec",
    "TrainingDivergedError",
    "build",
    "channel_weights",
    "forward",
    "load_checkpoint",
    "load_epochset",
    "plv_matrix",
    "predict",
    "save_checkpoint",
    "save_epochset",
    "strong_edges",
    "synth_generate",
    "train",
]
