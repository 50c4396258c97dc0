"""Modulation recognition with a learnable frequency/phase correction module.

A small fully connected network estimates carrier frequency and phase
offsets from a raw IQ frame, a differentiable derotation applies them, and
a 1-D CNN classifies the corrected and uncorrected frames together. The
whole cascade is trained from modulation labels alone.
"""

from .bundle import ModelBundle, TrainConfig, build_model
from .channel import ChannelParams, apply_channel
from .classifier import CNN, CNNConfig, Cascade, build_cnn, classify
from .correction import CorrectionModule, derotate
from .dataset import Dataset, Examples, GenConfig, generate_dataset, read_dataset, write_dataset
from .evaluation import EvalReport, evaluate, export
from .iq import CLASS_NAMES, IQFrame, Modulation, modulate
from .trainer import train, train_matrix

__all__ = [
    "CLASS_NAMES", "CNN", "CNNConfig", "Cascade", "ChannelParams", "CorrectionModule", "Dataset",
    "EvalReport", "Examples", "GenConfig", "IQFrame", "ModelBundle", "Modulation", "TrainConfig",
    "apply_channel", "build_cnn", "build_model", "classify", "derotate", "evaluate", "export",
    "generate_dataset", "modulate", "read_dataset", "train", "train_matrix", "write_dataset",
]
