"""Implicit neural representations of audio, fitted directly or generated by a hypernetwork."""

from .checkpoint import INRModel, load_checkpoint, save_checkpoint
from .dsp import FreqWeighting, LossConfig, StftConfig, mel_stft_loss, total_loss
from .estimators import HyperINR, INRRegressor
from .errors import (AudioINRError, ConfigError, CorruptionError, DivergenceError, FormatError,
                     NumericError, ShapeError, UndefinedMetricError, UnsupportedFormatError)
from .hypernet import HypernetworkSpec, HypernetworkState, build_state, generate
from .inr import TargetNetworkSpec, param_count, compression_ratio
from .metrics import MetricsReport
from .signal import AudioClip, AugmentationConfig, load_wav, make_grid, save_wav
from .train import FitConfig, OneCycle, TrainConfig, fit_individual_inr, train_hypernetwork

__version__ = "0.1.0"
