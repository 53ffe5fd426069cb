"""
UtilityIR: degradation type- and severity-aware all-in-one weather restoration.
"""
from .config import LossWeights, TrainConfig, load_config
from .degradation_encoder import DegradationEncoder
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    InvalidSpecError,
    NumericFailure,
    ShapeError,
    UtilityIRError,
)
from .inference_toolkit import Restorer
from .manifest import DatasetManifest, load_manifest
from .restore_net import RestoreNet, UtilityIR, model_summary
from .weather_synth import DegradationSpec, PairedSample, WeatherKind

__version__ = "0.1.0"

__all__ = [
    "LossWeights",
    "TrainConfig",
    "load_config",
    "DegradationEncoder",
    "RestoreNet",
    "UtilityIR",
    "model_summary",
    "Restorer",
    "DatasetManifest",
    "load_manifest",
    "DegradationSpec",
    "PairedSample",
    "WeatherKind",
    "UtilityIRError",
    "InvalidSpecError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericFailure",
    "CheckpointError",
]
