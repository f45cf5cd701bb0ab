from .am import AttentionAcousticModel, Encoded, position_codes
from .base import TrainingDivergedError
from .checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .features import Featurizer, featurize
from .lm import CharLanguageModel

__all__ = [
    "AttentionAcousticModel",
    "CharLanguageModel",
    "CheckpointError",
    "Encoded",
    "FORMAT_VERSION",
    "Featurizer",
    "TrainingDivergedError",
    "featurize",
    "load_checkpoint",
    "position_codes",
    "save_checkpoint",
]
