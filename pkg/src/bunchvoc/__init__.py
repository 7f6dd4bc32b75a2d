"""Bunched LPC neural vocoder: inference engine, model storage and a toy trainer."""
from .config import PRESETS, HeadKind, ModelConfig
from .engine import Model, init_model, mac_count, synthesize
from .features import FeatureFrame, convert_frame, mcd
from .store import StorageFlag, dump, load

__all__ = [
    "PRESETS", "HeadKind", "ModelConfig", "Model", "init_model", "mac_count", "synthesize",
    "FeatureFrame", "convert_frame", "mcd", "StorageFlag", "dump", "load",
]
__version__ = "0.1.0"
