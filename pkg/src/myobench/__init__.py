"""Desk-scale myoelectric control study: synthetic sEMG, five classifier
variants, confidence rejection, proportional control, and a closed-loop
3-DoF target-acquisition evaluation."""

__version__ = "0.1.0"

from .dataset import EmgSession, MotionClass, PromptTimeline, SynthProfile
from .dsp import FilterSpec, FrameSpec
from .features import FrameSequence, Standardizer
from .models import Decision, LdaModel, RecurrentModel, TrainConfig
from .vicreg import AugmentConfig, VicregConfig

__all__ = [
    "EmgSession",
    "MotionClass",
    "PromptTimeline",
    "SynthProfile",
    "FilterSpec",
    "FrameSpec",
    "FrameSequence",
    "Standardizer",
    "Decision",
    "LdaModel",
    "RecurrentModel",
    "TrainConfig",
    "AugmentConfig",
    "VicregConfig",
    "__version__",
]
