"""Weakly supervised particle localization with annealed Gaussian masks.

A small CNN learns image-level presence labels. Particle positions are then
recovered by moving a Gaussian mask to maximize the classifier output,
removing each found particle and repeating.
"""

from .classifier import ClassifierModel, PresenceClassifier, TrainConfig, load_weights, save_weights, train
from .detector import Detection, DetectorConfig, VIRUS_SIZE_NM, detect
from .estimator import GaussianMaskDetector
from .evalkit import map50
from .synth import SceneSpec, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel",
    "PresenceClassifier",
    "TrainConfig",
    "train",
    "load_weights",
    "save_weights",
    "Detection",
    "DetectorConfig",
    "VIRUS_SIZE_NM",
    "detect",
    "GaussianMaskDetector",
    "map50",
    "SceneSpec",
    "generate_dataset",
]
