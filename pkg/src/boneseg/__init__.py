"""Volumetric humerus/scapula segmentation with self-reinforced training.

Submodules:
    volume     grids, resampling, crop/pad and normalization
    io         header + raw volume files
    network    3D encoder/decoder, loss and checkpoints
    augment    smooth random distortions and flips
    trainer    Adam training loop
    selftrain  pseudo-label rounds
    metrics    DSC, Hausdorff and average surface distance
    crossval   k-fold protocol
    phantom    synthetic benchmark with corrupted labels
    cli        ``boneseg`` command line
"""

from .errors import BonesegError
from .metrics import MetricsReport, asd, dice, evaluate_case, hausdorff
from .network import NetworkConfig, ModelState, forward, init_model, load_checkpoint, save_checkpoint
from .selftrain import RoundPlan, self_reinforced_train
from .trainer import TrainConfig, train
from .volume import LabelVolume, ScalarVolume, VolumeGeometry

__version__ = "0.1.0"

__all__ = [
    "BonesegError", "VolumeGeometry", "ScalarVolume", "LabelVolume", "NetworkConfig", "ModelState",
    "init_model", "forward", "save_checkpoint", "load_checkpoint", "TrainConfig", "train",
    "RoundPlan", "self_reinforced_train", "MetricsReport", "dice", "hausdorff", "asd", "evaluate_case",
]
