from ..boxes import Detection
from .checkpoint import CheckpointError, load_model, save_model
from .decode import decode_and_nms
from .loss import LossWeights, build_targets, detection_loss
from .model import FrsNano, FrsNanoConfig, Upsampler, a2c2f_mcea_lite, nano_forward
from .train import Dataset, clip_grad_norm, EpochLog, TrainConfig, evaluate_model, fit, lr_schedule, predict, train_step

__all__ = [
    "CheckpointError",
    "Dataset",
    "Detection",
    "EpochLog",
    "FrsNano",
    "FrsNanoConfig",
    "LossWeights",
    "TrainConfig",
    "Upsampler",
    "a2c2f_mcea_lite",
    "build_targets",
    "clip_grad_norm",
    "decode_and_nms",
    "detection_loss",
    "evaluate_model",
    "fit",
    "load_model",
    "lr_schedule",
    "nano_forward",
    "predict",
    "save_model",
    "train_step",
]
