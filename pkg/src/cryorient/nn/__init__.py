"""Reverse-mode autodiff and the convolutional encoder built on it."""
from .model import EncoderConfig, Model, build_encoder, desk_preset, full_preset
from .tensor import Tensor
from .train import History, TrainConfig, infer, train

__all__ = ["EncoderConfig", "History", "Model", "Tensor", "TrainConfig", "build_encoder", "desk_preset",
           "full_preset", "infer", "train"]
