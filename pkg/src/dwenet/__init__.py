"""dweNet: a densely connected text CNN for sarcasm detection, with its own autodiff core."""

from dwenet.config import TrainConfig, load_config
from dwenet.model import Model, ModelConfig, preset
from dwenet.tensor import Tensor

__version__ = "0.1.0"

__all__ = ["Model", "ModelConfig", "Tensor", "TrainConfig", "load_config", "preset"]
