"""Self-constructing graph network on a small numpy autodiff engine."""

from .tensor import Tensor
from .model import ModelConfig, SCGNet, dice_loss, evaluate, total_loss
from .data import SceneSpec, generate_scene
from .config import RunConfig, TrainConfig, load_config

__all__ = [
    "Tensor",
    "ModelConfig",
    "SCGNet",
    "dice_loss",
    "evaluate",
    "total_loss",
    "SceneSpec",
    "generate_scene",
    "RunConfig",
    "TrainConfig",
    "load_config",
]

__version__ = "0.1.0"
