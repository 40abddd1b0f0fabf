"""Region-aware exposure correction: model, losses, data tools, training, metrics."""

from recnet.model import ModelConfig, RECNet

__all__ = ["ModelConfig", "RECNet"]
__version__ = "0.1.0"
