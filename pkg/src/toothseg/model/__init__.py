from .config import ModelConfig
from .network import DualBranchUNet, shape_manifest

__all__ = ["ModelConfig", "DualBranchUNet", "shape_manifest"]
