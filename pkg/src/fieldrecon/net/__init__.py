from .encoder import ConditionEncoder
from .unet import MODES, DenoiserNet, FieldModel, ModelConfig, UNet, VtUnet, build_model

__all__ = ["ConditionEncoder", "DenoiserNet", "FieldModel", "ModelConfig", "UNet", "VtUnet",
           "build_model", "MODES"]
