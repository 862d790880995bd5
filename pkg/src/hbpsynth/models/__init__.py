from .unet import GeneratorConfig, UNetGenerator
from .extractor import PerceptualExtractorConfig, FeatureExtractor, BLOCK_SETS
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .losses import (
    feature_loss,
    unet_loss,
    pgan_discriminator_loss,
    pgan_generator_loss,
    pgan_losses,
    ddpm_loss,
)
from .diffusion import (
    DiffusionSchedule,
    ddpm_forward_sample,
    ddpm_condition_stack,
    ddpm_reverse_step,
)
from .checkpoint import save_checkpoint, load_checkpoint, TrainedModel
from .inference import infer_volume

__all__ = [
    "GeneratorConfig",
    "UNetGenerator",
    "PerceptualExtractorConfig",
    "FeatureExtractor",
    "BLOCK_SETS",
    "DiscriminatorConfig",
    "PatchDiscriminator",
    "feature_loss",
    "unet_loss",
    "pgan_discriminator_loss",
    "pgan_generator_loss",
    "pgan_losses",
    "ddpm_loss",
    "DiffusionSchedule",
    "ddpm_forward_sample",
    "ddpm_condition_stack",
    "ddpm_reverse_step",
    "save_checkpoint",
    "load_checkpoint",
    "TrainedModel",
    "infer_volume",
]
