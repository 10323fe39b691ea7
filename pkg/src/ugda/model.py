"""Assembly of all sub-networks into one module with named parameter groups."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch.nn as nn

from .backbone import Backbone, BackboneConfig
from .core import MODEL_PARTS
from .frm_disc import DiscConfig, FeatureRecalibration, PatchDiscriminator, RecalibConfig
from .uesm import LatentConfig, LatentEncoder, PredictionNet


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)
    recalib: RecalibConfig = field(default_factory=RecalibConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    # width of the prior/posterior encoders; None means half the backbone width
    encoder_width: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = dict(d.pop("backbone", {}))
        if "pyramid_bins" in bb:
            bb["pyramid_bins"] = tuple(bb["pyramid_bins"])
        return cls(
            backbone=BackboneConfig(**bb),
            latent=LatentConfig(**d.pop("latent", {})),
            recalib=RecalibConfig(**d.pop("recalib", {})),
            disc=DiscConfig(**d.pop("disc", {})),
            **d,
        )


class UDAModel(nn.Module):
    """Segmentation network with CVAE uncertainty plus the adversarial critic.

    ``backbone``, ``prior``, ``posterior`` and ``prediction`` form the
    segmenter; ``frm`` and ``discriminator`` form the domain critic.
    """

    generator_parts = ("backbone", "prior", "posterior", "prediction")
    critic_parts = ("frm", "discriminator")

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.num_classes = cfg.num_classes
        bb = cfg.backbone
        width = cfg.encoder_width or max(bb.base_channels // 2, 1)
        self.backbone = Backbone(bb)
        self.prior = LatentEncoder(bb.in_channels, cfg.latent.latent_dim, width, bb.stages)
        self.posterior = LatentEncoder(bb.in_channels + cfg.num_classes, cfg.latent.latent_dim, width, bb.stages)
        self.prediction = PredictionNet(bb.feature_dim, cfg.latent.latent_dim, cfg.num_classes)
        self.frm = FeatureRecalibration(self.backbone.tap_channels, cfg.recalib)
        self.discriminator = PatchDiscriminator(cfg.recalib.common_channels, cfg.disc)

    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        return {name: list(getattr(self, name).parameters()) for name in MODEL_PARTS}

    def parameters_of(self, names) -> list[nn.Parameter]:
        return [p for n in names for p in getattr(self, n).parameters()]
