"""Uncertainty estimation and segmentation: a CVAE on top of the backbone.

A prior net encodes the image, a posterior net encodes image + annotation,
both into a diagonal Gaussian over a small latent space. A latent sample is
tiled over the image plane, concatenated with the backbone features and
decoded by a stack of 1x1 convolutions. Drawing N prior samples gives N
segmentations whose mean is the prediction and whose per-pixel variance,
averaged over classes, is the uncertainty map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .backbone import ResidualEncoder
from .core import check_labels, one_hot, softmax_channelwise

LOG_SIGMA_CLAMP = 10.0


@dataclass(frozen=True)
class LatentConfig:
    latent_dim: int = 6
    num_samples: int = 4

    def __post_init__(self):
        if self.latent_dim < 1 or self.num_samples < 1:
            raise ValueError("latent_dim and num_samples must both be >= 1")


@dataclass
class DiagGaussian:
    """Batch of diagonal Gaussians; ``mu`` and ``log_sigma`` are ``[B, L]``."""

    mu: torch.Tensor
    log_sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise ValueError(f"mu {tuple(self.mu.shape)} and log_sigma {tuple(self.log_sigma.shape)} differ")
        self.log_sigma = self.log_sigma.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)

    @property
    def sigma(self) -> torch.Tensor:
        return self.log_sigma.exp()

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[-1]

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mu.detach(), self.log_sigma.detach())


@dataclass
class MCResult:
    samples: torch.Tensor  # [N, B, C, H, W]
    mean: torch.Tensor  # [B, C, H, W]
    uncertainty: torch.Tensor  # [B, H, W]


class LatentEncoder(nn.Module):
    """Residual encoder -> global average pool -> parallel (mu, log_sigma) heads."""

    def __init__(self, in_channels, latent_dim=6, base_channels=8, stages=3):
        super().__init__()
        self.encoder = ResidualEncoder(in_channels, base_channels, stages)
        width = self.encoder.out_channels[-1]
        self.mu_head = nn.Linear(width, latent_dim)
        self.log_sigma_head = nn.Linear(width, latent_dim)

    def forward(self, x) -> DiagGaussian:
        h = self.encoder(x)[-1].mean(dim=(2, 3))
        return DiagGaussian(self.mu_head(h), self.log_sigma_head(h))


class PredictionNet(nn.Module):
    """Three 1x1 convolutions over ``[features, tiled z]``."""

    def __init__(self, feature_dim=64, latent_dim=6, num_classes=3, hidden=64):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(feature_dim + latent_dim, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, num_classes, 1),
        )

    def forward(self, features, z):
        b, _, h, w = features.shape
        if z.ndim == 1:
            z = z.expand(b, -1)
        planes = z[:, :, None, None].expand(-1, -1, h, w)
        return self.layers(torch.cat([features, planes], dim=1))


def prior_encode(x, model) -> DiagGaussian:
    return model.prior(x)


def posterior_encode(x, y, model) -> DiagGaussian:
    if x.shape[0] != y.shape[0] or x.shape[-2:] != y.shape[-2:]:
        raise ValueError(f"image {tuple(x.shape)} and label map {tuple(y.shape)} do not pair up")
    num_classes = model.num_classes
    check_labels(y, num_classes)
    return model.posterior(torch.cat([x, one_hot(y, num_classes).to(x.dtype)], dim=1))


def as_generator(seed) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def split_seeds(seed: int, n: int) -> list[int]:
    """``n`` independent child seeds of ``seed`` (fixed order)."""
    return [int(s.generate_state(1, dtype=np.uint64)[0] >> 1) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def sample_latent(g: DiagGaussian, seed, sigma_scale: float = 1.0) -> torch.Tensor:
    """Reparameterised draw ``mu + sigma_scale * sigma * eps``.

    ``seed`` is an int or a ``torch.Generator``; ``sigma_scale=0`` collapses the
    draw onto ``mu`` (used to switch sampling noise off in tests).
    """
    eps = torch.randn(g.mu.shape, generator=as_generator(seed), dtype=g.mu.dtype)
    return g.mu + sigma_scale * g.sigma * eps


def predict_with_latent(seg_features, z, model) -> torch.Tensor:
    return model.prediction(seg_features, z)


def summarize_samples(samples: torch.Tensor) -> MCResult:
    """Mean and class-averaged population variance of stacked ``[N, B, C, H, W]`` probability maps."""
    mean = samples.mean(dim=0)
    uncertainty = samples.var(dim=0, unbiased=False).mean(dim=1)
    return MCResult(samples=samples, mean=mean, uncertainty=uncertainty)


def mc_from_features(seg_features, prior: DiagGaussian, prediction, num_samples, seed, sigma_scale=1.0) -> MCResult:
    seeds = split_seeds(seed, num_samples)
    with torch.no_grad():
        probs = [
            softmax_channelwise(prediction(seg_features, sample_latent(prior, s, sigma_scale)))
            for s in seeds
        ]
        return summarize_samples(torch.stack(probs))


def mc_infer(x, cfg: LatentConfig, model, seed: int, sigma_scale: float = 1.0) -> MCResult:
    """N prior-latent segmentations of ``x`` with their mean and class-averaged variance."""
    with torch.no_grad():
        seg, _ = model.backbone(x)
        prior = model.prior(x)
    return mc_from_features(seg, prior, model.prediction, cfg.num_samples, seed, sigma_scale)


def kl_divergence(post: DiagGaussian, prior: DiagGaussian) -> torch.Tensor:
    """KL(post || prior) in closed form, summed over latent dims, averaged over batch."""
    if post.mu.shape != prior.mu.shape:
        raise ValueError(f"latent shapes differ: {tuple(post.mu.shape)} vs {tuple(prior.mu.shape)}")
    var_q = torch.exp(2 * post.log_sigma)
    var_p = torch.exp(2 * prior.log_sigma)
    kl = prior.log_sigma - post.log_sigma + (var_q + (post.mu - prior.mu) ** 2) / (2 * var_p) - 0.5
    return kl.sum(dim=-1).mean()

