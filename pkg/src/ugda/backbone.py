"""Segmentation trunk: residual encoder with a pyramid pooling head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 16
    stages: int = 3
    pyramid_bins: tuple[int, ...] = (1, 2, 3, 6)
    feature_dim: int = 64
    in_channels: int = 1


def norm2d(channels: int) -> nn.BatchNorm2d:
    # batch statistics in train and eval alike; with batch size 1 this is per-instance
    return nn.BatchNorm2d(channels, track_running_stats=False)


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = norm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = norm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), norm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class ResidualEncoder(nn.Module):
    """Stem conv followed by ``stages`` stride-2 stages of two residual blocks.

    Returns the list of per-stage outputs, shallow to deep.
    """

    def __init__(self, in_channels=1, base_channels=16, stages=3):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, base_channels, 3, padding=1, bias=False),
            norm2d(base_channels),
            nn.ReLU(inplace=True),
        )
        blocks = []
        cin = base_channels
        self.out_channels = []
        for i in range(stages):
            cout = base_channels * 2**i
            blocks.append(nn.Sequential(ResidualBlock(cin, cout, stride=2), ResidualBlock(cout, cout)))
            self.out_channels.append(cout)
            cin = cout
        self.stages = nn.ModuleList(blocks)

    def forward(self, x):
        taps = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


class PyramidPooling(nn.Module):
    """Pool at several grid sizes, project, upsample back and concatenate with the input."""

    def __init__(self, in_channels, bins=(1, 2, 3, 6)):
        super().__init__()
        self.bins = tuple(bins)
        branch = max(in_channels // len(self.bins), 1)
        # no normalisation here: a 1x1 pooled map has no spatial statistics at batch size 1
        self.branches = nn.ModuleList(nn.Conv2d(in_channels, branch, 1) for _ in self.bins)
        self.out_channels = in_channels + branch * len(self.bins)

    def forward(self, x):
        h, w = x.shape[-2:]
        if max(self.bins) > min(h, w):
            raise ValueError(f"pyramid bin {max(self.bins)} exceeds encoder output size {h}x{w}")
        outs = [x]
        for b, conv in zip(self.bins, self.branches):
            y = F.relu(conv(F.adaptive_avg_pool2d(x, b)))
            outs.append(F.interpolate(y, size=(h, w), mode="bilinear", align_corners=False))
        return torch.cat(outs, dim=1)


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = ResidualEncoder(cfg.in_channels, cfg.base_channels, cfg.stages)
        self.ppm = PyramidPooling(self.encoder.out_channels[-1], cfg.pyramid_bins)
        self.fuse = nn.Sequential(
            nn.Conv2d(self.ppm.out_channels, cfg.feature_dim, 3, padding=1, bias=False),
            norm2d(cfg.feature_dim),
            nn.ReLU(inplace=True),
        )

    @property
    def tap_channels(self) -> list[int]:
        return [*self.encoder.out_channels, self.cfg.feature_dim]

    def forward(self, x):
        """Return ``(seg_features [B, feature_dim, H, W], pyramid taps)``.

        The pyramid holds one tap per encoder stage plus the fused map, shallow to deep.
        """
        div = 2**self.cfg.stages
        h, w = x.shape[-2:]
        if h % div or w % div:
            raise ValueError(f"input size {h}x{w} must be divisible by {div}")
        taps = self.encoder(x)
        fused = self.fuse(self.ppm(taps[-1]))
        seg = F.interpolate(fused, size=(h, w), mode="bilinear", align_corners=False)
        return seg, [*taps, fused]


def backbone_forward(x, net: Backbone):
    return net(x)
