"""Multi-scale feature recalibration and the patch discriminator behind it."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class RecalibConfig:
    common_channels: int = 32
    reduction: int = 4
    # the common grid is the input image size divided by this factor
    downsample: int = 4
    # False: project only the deepest tap, no attention (plain high-level alignment)
    recalibrate: bool = True


@dataclass(frozen=True)
class DiscConfig:
    layers: int = 3
    base_width: int = 32

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("discriminator needs at least one stride-2 layer")


class ChannelGate(nn.Module):
    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s))))[:, :, None, None]


class SpatialGate(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, 1)

    def forward(self, x):
        return torch.sigmoid(self.conv(x))


class RecalibrationBlock(nn.Module):
    """Project one tap to the common shape, then channel/spatial gating fused by max."""

    def __init__(self, in_channels, out_channels, reduction=4):
        super().__init__()
        # bias-free so that a zero tap contributes exactly zero
        self.project = nn.Conv2d(in_channels, out_channels, 1, bias=False)
        self.channel_gate = ChannelGate(out_channels, reduction)
        self.spatial_gate = SpatialGate(out_channels)

    def forward(self, x, size, return_gates=False):
        x = self.project(x)
        if x.shape[-2:] != size:
            x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        cg = self.channel_gate(x)
        sg = self.spatial_gate(x)
        out = torch.maximum(x * cg, x * sg)
        if return_gates:
            return out, (cg, sg)
        return out


class FeatureRecalibration(nn.Module):
    def __init__(self, tap_channels, cfg: RecalibConfig = RecalibConfig()):
        super().__init__()
        self.cfg = cfg
        self.tap_channels = list(tap_channels)
        self.blocks = nn.ModuleList(
            RecalibrationBlock(c, cfg.common_channels, cfg.reduction) for c in self.tap_channels
        )
        # deepest-tap-only path, used when recalibration is switched off
        self.plain = nn.Conv2d(self.tap_channels[-1], cfg.common_channels, 1, bias=False)

    def common_size(self, pyr):
        # the first tap sits at half the input resolution
        h, w = pyr[0].shape[-2:]
        return (2 * h // self.cfg.downsample, 2 * w // self.cfg.downsample)

    def forward(self, pyr, order=None, return_gates=False):
        size = self.common_size(pyr)
        if not self.cfg.recalibrate:
            out = self.plain(pyr[-1])
            return F.interpolate(out, size=size, mode="bilinear", align_corners=False)
        if len(pyr) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} pyramid taps, got {len(pyr)}")
        order = range(len(pyr)) if order is None else order
        total, gates = None, []
        for i in order:
            if return_gates:
                y, g = self.blocks[i](pyr[i], size, return_gates=True)
                gates.append(g)
            else:
                y = self.blocks[i](pyr[i], size)
            total = y if total is None else total + y
        return (total, gates) if return_gates else total


class PatchDiscriminator(nn.Module):
    """Stride-2 conv + LeakyReLU stack, then a 1-channel conv and a sigmoid per patch."""

    def __init__(self, in_channels=32, cfg: DiscConfig = DiscConfig()):
        super().__init__()
        self.cfg = cfg
        layers = []
        cin = in_channels
        for i in range(cfg.layers):
            cout = cfg.base_width * 2**i
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, feat):
        return torch.sigmoid(self.net(feat))


def frm_forward(pyr, frm: FeatureRecalibration):
    return frm(pyr)


def patchgan_forward(feat, disc: PatchDiscriminator):
    return disc(feat)
