"""Shared domain types and the small set of per-pixel tensor helpers."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch

__all__ = [
    "DomainTag",
    "ImageBatch",
    "MODEL_PARTS",
    "argmax_labels",
    "check_labels",
    "minmax_normalize",
    "one_hot",
    "softmax_channelwise",
]

# Parameter groups every model exposes (see ``UESM.param_groups``).
MODEL_PARTS = ("backbone", "prior", "posterior", "prediction", "frm", "discriminator")


class DomainTag(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True)
class ImageBatch:
    """Grayscale images ``[B, 1, H, W]`` in ``[0, 1]`` tagged with their domain."""

    data: torch.Tensor
    domain: DomainTag

    def __post_init__(self):
        x = self.data
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [B, 1, H, W] images, got {tuple(x.shape)}")
        if x.shape[0] < 1:
            raise ValueError("empty batch")
        h, w = x.shape[-2:]
        if h < 8 or w < 8 or h % 8 or w % 8:
            raise ValueError(f"image size {h}x{w} must be >= 8 and divisible by 8")
        if not torch.isfinite(x).all():
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "domain", DomainTag(self.domain))


def check_labels(labels: torch.Tensor, num_classes: int) -> None:
    if labels.dtype.is_floating_point:
        raise TypeError(f"label maps must be integer tensors, got {labels.dtype}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(
            f"label values must lie in [0, {num_classes - 1}], "
            f"got range [{int(labels.min())}, {int(labels.max())}]"
        )


class NonFiniteError(ValueError):
    pass


def softmax_channelwise(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over dim 1 of a ``[B, C, H, W]`` logit tensor."""
    if not torch.isfinite(logits).all():
        n_bad = int((~torch.isfinite(logits)).sum())
        raise NonFiniteError(f"logits contain {n_bad} non-finite entries")
    return torch.softmax(logits, dim=1)


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """``[B, H, W]`` integer labels -> ``[B, C, H, W]`` float one-hot maps."""
    check_labels(labels, num_classes)
    oh = torch.nn.functional.one_hot(labels.long(), num_classes)
    return oh.permute(0, 3, 1, 2).to(torch.get_default_dtype())


def argmax_labels(probs: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index, i.e. ties go to the lowest class
    return torch.argmax(probs, dim=1)


def minmax_normalize(u: torch.Tensor, hi: float = 0.1) -> torch.Tensor:
    """Rescale each image of a ``[B, H, W]`` map to ``[0, hi]``.

    Constant maps (max == min) map to all zeros.
    """
    flat = u.reshape(u.shape[0], -1)
    lo = flat.min(dim=1).values.view(-1, *([1] * (u.ndim - 1)))
    span = flat.max(dim=1).values.view(-1, *([1] * (u.ndim - 1))) - lo
    safe = torch.where(span > 0, span, torch.ones_like(span))
    out = hi * (u - lo) / safe
    return torch.where(span > 0, out, torch.zeros_like(out))
