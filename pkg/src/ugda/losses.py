"""Objective terms: uncertainty-weighted CE, pseudo-label CE, adversarial pair, weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .core import minmax_normalize

EPS = 1e-8
LOSS_TERMS = ("L_s", "L_t", "L_adv_D", "L_adv_G", "KL")
# weight attached to each term in the weighted total
TERM_WEIGHTS = {
    "L_s": "lambda_s",
    "L_t": "lambda_t",
    "L_adv_D": "lambda_D",
    "L_adv_G": "lambda_G",
    "KL": "lambda_KL",
}


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 1.0
    lambda_t: float = 0.1
    lambda_D: float = 1.0
    lambda_G: float = 0.003
    lambda_KL: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class LossReport:
    L_s: float = 0.0
    L_t: float = 0.0
    L_adv_D: float = 0.0
    L_adv_G: float = 0.0
    KL: float = 0.0
    total: float = 0.0

    def row(self) -> list[float]:
        return [self.L_s, self.L_t, self.L_adv_D, self.L_adv_G, self.KL, self.total]


def _pixel_nll(pred, y):
    if pred.ndim != 4 or y.shape != (pred.shape[0], *pred.shape[2:]):
        raise ValueError(f"prediction {tuple(pred.shape)} and labels {tuple(y.shape)} do not match")
    p_true = pred.gather(1, y.long().unsqueeze(1)).squeeze(1)
    return -torch.log(p_true.clamp_min(EPS))


def uce_loss(pred, y, u, reduction="mean"):
    """Cross-entropy weighted per pixel by ``1 + minmax_normalize(u)``.

    ``u`` is treated as a constant (no gradient flows into it). With
    ``reduction="none"`` the weighted per-pixel map ``[B, H, W]`` is returned.
    """
    nll = _pixel_nll(pred, y)
    if u.shape != nll.shape:
        raise ValueError(f"uncertainty {tuple(u.shape)} does not match labels {tuple(nll.shape)}")
    weighted = nll * (1.0 + minmax_normalize(u.detach()))
    return weighted if reduction == "none" else weighted.mean()


def target_ce_loss(pred, pseudo):
    return _pixel_nll(pred, pseudo).mean()


def adv_d_loss(d_src, d_tgt):
    """Discriminator BCE: source-derived patches -> 1, target-derived -> 0."""
    return -torch.log(d_src.clamp_min(EPS)).mean() - torch.log((1 - d_tgt).clamp_min(EPS)).mean()


def adv_g_loss(d_tgt):
    return -torch.log(d_tgt.clamp_min(EPS)).mean()


def full_objective(terms, w: LossWeights):
    """Weighted sum of the five terms; ``terms`` maps term name -> scalar (float or tensor)."""
    total = 0.0
    for name, weight_name in TERM_WEIGHTS.items():
        value = terms.get(name, 0.0)
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise FloatingPointError(f"loss term {name} is not finite ({v})")
        total = total + getattr(w, weight_name) * value
    return total


def make_report(terms, w: LossWeights) -> LossReport:
    vals = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in terms.items()}
    total = full_objective(vals, w)
    return LossReport(**{k: vals.get(k, 0.0) for k in LOSS_TERMS}, total=float(total))
