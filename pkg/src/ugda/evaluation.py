"""Overlap metrics, dataset evaluation and uncertainty-map rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import argmax_labels
from .synthdata import load_split, to_uint8, write_pgm
from .trainer import Checkpoint
from .uesm import LatentConfig, mc_infer, split_seeds

METRIC_CLASSES = {"retinal": 1, "choroidal": 2}


@dataclass
class MetricRow:
    name: str
    dice: float
    conformity: float


def dice(pred, gt, c: int) -> float:
    """``2|P & G| / (|P| + |G|)`` for class ``c``; 1.0 when both masks are empty."""
    pred, gt = torch.as_tensor(pred), torch.as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    p, g = pred == c, gt == c
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def conformity(d: float) -> float:
    """``(3d - 2) / d``; NaN for ``d == 0`` where the metric is undefined."""
    if d <= 0:
        return math.nan
    return (3.0 * d - 2.0) / d


def metric_table(per_class_dice: dict[str, float]) -> list[MetricRow]:
    rows = [MetricRow(name, d, conformity(d)) for name, d in per_class_dice.items()]
    rows.append(
        MetricRow(
            "mean",
            sum(r.dice for r in rows) / len(rows),
            sum(r.conformity for r in rows) / len(rows),
        )
    )
    return rows


def segment(model, images, latent: LatentConfig, seed: int):
    """Mean-prediction label maps ``[n, H, W]`` for a stack of images, one seed per image."""
    model.eval()
    out = []
    for x, s in zip(images, split_seeds(seed, len(images))):
        res = mc_infer(x[None], latent, model, s)
        out.append(argmax_labels(res.mean)[0])
    return torch.stack(out)


def evaluate_arrays(pred_labels, gt_labels) -> list[MetricRow]:
    """Per-image Dice per class, averaged over images; conformity from the averaged Dice."""
    per_class = {}
    for name, c in METRIC_CLASSES.items():
        scores = [dice(p, g, c) for p, g in zip(pred_labels, gt_labels)]
        per_class[name] = float(np.mean(scores))
    return metric_table(per_class)


def evaluate(manifest, split, checkpoint: Checkpoint, cfg, domain="target", seed=None) -> list[MetricRow]:
    ids, images, labels = load_split(manifest, domain, split)
    if not ids:
        raise ValueError(f"no {domain}/{split} samples in manifest")
    model = checkpoint.build_model()
    seed = cfg.seed if seed is None else seed
    pred = segment(model, images, cfg.latent, seed)
    return evaluate_arrays(pred, labels)


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def write_metrics(rows, path) -> None:
    lines = ["class,dice,conformity"] + [f"{r.name},{_fmt(r.dice)},{_fmt(r.conformity)}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path) -> list[MetricRow]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        name, d, c = line.split(",")
        rows.append(MetricRow(name, float(d), float(c)))
    return rows


def render_uncertainty(image, model, latent: LatentConfig, out_path, seed=0, sigma_scale=1.0) -> dict:
    """Write U(x) as an 8-bit PGM scaled by its own range, plus a JSON sidecar with that range."""
    x = torch.as_tensor(image, dtype=torch.float32)
    while x.ndim < 4:
        x = x[None]
    model.eval()
    u = mc_infer(x, latent, model, seed, sigma_scale).uncertainty[0].numpy().astype(np.float64)
    lo, hi = float(u.min()), float(u.max())
    scaled = (u - lo) / (hi - lo) if hi > lo else np.zeros_like(u)
    out_path = Path(out_path)
    write_pgm(out_path, to_uint8(scaled))
    meta = {"min": lo, "max": hi, "mean": float(u.mean()), "seed": int(seed), "num_samples": latent.num_samples}
    out_path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return meta
