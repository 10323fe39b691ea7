"""Uncertainty-ranked pseudo-labelling and the easy-to-hard subset schedule."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import torch

from .core import argmax_labels
from .uesm import LatentConfig, mc_infer, split_seeds

SCORE_REDUCTIONS = {
    "mean": lambda u: u.mean(),
    "max": lambda u: u.max(),
    "p95": lambda u: torch.quantile(u.flatten(), 0.95),
}


@dataclass
class PseudoSample:
    id: str
    index: int
    pseudo_label: torch.Tensor  # [1, H, W]
    score: float


@dataclass(frozen=True)
class CurriculumSchedule:
    f_start: float = 0.2
    f_end: float = 0.8
    # None: derived from the iteration budget by the trainer
    total_epochs: int | None = None

    def __post_init__(self):
        if not (0 < self.f_start <= self.f_end <= 1):
            raise ValueError(f"need 0 < f_start <= f_end <= 1, got {self.f_start}, {self.f_end}")


def score_target_set(ids, images, model, cfg: LatentConfig, seed: int, reduction="mean", sigma_scale=1.0):
    """Pseudo-label every image and sort ascending by image-level uncertainty.

    Each image gets its own child seed, so a sample's score does not depend
    on which other images are in the set. The sort is stable.
    """
    if len(ids) == 0:
        raise ValueError("cannot score an empty target set")
    reduce = SCORE_REDUCTIONS[reduction]
    seeds = split_seeds(seed, len(ids))
    out = []
    for i, (sid, s) in enumerate(zip(ids, seeds)):
        res = mc_infer(images[i : i + 1], cfg, model, s, sigma_scale)
        # label and score from the same Monte Carlo call
        out.append(PseudoSample(sid, i, argmax_labels(res.mean), float(reduce(res.uncertainty[0]))))
    return sorted(out, key=lambda p: p.score)


def curriculum_fraction(epoch: int, sched: CurriculumSchedule, total_epochs: int | None = None) -> float:
    e_total = total_epochs if total_epochs is not None else sched.total_epochs
    if e_total is None or e_total < 1:
        raise ValueError("curriculum needs total_epochs >= 1")
    if not 0 <= epoch < e_total:
        raise ValueError(f"epoch {epoch} outside [0, {e_total})")
    return sched.f_start + (sched.f_end - sched.f_start) * epoch / max(e_total - 1, 1)


def select_subset(ranked, f: float):
    """The ``ceil(f * n)`` most certain entries of an ascending-sorted list."""
    if f <= 0:
        raise ValueError(f"selection fraction must be > 0, got {f}")
    # guard against float noise such as 0.3 * 10 = 3.0000000000000004
    k = min(len(ranked), math.ceil(round(f * len(ranked), 9)))
    return ranked[:k]


def plan_epochs(n_target: int, iters: int, sched: CurriculumSchedule) -> int:
    """Smallest epoch count whose curriculum subsets cover ``iters`` steps."""
    if sched.total_epochs is not None:
        return sched.total_epochs
    e = 1
    while True:
        sizes = [len(select_subset(range(n_target), curriculum_fraction(k, sched, e))) for k in range(e)]
        if sum(sizes) >= iters:
            return e
        e += 1


def dump_ranking(path, ranked, selected_count: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score", "selected"])
        for i, p in enumerate(ranked):
            w.writerow([p.id, f"{p.score:.8e}", int(i < selected_count)])
