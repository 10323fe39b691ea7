"""Small end-to-end run: corpus, source pretraining, adaptation, evaluation.

Runs in a few minutes with shortened schedules; the default settings
(3000 + 2000 steps on 200 + 200 images) are what the acceptance suite uses.
"""
import sys
import tempfile
from pathlib import Path

import torch

from ugda.evaluation import evaluate, write_metrics
from ugda.synthdata import build_corpus, load_split
from ugda.trainer import DomainData, TrainConfig, adapt, pretrain_source


def show(title, rows):
    print(title, "  ".join(f"{r.name} {100 * r.dice:.2f}" for r in rows))


if __name__ == "__main__":
    torch.set_num_threads(1)
    root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="uda_"))
    m = build_corpus(60, 60, root / "data", seed=0)
    ids, x, y = load_split(m, "source", "train")
    source = DomainData(ids, x, y)
    ids, x, _ = load_split(m, "target", "train")
    target = DomainData(ids, x)

    cfg = TrainConfig(phase1_iters=800, phase2_iters=400, seed=0)
    pre = pretrain_source(source, cfg)
    show("source-only, source test:", evaluate(m, "test", pre, cfg, domain="source"))
    show("source-only, target test:", evaluate(m, "test", pre, cfg))

    ada = adapt(source, target, pre, cfg)
    rows = evaluate(m, "test", ada, cfg)
    show("adapted,     target test:", rows)
    h = ada.history
    print("target uncertainty per epoch:", [f"{v:.2e}" for v in [h["uncertainty_before"], *h["uncertainty_after_epoch"]]])
    print("images selected per epoch:", h["selected_per_epoch"])
    write_metrics(rows, root / "metrics.csv")
    print("metrics in", root / "metrics.csv")
