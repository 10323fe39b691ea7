"""Monte Carlo segmentation samples from the latent prior and the variance map they give.

A briefly trained model is sampled N times per image; the per-pixel
class-mean variance is high along layer boundaries and grows on the
shifted target domain.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from ugda.evaluation import render_uncertainty
from ugda.synthdata import DOMAIN_STYLES, PhantomSpec, render_sample
from ugda.trainer import DomainData, TrainConfig, pretrain_source
from ugda.uesm import LatentConfig, mc_infer


def domain(name, n, stream):
    pairs = [render_sample(1, stream, i, PhantomSpec(), DOMAIN_STYLES[name]) for i in range(n)]
    x = torch.from_numpy(np.concatenate([p[0] for p in pairs]))
    y = torch.from_numpy(np.concatenate([p[1] for p in pairs])).long()
    return DomainData([f"{name}{i}" for i in range(n)], x, y)


if __name__ == "__main__":
    torch.set_num_threads(1)
    src, tgt = domain("source", 24, 0), domain("target", 8, 1)
    ck = pretrain_source(src, TrainConfig(phase1_iters=300, seed=1))
    model = ck.build_model()

    latent = LatentConfig(num_samples=8)
    for name, data in (("source", domain("source", 8, 2)), ("target", tgt)):
        u = torch.stack([mc_infer(x[None], latent, model, seed=i).uncertainty[0] for i, x in enumerate(data.images)])
        boundary = torch.zeros_like(data.labels, dtype=torch.bool)
        boundary[:, 1:] = data.labels[:, 1:] != data.labels[:, :-1]
        print(f"{name}: mean U {u.mean():.2e}, on boundaries {u[boundary].mean():.2e}, elsewhere {u[~boundary].mean():.2e}")

    out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="umap_")) / "target0.pgm"
    meta = render_uncertainty(tgt.images[0], model, latent, out, seed=0)
    print("rendered", out, meta)
