"""Easy-to-hard target selection: how many pseudo-labelled images each epoch keeps."""
import torch

from ugda.model import ModelConfig, UDAModel
from ugda.selftrain import CurriculumSchedule, curriculum_fraction, plan_epochs, score_target_set, select_subset
from ugda.uesm import LatentConfig

if __name__ == "__main__":
    sched = CurriculumSchedule()
    n_target, iters = 160, 2000
    epochs = plan_epochs(n_target, iters, sched)
    print(f"{n_target} target images, {iters} steps -> {epochs} epochs")
    ranked_ids = list(range(n_target))
    for e in range(epochs):
        f = curriculum_fraction(e, sched, epochs)
        print(f"  epoch {e:2d}: fraction {f:.3f}, images {len(select_subset(ranked_ids, f))}")

    torch.manual_seed(0)
    model = UDAModel(ModelConfig())
    images = torch.rand(6, 1, 64, 64)
    ranked = score_target_set([f"img{i}" for i in range(6)], images, model, LatentConfig(), seed=0)
    for p in ranked:
        print(f"  {p.id}: score {p.score:.3e}")
    print("first epoch keeps:", [p.id for p in select_subset(ranked, sched.f_start)])
