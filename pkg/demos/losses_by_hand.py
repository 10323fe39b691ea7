"""Worked values of the adaptation losses on tiny hand-made inputs."""
import math

import torch

from ugda.losses import LossWeights, adv_d_loss, adv_g_loss, full_objective, target_ce_loss, uce_loss

# two pixels, two classes; the first pixel is the most uncertain one
pred = torch.tensor([[0.5, 0.9], [0.5, 0.1]]).reshape(1, 2, 1, 2)
y = torch.zeros(1, 1, 2, dtype=torch.long)
u = torch.tensor([[[3.0, 1.0]]])

per_pixel = uce_loss(pred, y, u, reduction="none")
print("weighted CE per pixel:", per_pixel.flatten().tolist())
print("  1.1 * ln 2 =", 1.1 * math.log(2), "  -ln 0.9 =", -math.log(0.9))
print("plain CE:", target_ce_loss(pred, y).item(), " weighted CE:", uce_loss(pred, y, u).item())

half = torch.full((1, 1, 2, 2), 0.5)
print("critic loss at chance:", adv_d_loss(half, half).item(), "= 2 ln 2 =", 2 * math.log(2))
print("generator loss at chance:", adv_g_loss(half).item())
for p in (0.1, 0.5, 0.9):
    print(f"  critic says 'source' with p={p}: generator loss {adv_g_loss(torch.full((1, 1, 2, 2), p)).item():.4f}")

terms = dict.fromkeys(["L_s", "L_t", "L_adv_D", "L_adv_G", "KL"], 1.0)
print("objective with unit terms and default weights:", full_objective(terms, LossWeights()))
