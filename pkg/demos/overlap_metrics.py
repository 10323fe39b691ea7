"""Dice and conformity on small masks, and the conformity curve."""
import numpy as np

from ugda.evaluation import conformity, dice, evaluate_arrays

gt = np.array([[0, 1, 1, 2], [0, 1, 2, 2]])
pred = np.array([[0, 1, 0, 2], [1, 1, 2, 2]])
for c, name in ((1, "retinal"), (2, "choroidal")):
    d = dice(pred, gt, c)
    print(f"{name}: dice {d:.4f}, conformity {conformity(d):.4f}")

for d in (1.0, 0.98, 0.9, 0.8, 2 / 3, 0.5):
    print(f"dice {d:.3f} -> conformity {conformity(d):+.4f}")

rows = evaluate_arrays(np.stack([pred, gt]), np.stack([gt, gt]))
for r in rows:
    print(f"{r.name:9s} {r.dice:.4f} {r.conformity:.4f}")
