"""Label-mixing algebra: Cutmix masks, Mixup blends, teacher targets.

Shows the exact bookkeeping: the mixing fraction always comes from the
realized mask, the teacher's probability maps mix under the same mask, and
the final target is a convex combination of the two label sources.
"""

import numpy as np

from hirivit.engine import Tensor
from hirivit.train import (cutmix, distill_target, majority_downsample, mixup)

rng = np.random.default_rng(7)

print("=" * 72)
print("1. Cutmix: a rectangle of one image pasted over another")
print("=" * 72)
xa = np.full((3, 8, 8), 1.0)
xb = np.full((3, 8, 8), -1.0)
ya = np.array([1.0, 0.0])
yb = np.array([0.0, 1.0])
m = cutmix(xa, ya, xb, yb, rng)
print("mask (1 = first image):")
print(m.mask.astype(int))
print(f"realized lam = mask mean = {m.lam:.4f}")
print(f"mixed label  = lam*ya + (1-lam)*yb = {np.round(m.label, 4)}")
print()

print("=" * 72)
print("2. Mixup: a convex pixel blend, no mask")
print("=" * 72)
mm = mixup(xa, ya, xb, yb, rng)
print(f"lam = {mm.lam:.4f}; blended pixel value = {mm.image[0, 0, 0]:.4f}"
      f" (should be 2*lam-1 = {2 * mm.lam - 1:.4f})")
print()

print("=" * 72)
print("3. the mask travels to the teacher's grid by majority vote")
print("=" * 72)
coarse = majority_downsample(m.mask, (4, 4))
print(coarse.astype(int))
print(f"coarse fraction {coarse.mean():.4f} vs full-resolution {m.lam:.4f}")
print()

print("=" * 72)
print("4. teacher maps mix under the mask; alpha blends the label sources")
print("=" * 72)


class TinyTeacher:
    """Constant maps: confident class 0 for bright inputs, class 1 for dark."""

    training = False

    def train(self, mode=True):
        return self

    def eval(self):
        return self

    def forward_dense_logits(self, x):
        out = np.zeros((x.shape[0], 2, 4, 4))
        for i in range(x.shape[0]):
            out[i, 0 if x.data[i].mean() >= 0 else 1] = 2.0
        return Tensor(out)


teacher = TinyTeacher()
for alpha in (1.0, 0.5, 0.0):
    out = distill_target(teacher, xa[None], xb[None], m.mask, m.label[None],
                         alpha=alpha)
    print(f"alpha={alpha:3.1f}: mixed label {np.round(m.label, 3)},"
          f" teacher label {np.round(out.y_teacher[0], 3)},"
          f" final target {np.round(out.y_target[0], 3)}")
print()
print("alpha=1 ignores the teacher entirely (plain Cutmix training);")
print("alpha=0 trusts only the teacher's spatially mixed prediction.")
