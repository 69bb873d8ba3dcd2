"""The relativistic least-squares losses on a few hand-picked scores."""

# %%
import torch

from subspace_sr.losses import (
    DiscriminatorScores,
    discriminator_gan_loss,
    dual_l1_loss,
    generator_gan_loss,
)

t = lambda v: torch.tensor(v, dtype=torch.float64)

# %%
# a discriminator that cannot tell the two apart scores 1.0 on both sides
same = DiscriminatorScores(t([0.4, 0.4]), t([0.4, 0.4]))
print(generator_gan_loss(same).item(), discriminator_gan_loss(same).item())

# %%
# one sample: SR scored 0.2, HR scored 0.8
sc = DiscriminatorScores(t([0.2]), t([0.8]))
print("L_G", generator_gan_loss(sc).item())      # (0.2 - 0.8 - 1)^2 + (0.8 - 0.2)^2
print("L_D", discriminator_gan_loss(sc).item())  # (0.8 - 0.2 - 1)^2 + (0.2 - 0.8)^2

# %%
# only score differences matter
shifted = DiscriminatorScores(sc.sr_scores + 5, sc.hr_scores + 5)
print("shifted L_G", generator_gan_loss(shifted).item())

# %%
# dual L1 on the two subspaces; alpha = 0 ignores the V residual
z = t([0.0, 0.0, 0.0, 0.0])
for alpha in (1.0, 0.0):
    l1_w, l1_v, comb = dual_l1_loss(t([1.0, 2.0, 0, 0]), z, t([0, 0, 3.0, 1.0]), z, alpha)
    print(f"alpha={alpha}: l1_w={l1_w.item()} l1_v={l1_v.item()} combined={comb.item()}")
