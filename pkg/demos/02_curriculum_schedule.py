"""What the two-stage curriculum looks like on a real spectrum."""

# %%
import numpy as np

from subspace_sr.curriculum import CurriculumConfig, describe, schedule
from subspace_sr.data import synth_corpus
from subspace_sr.pca import fit_pca

_, images = synth_corpus(200, (3, 32, 32), seed=0)
basis = fit_pca(images)

# %%
# default settings: 200 epochs, stage one ends at epoch 100
cfg = CurriculumConfig()
rows = describe(cfg, basis)
for r in rows[::25]:
    print(f"epoch {r['epoch']:3d}  n={r['n']:3d}  energy={r['energy']:.4f}  "
          f"alpha={r['alpha']}  beta={r['beta']}  lr={r['lr']:.2e}")

# %% [markdown]
# Stage one walks n evenly from 0 to the 99% energy dimension. Stage two
# continues to the 99.9% dimension while the learning rate decays.

# %%
ns = np.array([r["n"] for r in rows])
print("n never shrinks:", bool(np.all(np.diff(ns) >= 0)))
print("final state:", schedule(cfg, basis, cfg.total_epochs))

# %%
# the same spectrum read as a dimension count instead of energy
dim_cfg = CurriculumConfig(fraction_mode="dimension")
print("dimension mode, epoch 100:", schedule(dim_cfg, basis, 100).n)
