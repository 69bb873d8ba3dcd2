"""Eigenfaces of a synthetic corpus and the coarse-to-fine projection montage.

Run with ``python demos/01_pca_projections.py``; images go to ``demo_out/``.
"""

# %%
from pathlib import Path

import numpy as np

from subspace_sr.data import synth_corpus, write_image
from subspace_sr.pca import energy_dimension, fit_pca, montage_projections

out = Path("demo_out")
out.mkdir(exist_ok=True)

# %% [markdown]
# 220 face-like 32x32 images; the last 20 are held out.

# %%
manifest, images = synth_corpus(220, (3, 32, 32), seed=0, val_count=20)
train, val = images[:200], images[200:]
basis = fit_pca(train)
print("d =", basis.dim, " r =", basis.rank)

# %%
# how fast the spectrum decays
for k in (1, 5, 10, 25, 50):
    print(f"top-{k:<3d} energy {basis.energy_fraction(k):.4f}")
for f in (0.9, 0.99, 0.999):
    print(f"energy {f} needs n = {energy_dimension(basis, f)}")

# %%
# the first eigenfaces, rescaled to [0, 1] for display
for i in range(4):
    v = basis.fold(basis.basis[:, i])
    v = (v - v.min()) / (v.max() - v.min())
    write_image(out / f"eigenface_{i}.png", v)

# %% [markdown]
# Adding more of the spectrum to the mean face brings in detail. The
# distance to the source never grows, since each projection is the best
# approximation inside a larger subspace.

# %%
x = val[0].reshape(-1)
fractions = [0.0, 0.5, 0.9, 0.99, 0.999, 1.0]
tiles = montage_projections(basis, x, fractions)
for f, tile in zip(fractions, tiles):
    err = np.linalg.norm(tile.reshape(-1) - x)
    print(f"f={f:<6} n={energy_dimension(basis, f):<4d} error {err:.4f}")
write_image(out / "montage.png", np.concatenate(tiles, axis=2))
