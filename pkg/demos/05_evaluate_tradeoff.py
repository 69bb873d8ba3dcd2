"""RMSE and PSNR of several checkpoints, grouped into RMSE regions.

Expects the artifacts written by ``04_train_desk_scale.py``.
"""

# %%
from pathlib import Path

from subspace_sr.data import build_triples, synth_corpus
from subspace_sr.evaluation import RegionPartition, sweep

_, images = synth_corpus(220, (3, 32, 32), seed=0, val_count=20)
val = build_triples(images[200:])
run = Path("demo_out/run")

# %%
checkpoints = ["bicubic", str(run / "pretrain.ckpt"), str(run / "adv_epoch0010.ckpt"),
               str(run / "final.ckpt"), "oracle"]
checkpoints = [c for c in checkpoints if c in ("bicubic", "oracle") or Path(c).exists()]

# region bounds here are arbitrary; pick them to suit the runs at hand
result = sweep(checkpoints, val, RegionPartition((5.0, 20.0, 30.0)))
for row in result.rows():
    print(row)

# %%
for region, rep in sorted(result.best_rmse.items()):
    print(f"region {region}: lowest RMSE {rep.mean_rmse:.3f} from {rep.checkpoint}")
result.write_csv(run / "tradeoff.csv")
