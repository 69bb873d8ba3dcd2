"""Pretraining then a short curriculum run on the synthetic corpus.

Takes a couple of minutes on one CPU. Artifacts land in ``demo_out/run``.
"""

# %%
from dataclasses import replace

from subspace_sr.curriculum import CurriculumConfig
from subspace_sr.data import build_triples, synth_corpus
from subspace_sr.pca import fit_pca
from subspace_sr.trainer import PathConfig, TrainConfig, pretrain, read_log, train_adversarial

manifest, images = synth_corpus(220, (3, 32, 32), seed=0, val_count=20)
train = images[:200]
basis = fit_pca(train)
triples = build_triples(train)

cfg = TrainConfig(
    curriculum=CurriculumConfig(total_epochs=20, stage1_epochs=10),
    paths=PathConfig(output_dir="demo_out/run"),
)

# %%
# L1 pretraining, 30 epochs by default
ckpt = pretrain(cfg, triples=triples)
print("pretrained:", ckpt)

# %%
result = train_adversarial(cfg, pretrained=ckpt, basis=basis, triples=triples)
rows = read_log(result.log_path)
for r in rows[:: len(rows) // 8]:
    print(f"epoch {r['epoch']:>2} n={r['n']:>3} l1_w={float(r['l1_w']):.4f} "
          f"l_g={float(r['l_g']):.3f} l_d={float(r['l_d']):.3f}")

# %%
# a config that differs from the checkpoint is refused on resume
from subspace_sr.trainer import ConfigError, resume

bigger = replace(cfg, train=replace(cfg.train, batch_size=32))
try:
    resume(result.checkpoint.parent / "adv_epoch0010.ckpt", bigger, basis=basis, triples=triples)
except ConfigError as exc:
    print("refused:", exc)
