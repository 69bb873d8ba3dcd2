"""Incremental PCA-subspace discrimination for GAN-based face super-resolution."""

from .curriculum import CurriculumConfig, CurriculumState, describe, schedule
from .data import SampleTriple, bicubic_resize, build_triples, make_triples, synth_corpus
from .evaluation import RegionPartition, psnr, rmse, sweep
from .losses import (
    DiscriminatorScores,
    discriminator_gan_loss,
    dual_l1_loss,
    generator_gan_loss,
    total_losses,
)
from .models import DiscriminatorConfig, GeneratorConfig, build_discriminator, build_generator
from .pca import (
    PcaBasis,
    SubspaceSplit,
    energy_dimension,
    fit_pca,
    load_basis,
    montage_projections,
    project_v,
    project_w,
    save_basis,
)
from .trainer import TrainConfig, pretrain, resume, train_adversarial

__version__ = "0.1.0"
