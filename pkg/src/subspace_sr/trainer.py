"""PSNR-oriented pretraining and curriculum-scheduled adversarial training.

Adversarial training grows the discriminated subspace W epoch by epoch. Each
batch runs one discriminator update on the relativistic LSGAN loss of the
W-projections, then one generator update on ``l1_w + alpha*l1_v + beta*l_g``.
"""

from __future__ import annotations

import contextlib
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .curriculum import CurriculumConfig, CurriculumState, schedule
from .data import SampleTriple, build_triples, iterate_batches, load_split, read_manifest
from .losses import (
    DiscriminatorScores,
    LossBreakdown,
    discriminator_gan_loss,
    dual_l1_loss,
    generator_gan_loss,
    total_losses,
)
from .models import (
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    load_checkpoint,
    save_checkpoint,
)
from .pca import PcaBasis, load_basis

log = logging.getLogger(__name__)

LOG_COLUMNS = ("phase", "epoch", "iteration", "n", "alpha", "beta", "lr",
               "l1_w", "l1_v", "l_g", "l_d", "total_g", "total_d", "wall_time")

# fields that may change between a checkpoint and its resumption
RUNTIME_FIELDS = {"train.checkpoint_every", "train.deterministic"}


class ConfigError(ValueError):
    """Invalid or incompatible training configuration."""


class TrainingAborted(RuntimeError):
    """A loss became non-finite. ``checkpoint`` is the last good archive."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainOptions:
    batch_size: int = 16
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 10
    grad_clip: float = 0.0
    deterministic: bool = True
    strict_decode: bool = False
    debug_condition_v: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("train.pretrain_epochs must be >= 0")


@dataclass(frozen=True)
class PathConfig:
    corpus: str = ""
    basis: str = ""
    pretrained: str = ""
    output_dir: str = "run"


@dataclass(frozen=True)
class TrainConfig:
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainOptions = field(default_factory=TrainOptions)
    paths: PathConfig = field(default_factory=PathConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        kinds = {f.name: f.default_factory for f in fields(cls)}
        unknown = set(data) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        parts = {}
        for name, factory in kinds.items():
            sub = factory()
            known = {f.name for f in fields(sub)}
            values = data.get(name, {})
            extra = set(values) - known
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
            parts[name] = replace(sub, **values)
        return cls(**parts)


def config_diff(old: dict, new: dict, ignore=RUNTIME_FIELDS) -> list[str]:
    """Dotted field names whose values differ, skipping paths and runtime fields."""
    changed = []
    for section in sorted(set(old) | set(new)):
        if section == "paths":
            continue
        a, b = old.get(section, {}), new.get(section, {})
        for key in sorted(set(a) | set(b)):
            name = f"{section}.{key}"
            if name not in ignore and a.get(key) != b.get(key):
                changed.append(f"{name}: {a.get(key)!r} -> {b.get(key)!r}")
    return changed


@dataclass
class TrainLogRecord:
    phase: str
    epoch: int
    iteration: int
    state: CurriculumState | None
    losses: dict
    wall_time: float | None

    def row(self) -> dict:
        row = dict.fromkeys(LOG_COLUMNS, "")
        row.update(phase=self.phase, epoch=self.epoch, iteration=self.iteration)
        if self.state is not None:
            row.update(n=self.state.n, alpha=repr(self.state.alpha),
                       beta=repr(self.state.beta), lr=repr(self.state.lr))
        row.update({k: repr(v) for k, v in self.losses.items()})
        if self.wall_time is not None:
            row["wall_time"] = f"{self.wall_time:.3f}"
        return row


class LogWriter:
    """Line-delimited CSV log flushed after every record."""

    def __init__(self, path: Path, keep_through_epoch: int | None = None):
        self.path = Path(path)
        if keep_through_epoch is not None and self.path.exists():
            with open(self.path, newline="") as fh:
                kept = [r for r in csv.DictReader(fh)
                        if int(r["epoch"]) <= keep_through_epoch]
            self._open("w")
            self._writer.writerows(kept)
        else:
            self._open("w")
        self._fh.flush()

    def _open(self, mode):
        self._fh = open(self.path, mode, newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=LOG_COLUMNS,
                                      lineterminator="\n")
        self._writer.writeheader()

    def write(self, record: TrainLogRecord) -> None:
        self._writer.writerow(record.row())
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@contextlib.contextmanager
def deterministic_mode(enabled: bool):
    """Single-threaded, deterministic torch kernels for the duration."""
    if not enabled:
        yield
        return
    threads = torch.get_num_threads()
    prior = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prior)
        torch.set_num_threads(threads)


class Projector:
    """Torch-side mean subtraction and W/V projections for a fixed basis."""

    def __init__(self, basis: PcaBasis, dtype=torch.float32):
        self.basis = basis
        self.mean = torch.tensor(np.array(basis.mean), dtype=dtype)
        self.vectors = torch.tensor(np.array(basis.basis), dtype=dtype)
        self.n = 0

    def set_dimension(self, n: int) -> None:
        if not 0 <= n <= self.vectors.shape[1]:
            raise ValueError(f"split dimension {n} outside [0, {self.vectors.shape[1]}]")
        self.n = n

    def center(self, images: torch.Tensor) -> torch.Tensor:
        return images.flatten(1) - self.mean

    def project(self, centered: torch.Tensor, part: str) -> torch.Tensor:
        cols = self.vectors[:, : self.n] if part == "w" else self.vectors[:, self.n:]
        return (centered @ cols) @ cols.T


def _as_tensors(batch: SampleTriple):
    return tuple(torch.from_numpy(np.ascontiguousarray(a)) for a in batch)


def _clip(params, limit: float):
    if limit > 0:
        torch.nn.utils.clip_grad_norm_(params, limit)


def adversarial_step(G, D, opt_g, opt_d, batch: SampleTriple, projector: Projector,
                     state: CurriculumState, grad_clip: float = 0.0,
                     debug_condition_v: bool = False) -> LossBreakdown:
    """One discriminator update followed by one generator update."""
    lr_img, hr_img, cond_img = _as_tensors(batch)
    shape = hr_img.shape

    sr_img = G(lr_img)
    sr_c = projector.center(sr_img)
    hr_c = projector.center(hr_img)
    cond_c = projector.center(cond_img)

    sr_w = projector.project(sr_c, "w")
    hr_w = projector.project(hr_c, "w")
    cond_w = projector.project(cond_c, "w")
    sr_v = projector.project(sr_c, "v")
    hr_v = projector.project(hr_c, "v")
    if debug_condition_v:
        cond_v = projector.project(cond_c, "v")
        log.debug("condition V-projection norm %.6g (unused by any loss)",
                  float(cond_v.norm()))

    def pair(proj):
        return torch.cat([proj.view(shape), cond_w.view(shape)], dim=1)

    hr_pair = pair(hr_w)

    opt_d.zero_grad(set_to_none=True)
    d_scores = DiscriminatorScores(D(pair(sr_w.detach())), D(hr_pair))
    l_d = discriminator_gan_loss(d_scores)
    l_d.backward()
    _clip(D.parameters(), grad_clip)
    opt_d.step()

    opt_g.zero_grad(set_to_none=True)
    g_scores = DiscriminatorScores(D(pair(sr_w)), D(hr_pair))
    l_g = generator_gan_loss(g_scores)
    l1_w, l1_v, l1 = dual_l1_loss(sr_w, hr_w, sr_v, hr_v, state.alpha)
    breakdown = total_losses(l1, l_g, l_d.detach(), state.beta, l1_w=l1_w, l1_v=l1_v)
    breakdown.total_g.backward()
    _clip(G.parameters(), grad_clip)
    opt_g.step()
    return breakdown


def _adam(params, lr, opts: TrainOptions):
    return torch.optim.Adam(params, lr=lr, betas=(opts.adam_beta1, opts.adam_beta2))


def _require(config: TrainConfig, *names: str) -> None:
    for name in names:
        value = getattr(config.paths, name)
        if not value:
            raise ConfigError(f"paths.{name} is not set")
        if not Path(value).exists():
            raise ConfigError(f"paths.{name} does not exist: {value}")


def load_training_triples(config: TrainConfig) -> SampleTriple:
    manifest = read_manifest(config.paths.corpus)
    _, hr = load_split(manifest, "train", strict=config.train.strict_decode)
    return build_triples(hr, config.generator.scale_factor)


def _check_finite(losses: dict, where: str, last: Path | None):
    bad = [k for k, v in losses.items() if not np.isfinite(v)]
    if bad:
        raise TrainingAborted(f"non-finite loss {bad} at {where}", last)


def pretrain(config: TrainConfig, triples: SampleTriple | None = None) -> Path:
    """Train the generator alone with per-element L1; returns the checkpoint path."""
    opts = config.train
    out = Path(config.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if triples is None:
        _require(config, "corpus")
        triples = load_training_triples(config)
    ckpt_path = out / "pretrain.ckpt"
    last_good = None

    with deterministic_mode(opts.deterministic):
        G = build_generator(config.generator, seed=opts.seed)
        opt = _adam(G.parameters(), opts.pretrain_lr, opts)
        writer = LogWriter(out / "pretrain_log.csv")
        start = time.perf_counter()
        iteration = 0
        try:
            for epoch in range(1, opts.pretrain_epochs + 1):
                for batch in iterate_batches(triples, opts.batch_size, opts.seed, epoch):
                    lr_img, hr_img, _ = _as_tensors(batch)
                    opt.zero_grad(set_to_none=True)
                    loss = (G(lr_img) - hr_img).abs().mean()
                    value = float(loss.detach())
                    _check_finite({"l1": value}, f"pretrain epoch {epoch}", last_good)
                    loss.backward()
                    _clip(G.parameters(), opts.grad_clip)
                    opt.step()
                    iteration += 1
                    wall = None if opts.deterministic else time.perf_counter() - start
                    writer.write(TrainLogRecord("pretrain", epoch, iteration, None,
                                                {"l1_w": value, "total_g": value}, wall))
                if opts.checkpoint_every and epoch % opts.checkpoint_every == 0:
                    _save(ckpt_path, "pretrain", config, epoch, iteration, G)
                    last_good = ckpt_path
        finally:
            writer.close()
        _save(ckpt_path, "pretrain", config, opts.pretrain_epochs, iteration, G)
    return ckpt_path


def _save(path, kind, config, epoch, iteration, G, D=None, opt_g=None, opt_d=None,
          state: CurriculumState | None = None) -> str:
    payload = {
        "kind": kind,
        "config": config.to_dict(),
        "epoch": epoch,
        "iteration": iteration,
        "curriculum_state": None if state is None else state.as_dict(),
        "generator": G.state_dict(),
        "discriminator": None if D is None else D.state_dict(),
        "opt_g": None if opt_g is None else opt_g.state_dict(),
        "opt_d": None if opt_d is None else opt_d.state_dict(),
    }
    return save_checkpoint(path, payload)


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    records: list[TrainLogRecord]
    finished: bool


def _resolve_basis(config: TrainConfig, basis) -> PcaBasis:
    if isinstance(basis, PcaBasis):
        return basis
    if basis is None:
        _require(config, "basis")
        basis = config.paths.basis
    return load_basis(basis)


def train_adversarial(config: TrainConfig, pretrained=None, basis=None,
                      triples: SampleTriple | None = None,
                      stop_after: int | None = None) -> TrainResult:
    """Run curriculum-scheduled adversarial training from epoch 1.

    Parameters
    ----------
    pretrained : path, optional
        Generator initialization; defaults to ``paths.pretrained`` and falls
        back to a freshly seeded generator when neither is set.
    basis : PcaBasis or path, optional
        Defaults to ``paths.basis``.
    stop_after : int, optional
        Stop (with a checkpoint) after this epoch, for later :func:`resume`.
    """
    basis = _resolve_basis(config, basis)
    if triples is None:
        _require(config, "corpus")
        triples = load_training_triples(config)
    opts = config.train
    pretrained = pretrained or config.paths.pretrained or None

    with deterministic_mode(opts.deterministic):
        G = build_generator(config.generator, seed=opts.seed)
        if pretrained:
            G.load_state_dict(load_checkpoint(pretrained)["generator"])
        D = build_discriminator(config.discriminator, seed=opts.seed + 1)
        opt_g = _adam(G.parameters(), config.curriculum.stage1_lr, opts)
        opt_d = _adam(D.parameters(), config.curriculum.stage1_lr, opts)
        out = Path(config.paths.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        writer = LogWriter(out / "train_log.csv")
        return _run(config, G, D, opt_g, opt_d, basis, triples, writer,
                    start_epoch=1, iteration=0, stop_after=stop_after)


def resume(checkpoint_path, config: TrainConfig | None = None, basis=None,
           triples: SampleTriple | None = None,
           stop_after: int | None = None) -> TrainResult:
    """Continue adversarial training from an epoch-boundary checkpoint.

    Refuses with :class:`ConfigError` when ``config`` differs from the
    checkpoint's configuration in any training-relevant field.
    """
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt["kind"] != "adversarial":
        raise ConfigError(f"{checkpoint_path} is a {ckpt['kind']} checkpoint")
    saved = TrainConfig.from_dict(ckpt["config"])
    if config is None:
        config = saved
    else:
        changed = config_diff(ckpt["config"], config.to_dict())
        if changed:
            raise ConfigError("config differs from checkpoint: " + "; ".join(changed))
    basis = _resolve_basis(config, basis)
    if triples is None:
        _require(config, "corpus")
        triples = load_training_triples(config)
    opts = config.train

    with deterministic_mode(opts.deterministic):
        G = build_generator(config.generator, seed=opts.seed)
        D = build_discriminator(config.discriminator, seed=opts.seed + 1)
        G.load_state_dict(ckpt["generator"])
        D.load_state_dict(ckpt["discriminator"])
        opt_g = _adam(G.parameters(), config.curriculum.stage1_lr, opts)
        opt_d = _adam(D.parameters(), config.curriculum.stage1_lr, opts)
        opt_g.load_state_dict(ckpt["opt_g"])
        opt_d.load_state_dict(ckpt["opt_d"])
        out = Path(config.paths.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        writer = LogWriter(out / "train_log.csv", keep_through_epoch=ckpt["epoch"])
        return _run(config, G, D, opt_g, opt_d, basis, triples, writer,
                    start_epoch=ckpt["epoch"] + 1, iteration=ckpt["iteration"],
                    stop_after=stop_after)


def _run(config, G, D, opt_g, opt_d, basis, triples, writer, start_epoch, iteration,
         stop_after) -> TrainResult:
    opts, cur = config.train, config.curriculum
    if tuple(basis.image_shape) != tuple(triples.hr.shape[1:]):
        writer.close()
        raise ConfigError(f"basis image shape {basis.image_shape} != corpus HR "
                          f"shape {tuple(triples.hr.shape[1:])}")
    out = Path(config.paths.output_dir)
    projector = Projector(basis)
    records = []
    last_good = None
    last_epoch = cur.total_epochs if stop_after is None else min(stop_after, cur.total_epochs)
    start = time.perf_counter()
    state = None
    try:
        for epoch in range(start_epoch, last_epoch + 1):
            state = schedule(cur, basis, epoch)
            projector.set_dimension(state.n)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = state.lr
            for batch in iterate_batches(triples, opts.batch_size, opts.seed, epoch):
                losses = adversarial_step(G, D, opt_g, opt_d, batch, projector, state,
                                          opts.grad_clip, opts.debug_condition_v)
                iteration += 1
                values = losses.as_floats()
                _check_finite(values, f"epoch {epoch} iteration {iteration}", last_good)
                wall = None if opts.deterministic else time.perf_counter() - start
                rec = TrainLogRecord("adversarial", epoch, iteration, state, values, wall)
                writer.write(rec)
                records.append(rec)
            if opts.checkpoint_every and epoch % opts.checkpoint_every == 0:
                path = out / f"adv_epoch{epoch:04d}.ckpt"
                _save(path, "adversarial", config, epoch, iteration, G, D, opt_g, opt_d, state)
                last_good = path
        final_epoch = max(start_epoch - 1, last_epoch)
        finished = final_epoch >= cur.total_epochs
        name = "final.ckpt" if finished else f"adv_epoch{final_epoch:04d}.ckpt"
        final = out / name
        _save(final, "adversarial", config, final_epoch, iteration, G, D, opt_g, opt_d,
              state if state is not None else schedule(cur, basis, final_epoch))
    finally:
        writer.close()
    return TrainResult(final, writer.path, records, finished)


def load_generator(checkpoint_path) -> Generator:
    """Rebuild the generator stored in any checkpoint, in eval mode."""
    ckpt = load_checkpoint(checkpoint_path)
    gcfg = GeneratorConfig(**ckpt["config"]["generator"])
    G = build_generator(gcfg, seed=None)
    G.load_state_dict(ckpt["generator"])
    G.eval()
    return G
