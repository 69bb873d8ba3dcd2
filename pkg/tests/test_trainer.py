import hashlib
from dataclasses import replace

import numpy as np
import pytest
import torch

from subspace_sr.curriculum import CurriculumConfig, CurriculumState, schedule
from subspace_sr.data import build_triples
from subspace_sr.models import (
    ChecksumError,
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    load_checkpoint,
)
from subspace_sr.pca import fit_pca
from subspace_sr.trainer import (
    LOG_COLUMNS,
    ConfigError,
    PathConfig,
    Projector,
    TrainConfig,
    TrainingAborted,
    TrainOptions,
    adversarial_step,
    config_diff,
    pretrain,
    read_log,
    resume,
    train_adversarial,
)


def tiny_config(out, **train):
    opts = dict(batch_size=16, pretrain_epochs=2, checkpoint_every=2, seed=7)
    opts.update(train)
    return TrainConfig(
        curriculum=CurriculumConfig(total_epochs=4, stage1_epochs=2,
                                    stage1_target_fraction=0.9,
                                    stage2_target_fraction=0.99),
        generator=GeneratorConfig(base_channels=4, num_blocks=1),
        discriminator=DiscriminatorConfig(base_channels=4, image_size=32),
        train=TrainOptions(**opts),
        paths=PathConfig(output_dir=str(out)),
    )


@pytest.fixture(scope="module")
def train_triples(small_corpus):
    manifest, images = small_corpus
    return build_triples(images[[s == "train" for s in manifest.splits]])


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def step_once(basis, triples, state, seed=0):
    cfg = tiny_config("unused")
    G = build_generator(cfg.generator, seed=seed)
    D = build_discriminator(cfg.discriminator, seed=seed + 1)
    opt_g = torch.optim.Adam(G.parameters(), lr=state.lr)
    opt_d = torch.optim.Adam(D.parameters(), lr=state.lr)
    projector = Projector(basis)
    projector.set_dimension(state.n)
    batch = type(triples)(*(a[:4] for a in triples))
    return adversarial_step(G, D, opt_g, opt_d, batch, projector, state)


# -- single steps -----------------------------------------------------------

def test_empty_subspace_has_zero_w_loss(small_basis, train_triples):
    out = step_once(small_basis, train_triples, CurriculumState(0, 0, 1.0, 0.02, 1e-4))
    f = out.as_floats()
    assert f["l1_w"] == 0.0
    # both projections are zero, so the discriminator sees identical inputs
    assert f["l_d"] == pytest.approx(1.0, abs=1e-5)
    assert f["l_g"] == pytest.approx(1.0, abs=1e-3)


def test_alpha_zero_drops_v_term(small_basis, train_triples):
    state = CurriculumState(3, 5, 0.0, 0.05, 1e-4)
    f = step_once(small_basis, train_triples, state).as_floats()
    assert f["l1_v"] > 0.0
    assert f["total_g"] == pytest.approx(f["l1_w"] + 0.05 * f["l_g"], abs=1e-7)


def test_projector_matches_numpy(small_basis, small_corpus, rng):
    _, images = small_corpus
    proj = Projector(small_basis, dtype=torch.float64)
    proj.set_dimension(6)
    x = torch.tensor(images[:3].astype(np.float64))
    got = proj.project(proj.center(x), "w").numpy()
    want = small_basis.split(6).project_w(images[:3].reshape(3, -1))
    np.testing.assert_allclose(got, want, atol=1e-10)
    with pytest.raises(ValueError):
        proj.set_dimension(small_basis.rank + 1)


# -- full runs --------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run(small_basis, train_triples, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    result = train_adversarial(cfg, basis=small_basis, triples=train_triples)
    return cfg, result


def test_run_finishes(tiny_run):
    cfg, result = tiny_run
    assert result.finished
    assert result.checkpoint.name == "final.ckpt"
    assert (result.checkpoint.parent / "adv_epoch0002.ckpt").exists()
    ckpt = load_checkpoint(result.checkpoint)
    assert ckpt["epoch"] == 4
    assert ckpt["kind"] == "adversarial"


def test_log_identity_and_finiteness(tiny_run):
    _, result = tiny_run
    rows = read_log(result.log_path)
    assert tuple(rows[0]) == LOG_COLUMNS
    assert len(rows) == 4 * 3
    for r in rows:
        vals = {k: float(r[k]) for k in ("l1_w", "l1_v", "l_g", "l_d", "total_g", "total_d")}
        assert all(np.isfinite(v) for v in vals.values())
        want = vals["l1_w"] + float(r["alpha"]) * vals["l1_v"] + float(r["beta"]) * vals["l_g"]
        assert vals["total_g"] == pytest.approx(want, abs=1e-6)
        assert vals["total_d"] == vals["l_d"]
        assert r["wall_time"] == ""


def test_logged_trajectory_matches_schedule(tiny_run, small_basis):
    cfg, result = tiny_run
    for r in read_log(result.log_path):
        st = schedule(cfg.curriculum, small_basis, int(r["epoch"]))
        assert int(r["n"]) == st.n
        assert float(r["alpha"]) == st.alpha
        assert float(r["beta"]) == st.beta
        assert float(r["lr"]) == st.lr


def test_resume_reproduces_uninterrupted_run(tiny_run, small_basis, train_triples, tmp_path):
    _, full = tiny_run
    cfg = tiny_config(tmp_path)
    part = train_adversarial(cfg, basis=small_basis, triples=train_triples, stop_after=2)
    assert not part.finished
    ckpt = load_checkpoint(part.checkpoint)
    assert ckpt["curriculum_state"] == schedule(cfg.curriculum, small_basis, 2).as_dict()
    done = resume(part.checkpoint, cfg, basis=small_basis, triples=train_triples)
    assert done.finished
    assert done.records[0].state == schedule(cfg.curriculum, small_basis, 3)
    assert (tmp_path / "train_log.csv").read_bytes() == full.log_path.read_bytes()
    a = load_checkpoint(done.checkpoint)["generator"]
    b = load_checkpoint(full.checkpoint)["generator"]
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_resume_refuses_changed_batch_size(tiny_run, small_basis, train_triples, tmp_path):
    cfg, full = tiny_run
    changed = replace(cfg, train=replace(cfg.train, batch_size=8))
    with pytest.raises(ConfigError, match="train.batch_size"):
        resume(full.checkpoint.parent / "adv_epoch0002.ckpt", changed,
               basis=small_basis, triples=train_triples)


def test_resume_corrupted_archive(tiny_run, tmp_path):
    _, full = tiny_run
    raw = bytearray((full.checkpoint.parent / "adv_epoch0002.ckpt").read_bytes())
    raw[len(raw) // 2] ^= 0x01
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        resume(bad)


def test_basis_shape_mismatch(train_triples, tmp_path, rng):
    basis = fit_pca(rng.uniform(size=(5, 3, 16, 16)))
    with pytest.raises(ConfigError, match="shape"):
        train_adversarial(tiny_config(tmp_path), basis=basis, triples=train_triples)


def test_missing_paths_named(tmp_path):
    with pytest.raises(ConfigError, match="paths.basis"):
        train_adversarial(tiny_config(tmp_path))
    with pytest.raises(ConfigError, match="paths.corpus"):
        pretrain(tiny_config(tmp_path))


def test_non_finite_loss_aborts(small_basis, train_triples, tmp_path):
    lr = train_triples.lr.copy()
    lr[:] = np.nan
    bad = type(train_triples)(lr, train_triples.hr, train_triples.condition)
    with pytest.raises(TrainingAborted) as info:
        train_adversarial(tiny_config(tmp_path), basis=small_basis, triples=bad)
    assert info.value.checkpoint is None
    with pytest.raises(TrainingAborted):
        pretrain(tiny_config(tmp_path / "p"), triples=bad)


# -- pretraining --------------------------------------------------------------

def test_pretrain_zero_epochs_is_passthrough(train_triples, tmp_path):
    cfg = tiny_config(tmp_path, pretrain_epochs=0)
    path = pretrain(cfg, triples=train_triples)
    saved = load_checkpoint(path)["generator"]
    fresh = build_generator(cfg.generator, seed=cfg.train.seed).state_dict()
    assert all(torch.equal(saved[k], fresh[k]) for k in fresh)


def test_pretrain_is_deterministic(train_triples, tmp_path):
    a = pretrain(tiny_config(tmp_path / "a"), triples=train_triples)
    b = pretrain(tiny_config(tmp_path / "b"), triples=train_triples)
    # the config echo stores output_dir, so compare weights and logs
    ga, gb = load_checkpoint(a)["generator"], load_checkpoint(b)["generator"]
    assert all(torch.equal(ga[k], gb[k]) for k in ga)
    assert sha(a.parent / "pretrain_log.csv") == sha(b.parent / "pretrain_log.csv")


def test_pretrained_weights_are_loaded(small_basis, train_triples, tmp_path):
    cfg = tiny_config(tmp_path, pretrain_epochs=1)
    path = pretrain(cfg, triples=train_triples)
    cfg0 = replace(cfg, curriculum=replace(cfg.curriculum, stage1_lr=0.0,
                                           stage2_lr_start=0.0, stage2_lr_end=0.0))
    res = train_adversarial(cfg0, pretrained=path, basis=small_basis,
                            triples=train_triples, stop_after=1)
    got = load_checkpoint(res.checkpoint)["generator"]
    want = load_checkpoint(path)["generator"]
    assert all(torch.equal(got[k], want[k]) for k in want)


# -- configuration ------------------------------------------------------------

def test_config_dict_roundtrip():
    cfg = tiny_config("x")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_config_rejects_unknown():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": {}})
    with pytest.raises(ConfigError, match="colour"):
        TrainConfig.from_dict({"train": {"colour": 1}})


def test_config_diff_ignores_runtime_fields():
    a = tiny_config("a").to_dict()
    b = replace(tiny_config("b"), train=replace(tiny_config("b").train,
                                                checkpoint_every=5)).to_dict()
    assert config_diff(a, b) == []
    c = replace(tiny_config("a"), train=replace(tiny_config("a").train, seed=1)).to_dict()
    assert config_diff(a, c) == ["train.seed: 7 -> 1"]
