import numpy as np
import pytest
import torch

from subspace_sr.data import bicubic_resize
from subspace_sr.models import (
    ChecksumError,
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    load_checkpoint,
    save_checkpoint,
)

SMALL_G = GeneratorConfig(base_channels=8, num_blocks=1)
SMALL_D = DiscriminatorConfig(base_channels=4, image_size=8, conv_layers=4)


def test_generator_shape():
    G = build_generator(SMALL_G)
    out = G(torch.rand(2, 3, 8, 8))
    assert out.shape == (2, 3, 32, 32)
    assert torch.isfinite(out).all()


@pytest.mark.parametrize("scale", [1, 2, 8])
def test_generator_other_scales(scale):
    G = build_generator(GeneratorConfig(base_channels=4, num_blocks=1, scale_factor=scale))
    assert G(torch.rand(1, 3, 4, 4)).shape == (1, 3, 4 * scale, 4 * scale)


def test_generator_rejects_bad_scale():
    with pytest.raises(ValueError):
        GeneratorConfig(scale_factor=3)
    with pytest.raises(ValueError):
        GeneratorConfig(num_blocks=0)


def test_same_seed_same_parameters():
    a, b = build_generator(SMALL_G, seed=4), build_generator(SMALL_G, seed=4)
    c = build_generator(SMALL_G, seed=5)
    for (ka, va), (_, vb), (_, vc) in zip(a.state_dict().items(), b.state_dict().items(),
                                         c.state_dict().items()):
        assert torch.equal(va, vb), ka
    assert any(not torch.equal(x, y) for x, y in zip(a.parameters(), c.parameters()))


def test_building_does_not_touch_global_rng():
    torch.manual_seed(11)
    want = torch.rand(3)
    torch.manual_seed(11)
    build_generator(SMALL_G, seed=0)
    assert torch.equal(torch.rand(3), want)


def test_zero_init_reproduces_bicubic_base(rng):
    G = build_generator(GeneratorConfig(base_channels=8, num_blocks=2, zero_init_last=True))
    G = G.double()
    lr = rng.uniform(size=(2, 3, 8, 8))
    with torch.no_grad():
        out = G(torch.tensor(lr)).numpy()
    # oracle: the data module's resampler, unclipped
    want = bicubic_resize(lr, 32, 32, clip=False)
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_rrdb_variant():
    G = build_generator(GeneratorConfig(base_channels=8, num_blocks=1, block="rrdb",
                                        growth_channels=4))
    assert G(torch.rand(1, 3, 4, 4)).shape == (1, 3, 16, 16)


def test_batchnorm_option():
    G = build_generator(GeneratorConfig(base_channels=4, num_blocks=1, use_batchnorm=True))
    assert any(isinstance(m, torch.nn.BatchNorm2d) for m in G.modules())
    assert not any(isinstance(m, torch.nn.BatchNorm2d) for m in build_generator(SMALL_G).modules())


def test_discriminator_shape():
    D = build_discriminator(DiscriminatorConfig())
    out = D(torch.rand(4, 6, 32, 32))
    assert out.shape == (4,)
    assert torch.isfinite(out).all()


def test_discriminator_eight_plus_two():
    D = build_discriminator(DiscriminatorConfig(conv_layers=8, linear_layers=2,
                                                base_channels=4, image_size=32))
    assert sum(isinstance(m, torch.nn.Conv2d) for m in D.modules()) == 8
    assert sum(isinstance(m, torch.nn.Linear) for m in D.modules()) == 2
    assert D(torch.rand(2, 6, 32, 32)).shape == (2,)


def test_discriminator_batch_independence():
    D = build_discriminator(SMALL_D)
    x = torch.rand(6, 6, 8, 8)
    with torch.no_grad():
        full = D(x)
        half = D(x[:3])
    torch.testing.assert_close(full[:3], half, rtol=1e-5, atol=1e-6)


def test_discriminator_too_small():
    assert DiscriminatorConfig(conv_layers=8).min_size == 16
    with pytest.raises(ValueError, match="minimum 16"):
        build_discriminator(DiscriminatorConfig(conv_layers=8, image_size=8))


def test_discriminator_wrong_input_size():
    D = build_discriminator(SMALL_D)
    with pytest.raises(ValueError):
        D(torch.rand(1, 6, 16, 16))


def test_discriminator_input_gradient_finite_difference(rng):
    D = build_discriminator(SMALL_D).double()
    x = torch.tensor(rng.uniform(size=(1, 6, 8, 8)), requires_grad=True)
    D(x).sum().backward()
    grad = x.grad.clone()
    eps = 1e-6
    num = torch.zeros_like(grad)
    flat = x.detach().clone().view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = D(flat.view_as(x)).item()
            flat[i] = orig - eps
            down = D(flat.view_as(x)).item()
            flat[i] = orig
            num.view(-1)[i] = (up - down) / (2 * eps)
    assert float((grad - num).norm() / num.norm()) < 1e-3


def test_checkpoint_roundtrip(tmp_path):
    G = build_generator(SMALL_G)
    path = tmp_path / "g.ckpt"
    digest = save_checkpoint(path, {"generator": G.state_dict(), "epoch": 3})
    assert len(digest) == 64
    back = load_checkpoint(path)
    assert back["epoch"] == 3
    for k, v in G.state_dict().items():
        assert torch.equal(back["generator"][k], v)
    assert not (tmp_path / "g.ckpt.tmp").exists()


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "g.ckpt"
    save_checkpoint(path, {"x": torch.arange(10)})
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_checkpoint_wrong_magic(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"0" * 100)
    with pytest.raises(ChecksumError):
        load_checkpoint(path)
