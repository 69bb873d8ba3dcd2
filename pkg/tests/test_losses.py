import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from subspace_sr.losses import (
    DiscriminatorScores,
    LossBreakdown,
    discriminator_gan_loss,
    dual_l1_loss,
    generator_gan_loss,
    total_losses,
)


def scores(s, h, dtype=torch.float64):
    return DiscriminatorScores(torch.tensor(s, dtype=dtype), torch.tensor(h, dtype=dtype))


def central_difference(f, x, eps=1e-6):
    """Numerical gradient of scalar ``f`` at float64 tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = f(x).item()
        flat[i] = orig - eps
        down = f(x).item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def analytic(f, x):
    x = x.detach().clone().requires_grad_(True)
    f(x).backward()
    return x.grad


def rel_err(a, b):
    return float((a - b).norm() / max(b.norm(), 1e-12))


# -- values -----------------------------------------------------------------

@pytest.mark.parametrize("c", [-3.0, 0.0, 0.25, 7.5])
def test_constant_discriminator(c):
    sc = scores([c] * 4, [c] * 4)
    assert generator_gan_loss(sc).item() == 1.0
    assert discriminator_gan_loss(sc).item() == 1.0


def test_hand_evaluated_single_sample():
    sc = scores([0.2], [0.8])
    assert generator_gan_loss(sc).item() == pytest.approx(2.92, abs=1e-9)
    assert discriminator_gan_loss(sc).item() == pytest.approx(0.52, abs=1e-9)


def test_perfect_separation():
    assert discriminator_gan_loss(scores([0.0], [1.0])).item() == 1.0


def test_swap_symmetry(rng):
    s, h = rng.normal(size=6), rng.normal(size=6)
    assert generator_gan_loss(scores(h, s)).item() == discriminator_gan_loss(scores(s, h)).item()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.data())
def test_losses_non_negative(s, data):
    h = data.draw(st.lists(st.floats(-10, 10), min_size=len(s), max_size=len(s)))
    assert generator_gan_loss(scores(s, h)).item() >= 0
    assert discriminator_gan_loss(scores(s, h)).item() >= 0


def test_shift_invariance_exact():
    # dyadic values and shift keep every intermediate exactly representable
    s, h = [0.25, -1.5, 2.0], [0.75, 0.5, -0.125]
    for shift in (1.0, -4.0, 0.5):
        a, b = scores(s, h), scores(np.add(s, shift), np.add(h, shift))
        assert generator_gan_loss(a).item() == generator_gan_loss(b).item()
        assert discriminator_gan_loss(a).item() == discriminator_gan_loss(b).item()


def test_shift_invariance_general(rng):
    s, h = rng.normal(size=16), rng.normal(size=16)
    a, b = scores(s, h), scores(s + 3.7, h + 3.7)
    assert generator_gan_loss(a).item() == pytest.approx(generator_gan_loss(b).item(), rel=1e-12)


def test_batch_validation():
    with pytest.raises(ValueError):
        generator_gan_loss(scores([], []))
    with pytest.raises(ValueError):
        discriminator_gan_loss(scores([1.0, 2.0], [1.0]))


def test_dual_l1_values():
    z = torch.zeros(4, dtype=torch.float64)
    dw = torch.tensor([1.0, 2.0, 0.0, 0.0], dtype=torch.float64)
    dv = torch.tensor([0.0, 0.0, 3.0, 1.0], dtype=torch.float64)
    l1_w, l1_v, comb = dual_l1_loss(dw, z, dv, z, alpha=1.0)
    assert (l1_w.item(), l1_v.item(), comb.item()) == (0.75, 1.0, 1.75)
    _, _, comb0 = dual_l1_loss(dw, z, dv, z, alpha=0.0)
    assert comb0.item() == 0.75


def test_dual_l1_identical_inputs(rng):
    x = torch.tensor(rng.normal(size=(3, 12)))
    assert [t.item() for t in dual_l1_loss(x, x, x, x, 0.7)] == [0.0, 0.0, 0.0]


def test_dual_l1_shape_mismatch():
    with pytest.raises(ValueError):
        dual_l1_loss(torch.zeros(3), torch.zeros(4), torch.zeros(3), torch.zeros(3), 1.0)


def test_total_losses():
    t = lambda v: torch.tensor(v, dtype=torch.float64)
    lb = total_losses(t(0.5), t(2.0), t(0.9), beta=0.02)
    assert lb.total_g.item() == pytest.approx(0.54, abs=1e-12)
    assert lb.total_d.item() == 0.9
    assert lb.l1_w.item() == 0.5 and lb.l1_v.item() == 0.0
    assert lb.is_finite()
    parts = total_losses(t(1.75), t(1.0), t(1.0), beta=0.5, l1_w=t(0.75), l1_v=t(1.0))
    assert parts.as_floats()["total_g"] == 2.25


def test_breakdown_detects_non_finite():
    t = lambda v: torch.tensor(v)
    lb = LossBreakdown(t(0.0), t(0.0), t(float("nan")), t(1.0), t(0.0), t(1.0))
    assert not lb.is_finite()


# -- gradients --------------------------------------------------------------

@pytest.mark.parametrize("loss", [generator_gan_loss, discriminator_gan_loss])
@pytest.mark.parametrize("wrt", ["sr", "hr"])
def test_gan_loss_gradients(rng, loss, wrt):
    s = torch.tensor(rng.normal(size=5))
    h = torch.tensor(rng.normal(size=5))
    if wrt == "sr":
        f = lambda x: loss(DiscriminatorScores(x, h))
        x = s
    else:
        f = lambda x: loss(DiscriminatorScores(s, x))
        x = h
    assert rel_err(analytic(f, x), central_difference(f, x)) < 1e-4


def test_dual_l1_gradient(rng):
    hr_w = torch.tensor(rng.normal(size=(2, 6)))
    hr_v = torch.tensor(rng.normal(size=(2, 6)))
    sr_v = torch.tensor(rng.normal(size=(2, 6)))
    # keep away from the kinks of |.| so central differences are valid
    x = hr_w + torch.tensor(rng.choice([-1, 1], size=(2, 6)) * rng.uniform(0.1, 1, (2, 6)))
    f = lambda sr_w: dual_l1_loss(sr_w, hr_w, sr_v, hr_v, 0.3)[2]
    assert rel_err(analytic(f, x), central_difference(f, x)) < 1e-4


def test_composed_generator_step_gradient(rng):
    """l1 + beta * L_G through a 2-layer generator and a linear discriminator."""
    torch.manual_seed(0)
    d, hidden, batch = 6, 5, 3
    w1 = torch.tensor(rng.normal(size=(hidden, d)) * 0.5)
    w2 = torch.tensor(rng.normal(size=(d, hidden)) * 0.5)
    disc = torch.tensor(rng.normal(size=2 * d))
    basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
    basis = torch.tensor(basis)
    mean = torch.tensor(rng.uniform(size=d))
    lr_in = torch.tensor(rng.uniform(size=(batch, d)))
    hr = torch.tensor(rng.uniform(size=(batch, d)))
    cond = torch.tensor(rng.uniform(size=(batch, d)))
    n, alpha, beta = 2, 1.0, 0.02
    pw, pv = basis[:, :n], basis[:, n:]

    def step(w1_):
        sr = torch.tanh(lr_in @ w1_.T) @ w2.T
        sc, hc, cc = sr - mean, hr - mean, cond - mean
        sw, hw, cw = (sc @ pw) @ pw.T, (hc @ pw) @ pw.T, (cc @ pw) @ pw.T
        sv, hv = (sc @ pv) @ pv.T, (hc @ pv) @ pv.T
        sd = torch.cat([sw, cw], 1) @ disc
        hd = torch.cat([hw, cw], 1) @ disc
        l_g = generator_gan_loss(DiscriminatorScores(sd, hd))
        _, _, l1 = dual_l1_loss(sw, hw, sv, hv, alpha)
        return total_losses(l1, l_g, torch.zeros(()), beta).total_g

    assert rel_err(analytic(step, w1), central_difference(step, w1)) < 1e-4
