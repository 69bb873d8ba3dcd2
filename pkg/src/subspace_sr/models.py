"""Generator and discriminator networks, plus the checkpoint archive format."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn
from torch.nn import functional as F

from .data import resize_weights


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_channels: int = 32
    num_blocks: int = 3
    scale_factor: int = 4
    use_batchnorm: bool = False
    block: str = "residual"
    growth_channels: int = 16
    zero_init_last: bool = False

    def __post_init__(self):
        s = self.scale_factor
        if s < 1 or s & (s - 1):
            raise ValueError(f"scale_factor must be a power of 2, got {s}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.block not in ("residual", "rrdb"):
            raise ValueError(f"unknown block type {self.block!r}")


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_channels: int = 6
    conv_layers: int = 4
    linear_layers: int = 1
    base_channels: int = 32
    image_size: int = 32
    hidden_features: int = 100
    max_channels: int = 512

    def __post_init__(self):
        if self.conv_layers < 2:
            raise ValueError("conv_layers must be >= 2")
        if self.linear_layers < 1:
            raise ValueError("linear_layers must be >= 1")

    @property
    def min_size(self) -> int:
        return 2 ** (self.conv_layers // 2)


def _scaled_kaiming(module: nn.Module, gain: float) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=0.2, mode="fan_in")
            m.weight.data.mul_(gain)
            nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    def __init__(self, nf: int, batchnorm: bool = False):
        super().__init__()
        layers = [nn.Conv2d(nf, nf, 3, 1, 1)]
        if batchnorm:
            layers.append(nn.BatchNorm2d(nf))
        layers += [nn.LeakyReLU(0.2), nn.Conv2d(nf, nf, 3, 1, 1)]
        if batchnorm:
            layers.append(nn.BatchNorm2d(nf))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.body(x)


class DenseBlock(nn.Module):
    def __init__(self, nf: int, gc: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(nf + i * gc, gc if i < 4 else nf, 3, 1, 1) for i in range(5)
        )

    def forward(self, x):
        feats = [x]
        for i, conv in enumerate(self.convs):
            out = conv(torch.cat(feats, 1))
            if i < 4:
                feats.append(F.leaky_relu(out, 0.2))
        return x + 0.2 * out


class RRDB(nn.Module):
    """Residual-in-residual dense block."""

    def __init__(self, nf: int, gc: int):
        super().__init__()
        self.blocks = nn.Sequential(*(DenseBlock(nf, gc) for _ in range(3)))

    def forward(self, x):
        return x + 0.2 * self.blocks(x)


class Generator(nn.Module):
    """LR image ``(B, C, h, w)`` to SR image ``(B, C, s*h, s*w)``.

    The network predicts a residual on top of a fixed bicubic upsampling of
    its input, so a zero final layer reproduces the bicubic image.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c, nf = config.in_channels, config.base_channels
        self.conv_first = nn.Conv2d(c, nf, 3, 1, 1)
        if config.block == "rrdb":
            blocks = [RRDB(nf, config.growth_channels) for _ in range(config.num_blocks)]
        else:
            blocks = [ResidualBlock(nf, config.use_batchnorm)
                      for _ in range(config.num_blocks)]
        self.trunk = nn.Sequential(*blocks)
        self.conv_body = nn.Conv2d(nf, nf, 3, 1, 1)
        self.upconvs = nn.ModuleList(
            nn.Conv2d(nf, nf, 3, 1, 1) for _ in range(int(math.log2(config.scale_factor)))
        )
        self.conv_hr = nn.Conv2d(nf, nf, 3, 1, 1)
        self.conv_last = nn.Conv2d(nf, c, 3, 1, 1)

        _scaled_kaiming(self, 1.0)
        _scaled_kaiming(self.trunk, 0.1)
        _scaled_kaiming(self.conv_last, 0.1)
        if config.zero_init_last:
            nn.init.zeros_(self.conv_last.weight)

    def upsample_base(self, x: torch.Tensor) -> torch.Tensor:
        s = self.config.scale_factor
        h, w = x.shape[-2:]
        rh = torch.tensor(resize_weights(h, h * s), dtype=x.dtype, device=x.device)
        rw = torch.tensor(resize_weights(w, w * s), dtype=x.dtype, device=x.device)
        return rh @ x @ rw.T

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.conv_first(x)
        feat = feat + self.conv_body(self.trunk(feat))
        for conv in self.upconvs:
            feat = F.leaky_relu(conv(F.interpolate(feat, scale_factor=2, mode="nearest")), 0.2)
        residual = self.conv_last(F.leaky_relu(self.conv_hr(feat), 0.2))
        return self.upsample_base(x) + residual


class Discriminator(nn.Module):
    """Maps ``(B, input_channels, H, W)`` to one score per sample, shape ``(B,)``.

    Convolutions alternate stride 1 and stride 2, so ``conv_layers // 2``
    halvings are applied; there is no normalization across the batch.
    """

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        if config.image_size < config.min_size:
            raise ValueError(
                f"image size {config.image_size} below the minimum "
                f"{config.min_size} for {config.conv_layers} conv layers"
            )
        layers = []
        ch_in, ch = config.input_channels, config.base_channels
        size = config.image_size
        for i in range(config.conv_layers):
            if i % 2:
                layers.append(nn.Conv2d(ch_in, ch, 4, 2, 1))
                size //= 2
            else:
                if i > 0:
                    ch = min(ch * 2, config.max_channels)
                layers.append(nn.Conv2d(ch_in, ch, 3, 1, 1))
            layers.append(nn.LeakyReLU(0.2))
            ch_in = ch
        self.features = nn.Sequential(*layers)
        flat = ch * size * size
        head = []
        for _ in range(config.linear_layers - 1):
            head += [nn.Linear(flat, config.hidden_features), nn.LeakyReLU(0.2)]
            flat = config.hidden_features
        head.append(nn.Linear(flat, 1))
        self.head = nn.Sequential(*head)
        _scaled_kaiming(self, 1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = self.config.image_size
        if x.shape[-2:] != (size, size):
            raise ValueError(
                f"discriminator expects {size}x{size} inputs (minimum "
                f"{self.config.min_size}), got {tuple(x.shape[-2:])}"
            )
        return self.head(self.features(x).flatten(1)).squeeze(1)


def _seeded(seed: int | None, factory):
    if seed is None:
        return factory()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def build_generator(config: GeneratorConfig, seed: int | None = 0) -> Generator:
    return _seeded(seed, lambda: Generator(config))


def build_discriminator(config: DiscriminatorConfig, seed: int | None = 0) -> Discriminator:
    return _seeded(seed, lambda: Discriminator(config))


# ---------------------------------------------------------------------------
# checkpoint archive

_CKPT_MAGIC = b"SRCKPT01"


class ChecksumError(ValueError):
    """Raised when a checkpoint archive fails its integrity check."""


def save_checkpoint(path, payload: dict) -> str:
    """Write ``payload`` as ``magic | sha256 | torch-serialized payload``.

    Returns the hex digest of the payload.
    """
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    digest = hashlib.sha256(body).digest()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(_CKPT_MAGIC + digest + body)
    tmp.replace(path)
    return digest.hex()


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    head = len(_CKPT_MAGIC)
    if raw[:head] != _CKPT_MAGIC:
        raise ChecksumError(f"{path}: not a checkpoint archive")
    digest, body = raw[head:head + 32], raw[head + 32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch, archive is corrupted")
    return torch.load(io.BytesIO(body), map_location="cpu", weights_only=False)
