"""Corpus handling: bicubic resampling, LR/HR/condition triples, manifests and
a synthetic face-like corpus for desk-scale runs."""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
SPLITS = ("train", "val")


class CorpusError(ValueError):
    """Raised on unreadable manifests or undecodable images in strict mode."""


# ---------------------------------------------------------------------------
# bicubic resampling

def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel with parameter ``a``."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@functools.lru_cache(maxsize=64)
def resize_weights(in_size: int, out_size: int, a: float = -0.5,
                   antialias: bool = True) -> np.ndarray:
    """Dense ``(out_size, in_size)`` bicubic interpolation matrix.

    Sample positions use half-pixel centers; taps falling outside the input
    are clamped onto the edge pixel. When shrinking with ``antialias`` the
    kernel is stretched by the inverse scale. Rows sum to one.
    """
    if in_size < 1 or out_size < 1:
        raise ValueError(f"sizes must be positive, got {in_size} -> {out_size}")
    shrink = antialias and out_size < in_size
    support = 2.0 * in_size / out_size if shrink else 2.0
    weights = np.zeros((out_size, in_size))
    for i in range(out_size):
        center = ((2 * i + 1) * in_size - out_size) / (2 * out_size)
        lo = math.floor(center - support) - 1
        hi = math.ceil(center + support) + 1
        taps = np.arange(lo, hi + 1)
        # integer numerator keeps mirrored rows bitwise mirrored
        num = (2 * i + 1) * in_size - out_size - 2 * out_size * taps
        arg = num / (2 * in_size) if shrink else num / (2 * out_size)
        k = cubic_kernel(arg, a)
        total = math.fsum(k)
        idx = np.clip(taps, 0, in_size - 1)
        for j in np.unique(idx):
            weights[i, j] = math.fsum(k[idx == j]) / total
    weights.setflags(write=False)
    return weights


def _resize_axis(x: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, -1)
    fwd = x @ weights.T
    # symmetrized so a mirrored input gives an exactly mirrored output
    rev = (x[..., ::-1] @ weights.T)[..., ::-1]
    return np.moveaxis(0.5 * (fwd + rev), -1, axis)


def bicubic_resize(image, out_height: int, out_width: int, a: float = -0.5,
                   antialias: bool = True, clip: bool = True) -> np.ndarray:
    """Separable bicubic resize of ``image`` with shape ``(..., H, W)``.

    Computation is in float64; the result keeps a floating input dtype.
    """
    if out_height < 1 or out_width < 1:
        raise ValueError(f"output size must be positive, got {out_height}x{out_width}")
    image = np.asarray(image)
    dtype = image.dtype if np.issubdtype(image.dtype, np.floating) else np.float64
    x = image.astype(np.float64)
    h, w = x.shape[-2:]
    x = _resize_axis(x, resize_weights(h, out_height, a, antialias), -2)
    x = _resize_axis(x, resize_weights(w, out_width, a, antialias), -1)
    if clip:
        x = np.clip(x, 0.0, 1.0)
    return x.astype(dtype)


# ---------------------------------------------------------------------------
# triples

class SampleTriple(NamedTuple):
    lr: np.ndarray
    hr: np.ndarray
    condition: np.ndarray


def build_triples(hr, scale: int = 4) -> SampleTriple:
    """Derive LR inputs and bicubic-upsampled conditions from HR images."""
    hr = np.asarray(hr, dtype=np.float32)
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(f"image size {h}x{w} not divisible by scale {scale}")
    lr = bicubic_resize(hr, h // scale, w // scale)
    cond = bicubic_resize(lr, h, w)
    return SampleTriple(lr, hr, cond)


def epoch_order(count: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled sample order for one epoch; depends only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(count)


def iterate_batches(triples: SampleTriple, batch_size: int, seed: int,
                    epoch: int = 0, shuffle: bool = True) -> Iterator[SampleTriple]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    count = len(triples.hr)
    order = epoch_order(count, seed, epoch) if shuffle else np.arange(count)
    for start in range(0, count, batch_size):
        sel = order[start:start + batch_size]
        yield SampleTriple(triples.lr[sel], triples.hr[sel], triples.condition[sel])


def make_triples(source, batch_size: int, seed: int, epoch: int = 0,
                 scale: int = 4, strict: bool = False) -> Iterator[SampleTriple]:
    """Stream shuffled triple batches from a manifest or an HR image array."""
    if isinstance(source, CorpusManifest):
        _, hr = load_split(source, "train", strict=strict)
    else:
        hr = source
    return iterate_batches(build_triples(hr, scale), batch_size, seed, epoch)


# ---------------------------------------------------------------------------
# manifests and image IO

@dataclass
class CorpusManifest:
    root: Path | None
    ids: list[str]
    splits: list[str]
    image_shape: tuple[int, int, int] | None = None
    images: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise CorpusError("manifest identifiers are not unique")
        if len(self.ids) != len(self.splits):
            raise CorpusError("ids and splits differ in length")
        bad = set(self.splits) - set(SPLITS)
        if bad:
            raise CorpusError(f"unknown split tags {sorted(bad)}")

    def split_ids(self, split: str) -> list[str]:
        return [i for i, s in zip(self.ids, self.splits) if s == split]


def read_image(path, channels: int = 3) -> np.ndarray:
    """Decode an 8-bit PNG to a float32 ``(C, H, W)`` array in [0, 1]."""
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def write_image(path, image) -> None:
    """Write a ``(C, H, W)`` array in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def read_manifest(path) -> CorpusManifest:
    """Read a manifest file, or index a directory.

    A manifest holds one ``<relative path> <split>`` pair per line. A
    directory with no manifest is indexed as all of its PNGs, in sorted
    order, tagged ``train``.
    """
    path = Path(path)
    if path.is_dir():
        if (path / MANIFEST_NAME).exists():
            path = path / MANIFEST_NAME
        else:
            ids = sorted(p.name for p in path.glob("*.png"))
            if not ids:
                raise CorpusError(f"{path}: no PNG images found")
            return CorpusManifest(path, ids, ["train"] * len(ids))
    if not path.exists():
        raise CorpusError(f"{path}: manifest not found")
    ids, splits = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected '<path> <split>'")
        ids.append(parts[0])
        splits.append(parts[1])
    if not ids:
        raise CorpusError(f"{path}: empty manifest")
    return CorpusManifest(path.parent, ids, splits)


def write_manifest(manifest: CorpusManifest, path) -> None:
    lines = [f"{i} {s}" for i, s in zip(manifest.ids, manifest.splits)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(manifest: CorpusManifest, split: str = "train",
               strict: bool = False) -> tuple[list[str], np.ndarray]:
    """Decode every image of one split into a ``(N, C, H, W)`` float32 array.

    Undecodable images (or ones whose shape differs from the first image) are
    skipped with a warning, or raise :class:`CorpusError` when ``strict``.
    """
    shape = manifest.image_shape
    kept, arrays = [], []
    for ident in manifest.split_ids(split):
        if ident in manifest.images:
            img = manifest.images[ident]
        else:
            try:
                img = read_image(manifest.root / ident,
                                 channels=shape[0] if shape else 3)
            except (OSError, ValueError) as exc:
                if strict:
                    raise CorpusError(f"cannot decode {ident}: {exc}") from exc
                log.warning("skipping undecodable image %s: %s", ident, exc)
                continue
        if shape is None:
            shape = tuple(img.shape)
            manifest.image_shape = shape
        if tuple(img.shape) != tuple(shape):
            msg = f"{ident}: shape {img.shape} != corpus shape {shape}"
            if strict:
                raise CorpusError(msg)
            log.warning("skipping %s", msg)
            continue
        kept.append(ident)
        arrays.append(img)
    if not arrays:
        raise CorpusError(f"split {split!r} has no decodable images")
    return kept, np.stack(arrays).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic corpus

def _ellipse(yy, xx, cy, cx, ry, rx, soft):
    rho = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    # soft edge roughly `soft` pixels wide
    return 1.0 / (1.0 + np.exp(-(1.0 - rho) * min(rx, ry) / soft))


def _synth_face(rng: np.random.Generator, c: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    soft = 0.35
    j = lambda s: rng.normal(0.0, s)

    bg = np.clip(np.array([0.55, 0.6, 0.7]) + rng.normal(0, 0.1, 3), 0, 1)
    img = bg[:, None, None] * (0.85 + 0.3 * yy / h)[None]

    cx, cy = w * (0.5 + j(0.03)), h * (0.55 + j(0.03))
    rx, ry = w * (0.28 + j(0.015)), h * (0.36 + j(0.015))

    hair_col = np.clip(np.array([0.25, 0.18, 0.12]) + rng.normal(0, 0.07, 3), 0, 1)
    hair = _ellipse(yy, xx, cy - 0.12 * h, cx, ry * 0.95, rx * 1.15, soft)
    freq, phase = rng.uniform(0.9, 1.3), rng.uniform(0, 2 * np.pi)
    strands = 1.0 + 0.18 * np.sin(freq * (xx + 0.4 * yy) + phase)
    img = img * (1 - hair) + hair * hair_col[:, None, None] * strands

    skin = np.clip(np.array([0.85, 0.68, 0.56]) + rng.normal(0, 0.04, 3), 0, 1)
    face = _ellipse(yy, xx, cy + 0.03 * h, cx, ry * 0.88, rx, soft)
    shade = 1.0 - 0.12 * ((xx - cx) / rx) ** 2
    img = img * (1 - face) + face * skin[:, None, None] * shade

    ey = cy - 0.04 * h + j(0.6)
    sep = w * (0.12 + j(0.008))
    er = w * (0.045 + j(0.004))
    for side in (-1, 1):
        ex = cx + side * sep + j(0.3)
        white = _ellipse(yy, xx, ey, ex, er * 0.8, er * 1.5, soft)
        img = img * (1 - white) + white * 0.95
        pupil = _ellipse(yy, xx, ey, ex + j(0.3), er * 0.75, er * 0.75, soft)
        img = img * (1 - pupil) + pupil * 0.08
        brow = _ellipse(yy, xx, ey - er * 2.2, ex, er * 0.35, er * 1.8, soft)
        img = img * (1 - brow) + brow * hair_col[:, None, None]

    my, mw = cy + 0.2 * h + j(0.5), w * (0.09 + j(0.01))
    mouth = _ellipse(yy, xx, my, cx + j(0.3), h * 0.025 + abs(j(0.3)), mw, soft)
    lip = np.array([0.6, 0.22, 0.25])
    img = img * (1 - mouth) + mouth * lip[:, None, None]

    nose = _ellipse(yy, xx, cy + 0.08 * h, cx, h * 0.05, w * 0.018, soft)
    img = img * (1 - 0.25 * nose)

    img = np.clip(img, 0.0, 1.0)
    if c == 1:
        img = img.mean(axis=0, keepdims=True)
    return img


def synth_corpus(count: int, image_shape=(3, 32, 32), seed: int = 0,
                 val_count: int = 0) -> tuple[CorpusManifest, np.ndarray]:
    """Generate a seeded corpus of structured face-like images.

    Every image shares one template (background, hair, face, eyes, brows,
    mouth) with jittered geometry and colors, so the PCA spectrum decays
    quickly. Pixel values are quantized to 8 bits so the PNG round trip is
    exact. The last ``val_count`` images are tagged ``val``.

    Returns
    -------
    manifest : CorpusManifest
        In-memory manifest (``root`` is None until written).
    images : ndarray, shape (count, C, H, W), float32
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if not 0 <= val_count < count:
        raise ValueError("val_count must lie in [0, count)")
    c, h, w = image_shape
    if c not in (1, 3):
        raise ValueError("synthetic corpus supports 1 or 3 channels")
    rng = np.random.default_rng(seed)
    images = np.stack([_synth_face(rng, c, h, w) for _ in range(count)])
    images = (np.round(images * 255.0) / 255.0).astype(np.float32)
    ids = [f"img_{i:05d}.png" for i in range(count)]
    splits = ["train"] * (count - val_count) + ["val"] * val_count
    manifest = CorpusManifest(None, ids, splits, tuple(image_shape),
                              dict(zip(ids, images)))
    return manifest, images


def write_corpus(manifest: CorpusManifest, out_dir) -> Path:
    """Write an in-memory corpus as PNGs plus ``manifest.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ident in manifest.ids:
        write_image(out / ident, manifest.images[ident])
    write_manifest(manifest, out / MANIFEST_NAME)
    return out / MANIFEST_NAME
