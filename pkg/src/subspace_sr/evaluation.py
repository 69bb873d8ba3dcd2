"""Distortion metrics, RMSE region tables and trade-off export."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .data import SampleTriple
from .trainer import load_generator

PSNR_CAP = 99.0
# ITU-R BT.601 luma weights for [0, 1] RGB mapped onto the 0-255 studio range
_LUMA = np.array([65.481, 128.553, 24.966]) / 255.0

CSV_COLUMNS = ("checkpoint", "mean_rmse", "mean_psnr", "region", "external_score")


@dataclass(frozen=True)
class EvalOptions:
    boundaries: tuple[float, ...] = (10.0, 13.0)
    mode: str = "rgb"
    border_crop: int = 4
    external_scores: str = ""


def _to_255(image, mode: str) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64) * 255.0
    if mode == "luma":
        if x.shape[-3] != 3:
            raise ValueError("luma mode needs 3-channel images")
        x = np.tensordot(_LUMA, x, axes=([0], [-3]))[..., None, :, :]
    elif mode != "rgb":
        raise ValueError(f"unknown mode {mode!r}")
    return x


def rmse(sr, hr, mode: str = "rgb", border_crop: int = 4) -> float:
    """Root mean squared error on the 0-255 scale between two ``(C, H, W)`` images.

    ``border_crop`` pixels are dropped on every side first.
    """
    sr, hr = np.asarray(sr), np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {sr.shape} vs {hr.shape}")
    h, w = sr.shape[-2:]
    if 2 * border_crop >= min(h, w):
        raise ValueError(f"border_crop {border_crop} too large for {h}x{w} images")
    diff = _to_255(sr, mode) - _to_255(hr, mode)
    if border_crop:
        diff = diff[..., border_crop:-border_crop, border_crop:-border_crop]
    return float(np.sqrt(np.mean(diff * diff)))


def psnr_from_rmse(value: float) -> float:
    if value < 1e-8:
        return PSNR_CAP
    return min(PSNR_CAP, 20.0 * np.log10(255.0 / value))


def psnr(sr, hr, mode: str = "rgb", border_crop: int = 4) -> float:
    return psnr_from_rmse(rmse(sr, hr, mode, border_crop))


@dataclass(frozen=True)
class RegionPartition:
    """Upper RMSE bounds of regions 1..k; a value above the last bound has no region."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if not b:
            raise ValueError("need at least one region boundary")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("region boundaries must be strictly ascending")
        object.__setattr__(self, "boundaries", b)

    @property
    def count(self) -> int:
        return len(self.boundaries)

    def assign(self, value: float) -> int | None:
        idx = bisect.bisect_left(self.boundaries, value)
        return idx + 1 if idx < len(self.boundaries) else None


@dataclass
class MetricsReport:
    checkpoint: str
    rmse: np.ndarray
    psnr: np.ndarray
    region: int | None = None
    external_score: float | None = None
    luma_rmse: np.ndarray | None = field(default=None, repr=False)

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))


def evaluate(predict: Callable[[SampleTriple], np.ndarray], triples: SampleTriple,
             name: str = "", mode: str = "rgb", border_crop: int = 4,
             batch_size: int = 32) -> MetricsReport:
    """Per-image RMSE/PSNR of ``predict`` over validation triples.

    ``predict`` maps a batch of triples to SR images ``(B, C, H, W)``; outputs
    are clipped to [0, 1] before scoring.
    """
    if len(triples.hr) == 0:
        raise ValueError("empty validation split")
    errs, lumas = [], []
    for start in range(0, len(triples.hr), batch_size):
        sl = slice(start, start + batch_size)
        batch = SampleTriple(triples.lr[sl], triples.hr[sl], triples.condition[sl])
        sr = np.clip(np.asarray(predict(batch), dtype=np.float64), 0.0, 1.0)
        for s, h in zip(sr, batch.hr):
            errs.append(rmse(s, h, mode, border_crop))
            if s.shape[0] == 3:
                lumas.append(rmse(s, h, "luma", border_crop))
    errs = np.asarray(errs)
    return MetricsReport(
        checkpoint=name,
        rmse=errs,
        psnr=np.array([psnr_from_rmse(e) for e in errs]),
        luma_rmse=np.asarray(lumas) if lumas else None,
    )


def generator_predictor(generator: torch.nn.Module):
    def predict(batch: SampleTriple) -> np.ndarray:
        with torch.no_grad():
            return generator(torch.from_numpy(np.ascontiguousarray(batch.lr))).numpy()
    return predict


def oracle_predictor(batch: SampleTriple) -> np.ndarray:
    """Returns the ground truth; a zero-distortion reference point."""
    return batch.hr


def bicubic_predictor(batch: SampleTriple) -> np.ndarray:
    return batch.condition


@dataclass
class SweepResult:
    reports: list[MetricsReport]
    best_rmse: dict[int, MetricsReport]
    best_external: dict[int, MetricsReport]

    def rows(self) -> list[dict]:
        return [{
            "checkpoint": r.checkpoint,
            "mean_rmse": f"{r.mean_rmse:.6f}",
            "mean_psnr": f"{r.mean_psnr:.6f}",
            "region": "" if r.region is None else r.region,
            "external_score": "" if r.external_score is None else repr(r.external_score),
        } for r in self.reports]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows())


def sweep(checkpoints: Sequence, triples: SampleTriple, partition: RegionPartition,
          external_scores: Mapping[str, float] | None = None, mode: str = "rgb",
          border_crop: int = 4) -> SweepResult:
    """Evaluate several checkpoints and tabulate them by RMSE region.

    Parameters
    ----------
    checkpoints : sequence
        Checkpoint paths, ``"oracle"``/``"bicubic"`` reference names, or
        ``(name, predict)`` pairs.
    external_scores : mapping, optional
        Perceptual score per checkpoint name (lower is better), supplied from
        an outside tool; used for the per-region best-score selection.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    external_scores = external_scores or {}
    reports = []
    for item in checkpoints:
        if isinstance(item, tuple):
            name, predict = item
        elif item == "oracle":
            name, predict = "oracle", oracle_predictor
        elif item == "bicubic":
            name, predict = "bicubic", bicubic_predictor
        else:
            name = str(item)
            predict = generator_predictor(load_generator(Path(item)))
        report = evaluate(predict, triples, name, mode, border_crop)
        report.region = partition.assign(report.mean_rmse)
        report.external_score = external_scores.get(name)
        reports.append(report)

    best_rmse, best_ext = {}, {}
    for r in reports:
        if r.region is None:
            continue
        cur = best_rmse.get(r.region)
        if cur is None or r.mean_rmse < cur.mean_rmse:
            best_rmse[r.region] = r
        if r.external_score is not None:
            cur = best_ext.get(r.region)
            if cur is None or r.external_score < cur.external_score:
                best_ext[r.region] = r
    return SweepResult(reports, best_rmse, best_ext)


def read_external_scores(path) -> dict[str, float]:
    """Two-column CSV ``checkpoint,score`` (header optional)."""
    scores = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) < 2:
                continue
            try:
                scores[row[0]] = float(row[1])
            except ValueError:
                continue
    return scores


def plot_training_log(log_rows: list[dict], out_path) -> None:
    """Loss curves and subspace dimension per iteration, saved as a PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    it = np.array([int(r["iteration"]) for r in log_rows])
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key in ("l1_w", "l1_v", "l_g", "l_d"):
        vals = [float(r[key]) if r.get(key) else np.nan for r in log_rows]
        ax0.plot(it, vals, label=key, lw=0.8)
    ax0.set_yscale("log")
    ax0.legend(loc="upper right")
    ax0.set_ylabel("loss")
    n = [float(r["n"]) if r.get("n") else np.nan for r in log_rows]
    ax1.plot(it, n, color="k")
    ax1.set_ylabel("subspace dimension n")
    ax1.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
