"""Two-stage schedule growing the discriminated subspace over epochs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .pca import PcaBasis, _energy_dimension

FRACTION_MODES = ("energy", "dimension")


@dataclass(frozen=True)
class CurriculumConfig:
    total_epochs: int = 200
    stage1_epochs: int = 100
    stage1_target_fraction: float = 0.99
    stage2_target_fraction: float = 0.999
    stage1_alpha: float = 1.0
    stage1_beta: float = 0.02
    stage1_lr: float = 2e-4
    stage2_alpha: float = 0.0
    stage2_beta: float = 0.05
    stage2_lr_start: float = 2e-4
    stage2_lr_end: float = 1e-5
    fraction_mode: str = "energy"

    def __post_init__(self):
        if not 0 < self.stage1_epochs < self.total_epochs:
            raise ValueError("need 0 < stage1_epochs < total_epochs")
        if not (0.0 <= self.stage1_target_fraction
                <= self.stage2_target_fraction <= 1.0):
            raise ValueError("need 0 <= stage1 target <= stage2 target <= 1")
        rates = (self.stage1_alpha, self.stage1_beta, self.stage1_lr,
                 self.stage2_alpha, self.stage2_beta, self.stage2_lr_start,
                 self.stage2_lr_end)
        if min(rates) < 0:
            raise ValueError("loss weights and learning rates must be >= 0")
        if self.fraction_mode not in FRACTION_MODES:
            raise ValueError(f"fraction_mode must be one of {FRACTION_MODES}")


@dataclass(frozen=True)
class CurriculumState:
    epoch: int
    n: int
    alpha: float
    beta: float
    lr: float

    def as_dict(self) -> dict:
        return asdict(self)


def target_dimension(config: CurriculumConfig, eigenvalues, fraction: float) -> int:
    """Subspace dimension reached at ``fraction`` of the full space."""
    eigenvalues = np.asarray(eigenvalues)
    if config.fraction_mode == "energy":
        return _energy_dimension(eigenvalues, fraction)
    return math.ceil(fraction * len(eigenvalues) - 1e-12)


def _spectrum(basis) -> np.ndarray:
    return np.asarray(basis.eigenvalues if isinstance(basis, PcaBasis) else basis)


def _interp_round(start: int, stop: int, step: int, steps: int) -> int:
    # start + (stop - start) * step / steps, rounded half up in exact integers
    return start + (2 * (stop - start) * step + steps) // (2 * steps)


def schedule(config: CurriculumConfig, basis, epoch: int) -> CurriculumState:
    """Curriculum state (n, alpha, beta, lr) at ``epoch``.

    ``basis`` is a :class:`PcaBasis` or a bare eigenvalue spectrum. Stage one
    covers epochs ``0..stage1_epochs`` inclusive and grows ``n`` linearly from
    0 to the stage-one target dimension; stage two grows it on to the
    stage-two target while the learning rate decays linearly.
    """
    if not 0 <= epoch <= config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs}]")
    spectrum = _spectrum(basis)
    d1 = target_dimension(config, spectrum, config.stage1_target_fraction)
    d2 = target_dimension(config, spectrum, config.stage2_target_fraction)
    s1 = config.stage1_epochs
    if epoch <= s1:
        n = _interp_round(0, d1, epoch, s1)
        return CurriculumState(epoch, n, config.stage1_alpha, config.stage1_beta,
                               config.stage1_lr)
    s2 = config.total_epochs - s1
    step = epoch - s1
    n = max(d1, _interp_round(d1, d2, step, s2))
    t = step / s2
    lr = (1.0 - t) * config.stage2_lr_start + t * config.stage2_lr_end
    return CurriculumState(epoch, n, config.stage2_alpha, config.stage2_beta, lr)


SCHEDULE_COLUMNS = ("epoch", "n", "energy", "alpha", "beta", "lr")


def describe(config: CurriculumConfig, basis) -> list[dict]:
    """Per-epoch schedule table for epochs ``0..total_epochs``."""
    spectrum = _spectrum(basis)
    cum = np.concatenate([[0.0], np.cumsum(spectrum, dtype=np.float64)])
    rows = []
    for e in range(config.total_epochs + 1):
        st = schedule(config, spectrum, e)
        rows.append({
            "epoch": e,
            "n": st.n,
            "energy": float(cum[st.n] / cum[-1]),
            "alpha": st.alpha,
            "beta": st.beta,
            "lr": st.lr,
        })
    return rows


def schedule_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SCHEDULE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v
                         for k, v in row.items()})
    return buf.getvalue()
