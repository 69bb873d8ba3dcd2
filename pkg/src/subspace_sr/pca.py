"""PCA basis of an image corpus and orthogonal projections onto its subspaces.

Images are handled as flat vectors of length ``d = channels * height * width``
(RGB channels flattened jointly). Every projection is returned in pixel space,
``P_W^T P_W (x - mean)``, so it can be reshaped into an image and fed to a
convolutional network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class InvalidCorpusError(ValueError):
    """Raised when a corpus cannot be used to fit a basis."""


class InvalidSplitError(ValueError):
    """Raised when a split dimension lies outside ``[0, rank]``."""


class DegenerateSpectrumError(ValueError):
    """Raised when an energy query is made on an all-zero spectrum."""


# relative threshold below which eigenpairs are treated as numerical noise
EIGEN_RTOL = 1e-9

_MAGIC = b"PCAB"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQIIIQ")


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Mean image, orthonormal eigenvector matrix and eigenvalue spectrum."""

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    image_shape: tuple[int, int, int]
    corpus_size: int

    def __post_init__(self):
        for arr in (self.mean, self.basis, self.eigenvalues):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def split(self, n: int) -> "SubspaceSplit":
        return SubspaceSplit(self, n)

    def energy_fraction(self, n: int) -> float:
        """Cumulative eigenvalue energy captured by the first ``n`` components."""
        total = float(np.sum(self.eigenvalues))
        if total <= 0.0:
            raise DegenerateSpectrumError("eigenvalue spectrum is all zero")
        return float(np.sum(self.eigenvalues[:n])) / total

    def fold(self, x: np.ndarray) -> np.ndarray:
        """Reshape flat vector(s) ``(..., d)`` into images ``(..., C, H, W)``."""
        x = np.asarray(x)
        return x.reshape(x.shape[:-1] + tuple(self.image_shape))

    def save(self, path) -> None:
        save_basis(self, path)


@dataclass(frozen=True, eq=False)
class SubspaceSplit:
    """A basis split at ``n``: W spans columns ``[0, n)``, V spans ``[n, r)``."""

    parent: PcaBasis
    n: int

    def __post_init__(self):
        if not 0 <= self.n <= self.parent.rank:
            raise InvalidSplitError(
                f"split dimension {self.n} outside [0, {self.parent.rank}]"
            )

    @property
    def w(self) -> np.ndarray:
        return self.parent.basis[:, : self.n]

    @property
    def v(self) -> np.ndarray:
        return self.parent.basis[:, self.n :]

    def project_w(self, x, centered: bool = False) -> np.ndarray:
        return _project(self.w, self.parent, x, centered)

    def project_v(self, x, centered: bool = False) -> np.ndarray:
        return _project(self.v, self.parent, x, centered)


def _project(cols: np.ndarray, basis: PcaBasis, x, centered: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.dim:
        raise ValueError(f"vector length {x.shape[-1]} != basis dimension {basis.dim}")
    if not centered:
        x = x - basis.mean
    return (x @ cols) @ cols.T


def project_w(split: SubspaceSplit, x, centered: bool = False) -> np.ndarray:
    """Pixel-space orthogonal projection of ``x`` onto W (first ``n`` vectors).

    Parameters
    ----------
    split : SubspaceSplit
    x : array_like, shape (..., d)
        Flat image vector(s).
    centered : bool
        If False the basis mean is subtracted first.
    """
    return split.project_w(x, centered)


def project_v(split: SubspaceSplit, x, centered: bool = False) -> np.ndarray:
    """Pixel-space orthogonal projection of ``x`` onto the complement V."""
    return split.project_v(x, centered)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit_pca(corpus, rank_cap: int | None = None) -> PcaBasis:
    """Fit a PCA basis to an ordered corpus of flat image vectors.

    The eigen-decomposition is of the unnormalized scatter matrix ``X X^T`` of
    the centered data. When there are fewer samples than pixels the ``m x m``
    Gram matrix is decomposed instead and its eigenvectors are mapped back to
    pixel space.

    Parameters
    ----------
    corpus : array_like, shape (m, d) or (m, C, H, W)
        Training images. Image-shaped input records its shape on the basis;
        flat input is recorded as ``(1, 1, d)``.
    rank_cap : int, optional
        Keep at most this many components.

    Returns
    -------
    PcaBasis
    """
    if isinstance(corpus, np.ndarray):
        data = corpus
    else:
        rows = [np.asarray(v) for v in corpus]
        if len(rows) < 2:
            raise InvalidCorpusError(f"need at least 2 samples, got {len(rows)}")
        if len({r.shape for r in rows}) != 1:
            raise ValueError("corpus vectors have mismatched shapes")
        data = np.stack(rows)
    if data.ndim < 2 or data.shape[0] < 2:
        raise InvalidCorpusError(f"need at least 2 samples, got shape {data.shape}")
    m = data.shape[0]
    if data.ndim == 4:
        image_shape = tuple(int(s) for s in data.shape[1:])
    elif data.ndim == 2:
        image_shape = (1, 1, int(data.shape[1]))
    else:
        raise ValueError(f"corpus must be (m, d) or (m, C, H, W), got {data.shape}")
    x = data.reshape(m, -1).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidCorpusError("corpus contains non-finite pixel values")
    d = x.shape[1]

    mean = x.mean(axis=0)
    xc = x - mean

    if m < d:
        gram = xc @ xc.T
        evals, evecs = np.linalg.eigh(gram)
    else:
        scatter = xc.T @ xc
        evals, evecs = np.linalg.eigh(scatter)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]

    limit = min(m - 1, d)
    if rank_cap is not None:
        limit = min(limit, int(rank_cap))
    top = evals[0] if evals.size else 0.0
    # roundoff floor: centering identical rows leaves eps-sized residue
    floor = np.finfo(np.float64).eps * max(m, d) * float(np.sum(x * x))
    keep = (evals > EIGEN_RTOL * top) & (evals > floor)
    r = min(limit, int(np.count_nonzero(keep)))
    evals = evals[:r]
    evecs = evecs[:, :r]

    if r == 0:
        vectors = np.zeros((d, 0))
    elif m < d:
        vectors = xc.T @ evecs
        vectors /= np.linalg.norm(vectors, axis=0)
        # one QR pass restores orthonormality lost on small eigenvalues;
        # leading spans are unchanged because R is triangular
        q, rr = np.linalg.qr(vectors)
        vectors = q * np.sign(np.diag(rr))
    else:
        vectors = evecs
    vectors = _fix_signs(vectors)

    return PcaBasis(
        mean=mean,
        basis=np.ascontiguousarray(vectors),
        eigenvalues=np.maximum(evals, 0.0),
        image_shape=image_shape,
        corpus_size=m,
    )


def energy_dimension(basis: PcaBasis, fraction: float) -> int:
    """Smallest ``n`` whose cumulative eigenvalue energy reaches ``fraction``.

    Examples
    --------
    With eigenvalues ``(4, 3, 2, 1)`` a fraction of 0.7 gives 2.
    """
    return _energy_dimension(np.asarray(basis.eigenvalues), fraction)


def _energy_dimension(eigenvalues: np.ndarray, fraction: float) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    cum = np.concatenate([[0.0], np.cumsum(eigenvalues, dtype=np.float64)])
    total = cum[-1]
    if total <= 0.0:
        raise DegenerateSpectrumError("eigenvalue spectrum is all zero")
    # relative slack absorbs cumsum rounding at exact thresholds
    hits = np.nonzero(cum >= fraction * total * (1.0 - 1e-12))[0]
    return int(hits[0])


def montage_projections(
    basis: PcaBasis, x, fractions: Sequence[float]
) -> list[np.ndarray]:
    """Mean image plus W-projections at increasing energy fractions.

    Returns one image of shape ``image_shape`` per fraction, clipped to [0, 1].
    """
    fractions = list(fractions)
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ValueError("fractions must be ascending")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = []
    for f in fractions:
        n = energy_dimension(basis, f)
        recon = basis.mean + basis.split(n).project_w(x)
        out.append(np.clip(basis.fold(recon), 0.0, 1.0))
    return out


def save_basis(basis: PcaBasis, path) -> None:
    """Write ``basis`` as a little-endian binary file.

    Layout: header (magic, version, d, r, C, H, W, m), then the mean (d
    float64), eigenvalues (r float64) and basis matrix (d x r float64,
    column-major).
    """
    c, h, w = basis.image_shape
    header = _HEADER.pack(_MAGIC, _VERSION, basis.dim, basis.rank, c, h, w,
                          basis.corpus_size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(basis.mean, dtype="<f8").tobytes())
        fh.write(np.asarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.asarray(basis.basis, dtype="<f8").tobytes(order="F"))


def load_basis(path) -> PcaBasis:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated basis file")
    magic, version, d, r, c, h, w, m = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a basis file (bad magic {magic!r})")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported basis version {version}")
    expected = _HEADER.size + 8 * (d + r + d * r)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    mean = np.frombuffer(raw, "<f8", d, off).astype(np.float64)
    off += 8 * d
    evals = np.frombuffer(raw, "<f8", r, off).astype(np.float64)
    off += 8 * r
    vecs = np.frombuffer(raw, "<f8", d * r, off).reshape((d, r), order="F")
    return PcaBasis(
        mean=mean,
        basis=np.ascontiguousarray(vecs, dtype=np.float64),
        eigenvalues=evals,
        image_shape=(c, h, w),
        corpus_size=m,
    )
