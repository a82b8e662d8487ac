"""Eigenface basis: a bias-free linear autoencoder, its training loop, and
the EIGB serialization format.

The model is Y = W2 (W1^T X) with no biases; after training, the decoder
columns reshaped to image geometry are the eigenfaces.  The training loss has
two terms, each a mean squared error averaged over the d = h*w*c components:

* reconstruction against the softly symmetrized input (X + 2 reflect(X)) / 3,
  or against X itself when the symmetry term is off;
* a generative term pulling W2 z (z ~ N(0, I_k)) toward an independently
  drawn training image, when enabled.

Training is plain mini-batch SGD with a constant step: no optimizer state, no
schedules, reproducible bit-for-bit from (seed, dataset order).  Loss-mode
shorthand used throughout: SL (neither term), SR (symmetry), GR (generative),
SR+GR (both).

pca_basis() is the classical-eigenfaces reference used by tests: it
diagonalizes the uncentered second-moment matrix, the quantity a bias-free
linear autoencoder actually optimizes.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, FormatError, GeometryError, UnsupportedVersionError
from .image import flatten, require_image, reshape, symmetrize

log = logging.getLogger(__name__)

BASIS_MAGIC = b"EIGB"
BASIS_VERSION = 1

LOSS_MODES = ("SL", "SR", "GR", "SR+GR")


def loss_mode_flags(mode: str) -> tuple[bool, bool]:
    """Map a loss-mode name to (symmetry_on, generative_on)."""
    try:
        return {
            "SL": (False, False),
            "SR": (True, False),
            "GR": (False, True),
            "SR+GR": (True, True),
        }[mode]
    except KeyError:
        raise ConfigError(f"unknown loss mode {mode!r}, expected one of {LOSS_MODES}")


@dataclass
class AutoencoderWeights:
    """Encoder/decoder weight pair, both of shape (d, k)."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        self.w1 = np.ascontiguousarray(self.w1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(self.w2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w1.shape != self.w2.shape:
            raise GeometryError(
                f"w1 and w2 must share shape (d, k), got {self.w1.shape} and {self.w2.shape}"
            )

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def k(self) -> int:
        return self.w1.shape[1]


@dataclass
class EigenBasis:
    """Trained decoder columns bound to an image geometry.

    `vectors` has shape (d, k); column j reshaped through image.reshape() is
    the j-th eigenface.  Treated as immutable after construction.
    """

    height: int
    width: int
    channels: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise GeometryError(f"basis vectors must be (d, k), got {self.vectors.shape}")
        d = self.height * self.width * self.channels
        if self.vectors.shape[0] != d:
            raise GeometryError(
                f"basis rows {self.vectors.shape[0]} do not match geometry "
                f"{self.width}x{self.height}x{self.channels} (d={d})"
            )
        if not np.isfinite(self.vectors).all():
            raise GeometryError("basis contains non-finite entries")

    @property
    def d(self) -> int:
        return self.vectors.shape[0]

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=0)

    def eigenface(self, j: int) -> np.ndarray:
        """Column j as an image."""
        return reshape(self.vectors[:, j], self.height, self.width, self.channels)


@dataclass
class TrainConfig:
    """Autoencoder training settings; defaults are desk scale."""

    k: int = 64
    step_size: float = 0.1
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    symmetry_on: bool = True
    generative_on: bool = True

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.step_size <= 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")

    @property
    def loss_mode(self) -> str:
        return {
            (False, False): "SL",
            (True, False): "SR",
            (False, True): "GR",
            (True, True): "SR+GR",
        }[(self.symmetry_on, self.generative_on)]


def forward(w: AutoencoderWeights, x) -> np.ndarray:
    """Autoencoder output w2 @ (w1^T @ x); pure, no clipping."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (w.d,):
        raise GeometryError(f"input length {x.shape} does not match d={w.d}")
    return w.w2 @ (w.w1.T @ x)


def _loss_terms(w, x_img, z, x_pair_img, symmetry_on, generative_on):
    x_img = require_image(x_img)
    x = flatten(x_img)
    if x.shape[0] != w.d:
        raise GeometryError(f"image dimension {x.shape[0]} does not match d={w.d}")
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (w.k,):
        raise GeometryError(f"code length {z.shape} does not match k={w.k}")
    target = flatten(symmetrize(x_img)) if symmetry_on else x
    r = forward(w, x) - target
    g = None
    if generative_on:
        x_pair = flatten(require_image(x_pair_img))
        if x_pair.shape[0] != w.d:
            raise GeometryError(
                f"pair image dimension {x_pair.shape[0]} does not match d={w.d}"
            )
        g = w.w2 @ z - x_pair
    return x, z, r, g


def loss(w, x_img, z, x_pair_img=None, *, symmetry_on=True, generative_on=True) -> float:
    """Two-term training loss for one sample; each MSE averages over d."""
    _, _, r, g = _loss_terms(w, x_img, z, x_pair_img, symmetry_on, generative_on)
    value = float(r @ r) / w.d
    if g is not None:
        value += float(g @ g) / w.d
    return value


def grad(w, x_img, z, x_pair_img=None, *, symmetry_on=True, generative_on=True):
    """Analytic gradients (dW1, dW2) of loss() with respect to w1 and w2."""
    x, z, r, g = _loss_terms(w, x_img, z, x_pair_img, symmetry_on, generative_on)
    scale = 2.0 / w.d
    dw2 = scale * np.outer(r, w.w1.T @ x)
    dw1 = scale * np.outer(x, w.w2.T @ r)
    if g is not None:
        dw2 += scale * np.outer(g, z)
    return dw1, dw2


def _stack_dataset(images) -> tuple[np.ndarray, tuple[int, int, int]]:
    imgs = [require_image(im) for im in images]
    if not imgs:
        raise ConfigError("dataset is empty")
    geometry = imgs[0].shape
    for i, im in enumerate(imgs):
        if im.shape != geometry:
            raise GeometryError(
                f"dataset image {i} has geometry {im.shape}, expected {geometry}"
            )
    flat = np.ascontiguousarray(np.stack([flatten(im) for im in imgs]))
    return flat, geometry


def train_weights(images, cfg: TrainConfig, epoch_callback=None) -> AutoencoderWeights:
    """Run the SGD loop and return both weight matrices.

    `images` is a sequence of (h, w, c) arrays of identical geometry, at least
    two of them.  One fresh z and one independently drawn pair image are used
    per sample visit.  `epoch_callback(epoch, mean_loss)` is invoked after
    every epoch (used for loss CSVs and convergence tests).  Deterministic
    given (cfg.seed, dataset order).

    Most callers want train(), which discards the encoder and binds the
    decoder to the image geometry; this entry point exists for evaluations
    that need reconstruction error, not just the basis.
    """
    cfg.validate()
    data, (h, w, c) = _stack_dataset(images)
    n, d = data.shape
    if n < 2:
        raise ConfigError(f"dataset must hold at least 2 images, got {n}")

    if cfg.symmetry_on:
        targets = np.ascontiguousarray(
            np.stack([flatten(symmetrize(reshape(row, h, w, c))) for row in data])
        )
    else:
        targets = data.copy()

    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / np.sqrt(d)
    w1 = rng.uniform(-bound, bound, size=(d, cfg.k))
    w2 = rng.uniform(-bound, bound, size=(d, cfg.k))

    for epoch in range(cfg.epochs):
        order = rng.permutation(n).astype(np.intp)
        z = rng.standard_normal((n, cfg.k))
        pair_idx = rng.integers(0, n, size=n).astype(np.intp)
        mean_loss = _kernels.sgd_epoch(
            w1, w2, data, targets, order, z, pair_idx,
            cfg.step_size, cfg.batch_size, cfg.generative_on,
        )
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise ConfigError(
                f"training diverged at epoch {epoch} (non-finite weights); "
                f"lower step_size={cfg.step_size}"
            )
        if epoch_callback is not None:
            epoch_callback(epoch, float(mean_loss))

    return AutoencoderWeights(w1=w1, w2=w2)


def train(images, cfg: TrainConfig, epoch_callback=None) -> EigenBasis:
    """Train the autoencoder and return the decoder columns as the basis."""
    imgs = [require_image(im) for im in images]
    if not imgs:
        raise ConfigError("dataset is empty")
    h, w, c = imgs[0].shape
    weights = train_weights(imgs, cfg, epoch_callback)
    return EigenBasis(height=h, width=w, channels=c, vectors=weights.w2)


def synthesize(basis: EigenBasis, coeffs) -> np.ndarray:
    """Image E @ coeffs reshaped to basis geometry; no clipping applied."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (basis.k,):
        raise GeometryError(f"coefficient length {c.shape} does not match k={basis.k}")
    return reshape(basis.vectors @ c, basis.height, basis.width, basis.channels)


def pca_basis(images, k: int) -> EigenBasis:
    """Top-k eigenvectors of the uncentered second moment, as a basis.

    Reference implementation of classical eigenfaces for property tests;
    direct O(d^3) eigendecomposition, intended for small geometries.  If k
    exceeds the dataset's numerical rank the trailing columns are zero (their
    column_norms flag the deficiency) and a warning is logged.
    """
    if k < 1:
        raise ConfigError(f"k must be positive, got {k}")
    data, (h, w, c) = _stack_dataset(images)
    n, d = data.shape
    moment = data.T @ data / n
    eigvals, eigvecs = np.linalg.eigh(moment)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    tol = max(eigvals[0], 0.0) * d * np.finfo(np.float64).eps
    rank = int(np.sum(eigvals > tol))
    cols = np.zeros((d, k))
    take = min(k, rank)
    for j in range(take):
        v = eigvecs[:, j]
        lead = np.argmax(np.abs(v))
        cols[:, j] = v if v[lead] > 0 else -v  # deterministic sign
    if take < k:
        log.warning("pca_basis: requested k=%d exceeds rank %d; zero-padding", k, rank)
    return EigenBasis(height=h, width=w, channels=c, vectors=cols)


def projection_error(basis: EigenBasis, images) -> float:
    """Mean over images of |x - Q Q^T x|^2 / d for the orthonormalized basis."""
    data, _ = _stack_dataset(images)
    nonzero = basis.column_norms > 0
    q, _ = np.linalg.qr(basis.vectors[:, nonzero])
    resid = data - (data @ q) @ q.T
    return float((resid * resid).sum(axis=1).mean() / basis.d)


def reconstruction_mse(w: AutoencoderWeights, images) -> float:
    """Mean over images of |x - W2 W1^T x|^2 / d (plain SL objective)."""
    data, _ = _stack_dataset(images)
    rec = (data @ w.w1) @ w.w2.T
    resid = rec - data
    return float((resid * resid).sum(axis=1).mean() / w.d)


_HEADER = struct.Struct("<4sHIIII")


def save_basis(basis: EigenBasis, path) -> None:
    """Write the EIGB binary format (float32 payload, column-major)."""
    header = _HEADER.pack(
        BASIS_MAGIC, BASIS_VERSION,
        basis.width, basis.height, basis.channels, basis.k,
    )
    payload = basis.vectors.astype("<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_basis(path) -> EigenBasis:
    """Read an EIGB file; exact inverse of save_basis at 32-bit precision."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("header", f"expected {_HEADER.size} bytes, got {len(data)}")
    magic, version, width, height, channels, k = _HEADER.unpack_from(data)
    if magic != BASIS_MAGIC:
        raise FormatError("magic", f"expected {BASIS_MAGIC!r}, got {magic!r}")
    if version != BASIS_VERSION:
        raise UnsupportedVersionError(version)
    if channels not in (1, 3) or width < 1 or height < 1 or k < 1:
        raise FormatError("geometry", f"invalid geometry {width}x{height}x{channels}, k={k}")
    d = width * height * channels
    expected = _HEADER.size + 4 * d * k
    if len(data) != expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(data)}")
    vectors = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    vectors = vectors.reshape((d, k), order="F").astype(np.float64)
    return EigenBasis(height=height, width=width, channels=channels, vectors=vectors)
