"""The black-box boundary: identity-enrolled similarity scoring with exact
query accounting, plus local synthetic embedders.

A SimilarityOracle answers exactly one question, "how similar is this image
to the enrolled identity?", and counts every image it scores.  The recovery
optimizer sees nothing else.  Local embedders (a seeded random projection
with an optional tanh) stand in for real recognition models at desk scale:
two different seeds give an attacked-model/critic pair whose scores are
correlated only through the image itself.

Wrappers compose: with_budget() adds a hard query cap with atomic
batch-granular rejection, with_quantization() forces every image through the
8-bit file codec so that a local run sees exactly what a networked oracle
would receive.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    BudgetExhaustedError,
    ConfigError,
    DegenerateInputError,
    GeometryError,
    UnknownIdentityError,
)
from .image import clip, decode_netpbm, encode_netpbm, flatten, require_image

NONLINEARITIES = ("tanh", "none")


@dataclass
class Embedding:
    """A fixed-length feature vector; normalized means unit L2 norm."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise GeometryError(f"embedding must be a vector, got shape {self.values.shape}")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) > 1e-6:
                raise DegenerateInputError(
                    f"normalized embedding has norm {norm}, expected 1 within 1e-6"
                )


def cosine(a, b) -> float:
    """Cosine similarity of two embeddings (or plain vectors), in [-1, 1]."""
    va = np.asarray(getattr(a, "values", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if va.shape != vb.shape:
        raise GeometryError(f"length mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine of a zero vector is undefined")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


class SimilarityOracle(ABC):
    """Black-box scoring interface; all the attacker ever holds."""

    @abstractmethod
    def enroll(self, identity: str, image) -> None:
        """Register an image as the template for an identity."""

    @abstractmethod
    def score_batch(self, images, identity: str) -> np.ndarray:
        """Score every image against one identity; counts len(images) queries."""

    @abstractmethod
    def queries_used(self) -> int:
        """Total images scored so far."""

    def budget(self):
        """Query cap, or None when unlimited."""
        return None


class RandomEmbedder(SimilarityOracle):
    """Synthetic recognition model: seeded projection, odd nonlinearity, cosine.

    Images are clipped to [0, 1] before embedding (real systems receive valid
    images, so the optimizer optimizes through the clip).  The embedding of
    image x is normalize(f(P @ flatten(clip(x)))) with f = tanh or identity;
    P is a fixed (dim, d) matrix drawn once from the seed, scaled by 1/sqrt(d)
    so pre-activation magnitudes stay O(1).

    A candidate whose embedding is exactly zero (an all-black image under the
    linear variant) scores 0.0 rather than raising: a hard failure halfway
    through a scored batch would poison whole recovery runs for one degenerate
    candidate.  Enrolling such an image does raise, since a zero template
    makes every future comparison undefined.
    """

    def __init__(self, seed: int, geometry, dim: int = 64, nonlinearity: str = "tanh"):
        height, width, channels = geometry
        if dim < 2:
            raise ConfigError(f"embedding dim must be >= 2, got {dim}")
        if nonlinearity not in NONLINEARITIES:
            raise ConfigError(
                f"nonlinearity must be one of {NONLINEARITIES}, got {nonlinearity!r}"
            )
        self._geometry = (int(height), int(width), int(channels))
        d = height * width * channels
        rng = np.random.default_rng(seed)
        self._proj = np.ascontiguousarray(rng.standard_normal((dim, d)) / np.sqrt(d))
        self._nonlin = (
            _kernels.NONLIN_TANH if nonlinearity == "tanh" else _kernels.NONLIN_NONE
        )
        self.nonlinearity = nonlinearity
        self.dim = dim
        self.seed = seed
        self._templates: dict[str, np.ndarray] = {}
        self._used = 0
        self._lock = threading.Lock()

    @property
    def geometry(self):
        return self._geometry

    def _check_geometry(self, img) -> np.ndarray:
        arr = require_image(img)
        if arr.shape != self._geometry:
            raise GeometryError(
                f"image geometry {arr.shape} does not match oracle geometry {self._geometry}"
            )
        return arr

    def embed(self, image) -> Embedding:
        """Embedding of one image; raises on a zero (degenerate) embedding."""
        arr = self._check_geometry(image)
        raw = self._proj @ flatten(clip(arr))
        if self._nonlin == _kernels.NONLIN_TANH:
            raw = np.tanh(raw)
        norm = float(np.linalg.norm(raw))
        if norm == 0.0:
            raise DegenerateInputError("image embeds to the zero vector")
        return Embedding(values=raw / norm, normalized=True)

    def enroll(self, identity: str, image) -> None:
        template = self.embed(image)
        with self._lock:
            self._templates[str(identity)] = template.values

    def score_batch(self, images, identity: str) -> np.ndarray:
        with self._lock:
            template = self._templates.get(str(identity))
        if template is None:
            raise UnknownIdentityError(f"identity {identity!r} is not enrolled")
        flats = np.stack(
            [flatten(clip(self._check_geometry(img))) for img in images]
        ) if len(images) else np.zeros((0, self._proj.shape[1]))
        scores = _kernels.score_candidates(self._proj, template, flats, self._nonlin)
        with self._lock:
            self._used += len(images)
        return scores

    def queries_used(self) -> int:
        with self._lock:
            return self._used


def make_random_embedder(seed: int, geometry, dim: int = 64,
                         nonlinearity: str = "tanh") -> RandomEmbedder:
    """Attacked-model or critic stand-in; different seeds give distinct models."""
    return RandomEmbedder(seed, geometry, dim=dim, nonlinearity=nonlinearity)


class BudgetedOracle(SimilarityOracle):
    """Hard query cap over an inner oracle; batches are atomic.

    A batch that would cross the limit is rejected whole before the inner
    oracle sees it, and the wrapper's counter is unchanged.  Accounting is
    wrapper-local: queries_used() counts only traffic through this wrapper,
    so a fresh budget can be layered on an already-used oracle.
    """

    def __init__(self, inner: SimilarityOracle, limit: int):
        if limit < 0:
            raise ConfigError(f"budget limit must be >= 0, got {limit}")
        self._inner = inner
        self._limit = int(limit)
        self._used = 0
        self._lock = threading.Lock()

    @property
    def geometry(self):
        return getattr(self._inner, "geometry", None)

    def enroll(self, identity: str, image) -> None:
        self._inner.enroll(identity, image)

    def score_batch(self, images, identity: str) -> np.ndarray:
        n = len(images)
        with self._lock:
            if self._used + n > self._limit:
                raise BudgetExhaustedError(self._used, self._limit, n)
            scores = self._inner.score_batch(images, identity)
            self._used += n
        return scores

    def queries_used(self) -> int:
        with self._lock:
            return self._used

    def budget(self):
        return self._limit


def with_budget(inner: SimilarityOracle, limit: int) -> BudgetedOracle:
    return BudgetedOracle(inner, limit)


class QuantizingOracle(SimilarityOracle):
    """Pass every image through the 8-bit netpbm codec before the inner oracle.

    Makes a local run byte-equivalent to a networked one, where images cross
    the wire as 8-bit files.  Accounting and budget are the inner oracle's.
    """

    def __init__(self, inner: SimilarityOracle):
        self._inner = inner

    @property
    def geometry(self):
        return getattr(self._inner, "geometry", None)

    @staticmethod
    def _quantize(image):
        return decode_netpbm(encode_netpbm(image))

    def enroll(self, identity: str, image) -> None:
        self._inner.enroll(identity, self._quantize(image))

    def score_batch(self, images, identity: str) -> np.ndarray:
        return self._inner.score_batch([self._quantize(im) for im in images], identity)

    def queries_used(self) -> int:
        return self._inner.queries_used()

    def budget(self):
        return self._inner.budget()


def with_quantization(inner: SimilarityOracle) -> QuantizingOracle:
    return QuantizingOracle(inner)
