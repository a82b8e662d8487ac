"""Shared test oracles and dataset builders.

Everything here is deliberately independent of the library's vectorized
implementations: the loss evaluator walks components in explicit Python
loops, the gradient oracle is central finite differences through the public
loss, and the epoch reference composes per-sample outer products one sample
at a time.  Slow on purpose; keep instances small.
"""

import numpy as np

from facet.basis import AutoencoderWeights, EigenBasis, loss
from facet.errors import UnknownIdentityError
from facet.image import clip, flatten, reflect


def relative_error(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.linalg.norm(want)), 1e-300)
    return float(np.linalg.norm(got - want)) / denom


def random_image(rng, h, w, c):
    return rng.uniform(0.0, 1.0, size=(h, w, c))


def random_weights(rng, d, k, scale=0.5):
    return AutoencoderWeights(
        w1=rng.uniform(-scale, scale, size=(d, k)),
        w2=rng.uniform(-scale, scale, size=(d, k)),
    )


def naive_loss(w1, w2, x_img, z, x_pair_img, symmetry_on, generative_on):
    """Double-loop re-implementation of the two-term loss, no matrix ops."""
    h, w, c = x_img.shape
    d = h * w * c
    k = w1.shape[1]

    def flat(img):
        out = []
        for ch in range(c):
            for r in range(h):
                for col in range(w):
                    out.append(float(img[r, col, ch]))
        return out

    x = flat(x_img)
    if symmetry_on:
        target = []
        for ch in range(c):
            for r in range(h):
                for col in range(w):
                    own = float(x_img[r, col, ch])
                    mirror = float(x_img[r, w - 1 - col, ch])
                    target.append((own + 2.0 * mirror) / 3.0)
    else:
        target = x

    code = [sum(w1[i][j] * x[i] for i in range(d)) for j in range(k)]
    total = 0.0
    for i in range(d):
        y_i = sum(w2[i][j] * code[j] for j in range(k))
        total += (y_i - target[i]) ** 2
    value = total / d

    if generative_on:
        xp = flat(x_pair_img)
        gen = 0.0
        for i in range(d):
            g_i = sum(w2[i][j] * z[j] for j in range(k)) - xp[i]
            gen += g_i ** 2
        value += gen / d
    return value


def fd_loss_gradients(w, x_img, z, x_pair_img, symmetry_on, generative_on, h=1e-5):
    """Central finite differences of basis.loss with respect to w1 and w2."""

    def at(w1, w2):
        return loss(
            AutoencoderWeights(w1, w2), x_img, z, x_pair_img,
            symmetry_on=symmetry_on, generative_on=generative_on,
        )

    d, k = w.w1.shape
    dw1 = np.zeros((d, k))
    dw2 = np.zeros((d, k))
    for i in range(d):
        for j in range(k):
            up = w.w1.copy(); up[i, j] += h
            dn = w.w1.copy(); dn[i, j] -= h
            dw1[i, j] = (at(up, w.w2) - at(dn, w.w2)) / (2 * h)
            up = w.w2.copy(); up[i, j] += h
            dn = w.w2.copy(); dn[i, j] -= h
            dw2[i, j] = (at(w.w1, up) - at(w.w1, dn)) / (2 * h)
    return dw1, dw2


def reference_sgd_epoch(w1, w2, data, targets, order, z, pair_idx,
                        step, batch_size, generative_on):
    """Per-sample re-implementation of one SGD epoch; mutates w1/w2 in place.

    Matches the kernel contract: samples visited in `order`, consecutive
    chunks of batch_size, z and pair_idx consumed by visit position, gradients
    averaged over the chunk at its starting weights, loss reported at those
    same weights.
    """
    n, d = data.shape
    total = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        b = stop - start
        g1 = np.zeros_like(w1)
        g2 = np.zeros_like(w2)
        for pos in range(start, stop):
            x = data[order[pos]]
            t = targets[order[pos]]
            code = w1.T @ x
            r = w2 @ code - t
            total += float(r @ r) / d
            g2 += (2.0 / d) * np.outer(r, code)
            g1 += (2.0 / d) * np.outer(x, w2.T @ r)
            if generative_on:
                zrow = z[pos]
                gvec = w2 @ zrow - data[pair_idx[pos]]
                total += float(gvec @ gvec) / d
                g2 += (2.0 / d) * np.outer(gvec, zrow)
        w1 -= step * g1 / b
        w2 -= step * g2 / b
    return total / n


def low_rank_dataset(rng, h, w, c, k, n, tail_rank=0, tail_scale=0.0):
    """Images spanned by k orthonormal patterns, plus an optional weak tail.

    Dominant coefficients have spread scales (1.0 down to 0.5) so the
    spectrum is non-degenerate; tail coefficients share tail_scale.  Returns
    (images, patterns) with patterns of shape (d, k + tail_rank).
    """
    d = h * w * c
    total = k + tail_rank
    raw = rng.standard_normal((d, total))
    q, _ = np.linalg.qr(raw)
    scales = np.concatenate([
        np.linspace(1.0, 0.5, k),
        np.full(tail_rank, tail_scale),
    ])
    coeffs = rng.standard_normal((n, total)) * scales
    flat = coeffs @ q.T
    images = [flat[i].reshape(c, h, w).transpose(1, 2, 0) for i in range(n)]
    return images, q


def near_symmetric_faces(rng, h, w, c, n, asym_scale=0.15):
    """Face-like images: a left-right symmetric base plus a weak asymmetry."""
    images = []
    for _ in range(n):
        base = rng.uniform(0.2, 0.8, size=(h, w, c))
        sym = 0.5 * (base + base[:, ::-1, :])
        noise = rng.standard_normal((h, w, c)) * asym_scale
        images.append(np.clip(sym + noise, 0.0, 1.0))
    return images


def column_asymmetry(basis: EigenBasis) -> float:
    """Mean over columns of |E_j - reflect(E_j)| / |E_j|."""
    vals = []
    for j in range(basis.k):
        img = basis.eigenface(j)
        diff = flatten(img) - flatten(reflect(img))
        norm = np.linalg.norm(flatten(img))
        vals.append(float(np.linalg.norm(diff)) / norm)
    return float(np.mean(vals))


class SpyOracle:
    """Transparent wrapper that records every scored batch for later replay."""

    def __init__(self, inner):
        self.inner = inner
        self.batches = []  # (identity, list of image copies, scores array)

    @property
    def geometry(self):
        return getattr(self.inner, "geometry", None)

    def enroll(self, identity, image):
        self.inner.enroll(identity, image)

    def score_batch(self, images, identity):
        scores = self.inner.score_batch(images, identity)
        self.batches.append((identity, [np.array(im) for im in images],
                             np.array(scores)))
        return scores

    def queries_used(self):
        return self.inner.queries_used()

    def budget(self):
        return self.inner.budget()


class ConstantOracle:
    """Scores every image the same; geometry-checked, queries counted."""

    def __init__(self, geometry, value=0.5):
        self.geometry = tuple(geometry)
        self.value = float(value)
        self._used = 0
        self._ids = set()

    def enroll(self, identity, image):
        self._ids.add(identity)

    def score_batch(self, images, identity):
        if identity not in self._ids:
            raise UnknownIdentityError(identity)
        self._used += len(images)
        return np.full(len(images), self.value)

    def queries_used(self):
        return self._used

    def budget(self):
        return None


class MultiPeakOracle:
    """Multimodal scoring surface built from capped cosine peaks.

    Each image is embedded by a fixed seeded projection of its centered
    pixels and compared against several unit templates.  The enrolled
    identity is the tallest peak, capped at target_ceiling; every decoy
    is a (image, ceiling, gain) triple whose peak value is

        min(gain * cos(e, embed(image)), ceiling)

    and the reported score is the best peak.  The hard caps matter: a
    greedy monotone run that locks into some basin climbs until the cap
    binds and then finishes at exactly that ceiling, so paired runs that
    end on the same peak tie to the last bit instead of differing by
    noise.  Which basin a run locks into is decided by its first few
    random batches, which is what makes the surface a fair testbed for
    restart policies.

    Decoy images should lie in the search span, otherwise their caps may
    be unreachable and the plateau structure dissolves.
    """

    def __init__(self, seed, geometry, dim=32, decoys=(), target_ceiling=0.85):
        self.geometry = tuple(geometry)
        h, w, c = self.geometry
        d = h * w * c
        self.target_ceiling = float(target_ceiling)
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((dim, d)) / np.sqrt(d)
        self._decoys = [(self._embed(img), float(ceiling), float(gain))
                        for img, ceiling, gain in decoys]
        self._templates = {}
        self._used = 0

    def _embed(self, image):
        vec = self._proj @ (flatten(clip(image)) - 0.5)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def enroll(self, identity, image):
        self._templates[identity] = self._embed(image)

    def score_batch(self, images, identity):
        t = self._templates.get(identity)
        if t is None:
            raise UnknownIdentityError(identity)
        out = np.empty(len(images))
        for i, img in enumerate(images):
            e = self._embed(img)
            best = min(float(e @ t), self.target_ceiling)
            for template, ceiling, gain in self._decoys:
                best = max(best, min(gain * float(e @ template), ceiling))
            out[i] = best
        self._used += len(images)
        return np.clip(out, -1.0, 1.0)

    def queries_used(self):
        return self._used

    def budget(self):
        return None


def span_basis(rng, height, width, channels, k):
    """Orthonormal basis whose first column is flat; handy for span targets."""
    d = height * width * channels
    cols = [np.ones(d) / np.sqrt(d)]
    cols += [rng.standard_normal(d) for _ in range(k - 1)]
    q, _ = np.linalg.qr(np.stack(cols, axis=1))
    return EigenBasis(height, width, channels, q)


def span_image(rng, basis):
    """Random zero-flat-component image inside the basis span, range-stretched.

    The pattern is scaled so its extremes sit at 0.05 and 0.95 around a 0.5
    mean, which keeps the image strictly inside the clipping box while using
    most of the value range.
    """
    k = basis.vectors.shape[1]
    coeffs = rng.standard_normal(k)
    coeffs[0] = 0.0
    flat = basis.vectors @ coeffs
    extent = max(abs(flat.min()), abs(flat.max()))
    flat = 0.5 + flat / extent * 0.45
    c, h, w = basis.channels, basis.height, basis.width
    return flat.reshape(c, h, w).transpose(1, 2, 0)
