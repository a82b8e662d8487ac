"""Pure-numpy implementations of the hot kernels.

Same contract as the compiled `_core` extension; selected automatically when
the extension is unavailable (or when FACET_PURE_PYTHON is set).  Both
backends do the same floating-point math and differ only in summation order,
so results agree to reduction rounding, and each backend is bit-deterministic
given identical inputs.
"""

import numpy as np

NONLIN_NONE = 0
NONLIN_TANH = 1


def synthesize_clipped(basis, coeffs, zbatch):
    """Candidate images clip01(basis @ (coeffs + z_j)) as rows of a (B, d) array.

    basis: (d, k) column matrix of flattened basis images.
    coeffs: (k,) current coefficient vector.
    zbatch: (B, k) perturbations, one row per candidate.
    """
    cands = (zbatch + coeffs) @ basis.T
    np.clip(cands, 0.0, 1.0, out=cands)
    return cands


def score_candidates(proj, enrolled, flat_images, nonlinearity):
    """Cosine scores of embedded candidates against a unit enrolled template.

    proj: (m, d) fixed projection; flat_images: (B, d) candidate rows;
    enrolled: (m,) unit-norm template.  nonlinearity: NONLIN_NONE or
    NONLIN_TANH, applied elementwise before L2 normalization.  A candidate
    whose embedding is exactly zero scores 0.0.
    """
    emb = flat_images @ proj.T
    if nonlinearity == NONLIN_TANH:
        np.tanh(emb, out=emb)
    norms = np.linalg.norm(emb, axis=1)
    dots = emb @ enrolled
    scores = np.zeros(emb.shape[0])
    ok = norms > 0.0
    scores[ok] = dots[ok] / norms[ok]
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores


def sgd_epoch(w1, w2, data, targets, order, z, pair_idx, step, batch_size, generative_on):
    """One epoch of mini-batch SGD on the two-term loss; updates w1/w2 in place.

    data: (n, d) flattened training images (rows).  targets: (n, d)
    reconstruction targets for the same rows.  order: visit order of the n
    samples.  z: (n, k) code draws and pair_idx: (n,) generative pair indices,
    both consumed by visit position (position p uses z[p] and pair_idx[p] on
    sample data[order[p]]).  Gradients are averaged over each batch and both
    MSE terms average over d.  Returns the mean per-sample loss, evaluated at
    the weights each batch saw.
    """
    n, d = data.shape
    total = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        idx = order[start:stop]
        b = stop - start
        xb = data[idx]
        t1 = xb @ w1
        r = t1 @ w2.T - targets[idx]
        total += (r * r).mean(axis=1).sum()
        dw2 = r.T @ t1
        dw1 = xb.T @ (r @ w2)
        if generative_on:
            zb = z[start:stop]
            g = zb @ w2.T - data[pair_idx[start:stop]]
            total += (g * g).mean(axis=1).sum()
            dw2 += g.T @ zb
        scale = step * 2.0 / (d * b)
        w1 -= scale * dw1
        w2 -= scale * dw2
    return total / n
