# Compiled implementations of the hot kernels.  Contract and floating-point
# math mirror _fallback.py; only summation order differs (straight loops here,
# BLAS reductions there).

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh

cnp.import_array()

NONLIN_NONE = 0
NONLIN_TANH = 1


def synthesize_clipped(basis, coeffs, zbatch):
    """Candidate images clip01(basis @ (coeffs + z_j)) as rows of a (B, d) array."""
    cdef double[:, ::1] e = np.ascontiguousarray(basis, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef double[:, ::1] z = np.ascontiguousarray(zbatch, dtype=np.float64)
    cdef Py_ssize_t d = e.shape[0], k = e.shape[1], nb = z.shape[0]
    out_arr = np.empty((nb, d))
    w_arr = np.empty(k)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] w = w_arr
    cdef Py_ssize_t j, i, kk
    cdef double acc
    for j in range(nb):
        for kk in range(k):
            w[kk] = c[kk] + z[j, kk]
        for i in range(d):
            acc = 0.0
            for kk in range(k):
                acc += e[i, kk] * w[kk]
            if acc < 0.0:
                acc = 0.0
            elif acc > 1.0:
                acc = 1.0
            out[j, i] = acc
    return out_arr


def score_candidates(proj, enrolled, flat_images, nonlinearity):
    """Cosine scores of embedded candidates against a unit enrolled template."""
    cdef double[:, ::1] p = np.ascontiguousarray(proj, dtype=np.float64)
    cdef double[::1] t = np.ascontiguousarray(enrolled, dtype=np.float64)
    cdef double[:, ::1] x = np.ascontiguousarray(flat_images, dtype=np.float64)
    cdef int nl = nonlinearity
    cdef Py_ssize_t m = p.shape[0], d = p.shape[1], nb = x.shape[0]
    scores_arr = np.zeros(nb)
    emb_arr = np.empty(m)
    cdef double[::1] scores = scores_arr
    cdef double[::1] emb = emb_arr
    cdef Py_ssize_t j, a, i
    cdef double acc, norm2, dot, s
    for j in range(nb):
        for a in range(m):
            acc = 0.0
            for i in range(d):
                acc += p[a, i] * x[j, i]
            emb[a] = tanh(acc) if nl == 1 else acc
        norm2 = 0.0
        dot = 0.0
        for a in range(m):
            norm2 += emb[a] * emb[a]
            dot += emb[a] * t[a]
        if norm2 > 0.0:
            s = dot / sqrt(norm2)
            if s < -1.0:
                s = -1.0
            elif s > 1.0:
                s = 1.0
            scores[j] = s
    return scores_arr


def sgd_epoch(w1, w2, data, targets, order, z, pair_idx, step, batch_size, generative_on):
    """One epoch of mini-batch SGD on the two-term loss; updates w1/w2 in place."""
    cdef double[:, ::1] vw1 = w1
    cdef double[:, ::1] vw2 = w2
    cdef double[:, ::1] vx = np.ascontiguousarray(data, dtype=np.float64)
    cdef double[:, ::1] vt = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Py_ssize_t[::1] vorder = np.ascontiguousarray(order, dtype=np.intp)
    cdef double[:, ::1] vz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t[::1] vpair = np.ascontiguousarray(pair_idx, dtype=np.intp)
    cdef double lr = step
    cdef Py_ssize_t bs = batch_size
    cdef int gen = 1 if generative_on else 0

    cdef Py_ssize_t n = vx.shape[0], d = vx.shape[1], k = vw1.shape[1]
    t1_arr = np.empty(k)
    wtr_arr = np.empty(k)
    r_arr = np.empty(d)
    g_arr = np.empty(d)
    dw1_arr = np.empty((d, k))
    dw2_arr = np.empty((d, k))
    cdef double[::1] t1 = t1_arr, wtr = wtr_arr, r = r_arr, g = g_arr
    cdef double[:, ::1] dw1 = dw1_arr, dw2 = dw2_arr

    cdef double total = 0.0
    cdef Py_ssize_t start, stop, pos, s, i, kk, b
    cdef double acc, xi, ri, scale
    start = 0
    while start < n:
        stop = start + bs
        if stop > n:
            stop = n
        b = stop - start
        for i in range(d):
            for kk in range(k):
                dw1[i, kk] = 0.0
                dw2[i, kk] = 0.0
        for pos in range(start, stop):
            s = vorder[pos]
            # t1 = W1^T x
            for kk in range(k):
                t1[kk] = 0.0
            for i in range(d):
                xi = vx[s, i]
                if xi != 0.0:
                    for kk in range(k):
                        t1[kk] += vw1[i, kk] * xi
            # r = W2 t1 - target; reconstruction loss
            acc = 0.0
            for i in range(d):
                ri = -vt[s, i]
                for kk in range(k):
                    ri += vw2[i, kk] * t1[kk]
                r[i] = ri
                acc += ri * ri
            total += acc / d
            # wtr = W2^T r
            for kk in range(k):
                wtr[kk] = 0.0
            for i in range(d):
                ri = r[i]
                for kk in range(k):
                    wtr[kk] += vw2[i, kk] * ri
            if gen:
                # g = W2 z - pair image; generative loss
                acc = 0.0
                for i in range(d):
                    ri = -vx[vpair[pos], i]
                    for kk in range(k):
                        ri += vw2[i, kk] * vz[pos, kk]
                    g[i] = ri
                    acc += ri * ri
                total += acc / d
            # accumulate batch gradients at the current weights
            for i in range(d):
                xi = vx[s, i]
                ri = r[i]
                if gen:
                    for kk in range(k):
                        dw2[i, kk] += ri * t1[kk] + g[i] * vz[pos, kk]
                        dw1[i, kk] += xi * wtr[kk]
                else:
                    for kk in range(k):
                        dw2[i, kk] += ri * t1[kk]
                        dw1[i, kk] += xi * wtr[kk]
        scale = lr * 2.0 / (d * b)
        for i in range(d):
            for kk in range(k):
                vw1[i, kk] -= scale * dw1[i, kk]
                vw2[i, kk] -= scale * dw2[i, kk]
        start = stop
    return total / n
