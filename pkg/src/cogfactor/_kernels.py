"""Hot inner loops, in two interchangeable implementations.

The numba versions are used when numba imports and ``COGFACTOR_BACKEND`` is
unset or ``"numba"``; ``COGFACTOR_BACKEND=numpy`` forces the vectorized numpy
path. Both implementations are always importable as :data:`numpy_kernels`
and :data:`numba_kernels` (the latter is ``None`` without numba) so tests and
the benchmark can compare them directly.

All kernels work in float64 and are deterministic: loops run in a fixed
order and never use ``fastmath`` or ``parallel``.
"""

import math
import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------------------
# numpy reference path


def _softmax_xent_np(scores, labels):
    """Mean cross-entropy of row-softmax(scores) and its gradient wrt scores."""
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    norm = exp.sum(axis=1, keepdims=True)
    probs = exp / norm
    rows = np.arange(n)
    loss = float(np.sum(np.log(norm[:, 0]) - shifted[rows, labels])) / n
    grad = probs
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def _softmax_rows_np(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _adam_update_np(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _kmeans_assign_np(Z, C):
    # explicit differences rather than the |z|^2 - 2zc + |c|^2 expansion,
    # which loses digits when points sit close to a centroid
    labels = np.empty(Z.shape[0], dtype=np.int64)
    best = np.empty(Z.shape[0])
    step = max(1, 2**22 // max(1, C.size))
    for s in range(0, Z.shape[0], step):
        d2 = ((Z[s:s + step, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        labels[s:s + step] = np.argmin(d2, axis=1)
        best[s:s + step] = d2[np.arange(d2.shape[0]), labels[s:s + step]]
    return labels, best


def _kmeans_sums_np(Z, labels, k):
    sums = np.zeros((k, Z.shape[1]))
    np.add.at(sums, labels, Z)
    counts = np.bincount(labels, minlength=k)
    return sums, counts


numpy_kernels = SimpleNamespace(
    name="numpy",
    softmax_xent=_softmax_xent_np,
    softmax_rows=_softmax_rows_np,
    adam_update=_adam_update_np,
    kmeans_assign=_kmeans_assign_np,
    kmeans_sums=_kmeans_sums_np,
)


# ---------------------------------------------------------------------------
# numba path


def _build_numba_kernels():
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def softmax_xent(scores, labels):
        n, k = scores.shape
        grad = np.empty((n, k))
        loss = 0.0
        for i in range(n):
            top = scores[i, 0]
            for j in range(1, k):
                if scores[i, j] > top:
                    top = scores[i, j]
            norm = 0.0
            for j in range(k):
                e = math.exp(scores[i, j] - top)
                grad[i, j] = e
                norm += e
            loss += math.log(norm) - (scores[i, labels[i]] - top)
            for j in range(k):
                grad[i, j] = grad[i, j] / norm / n
            grad[i, labels[i]] -= 1.0 / n
        return loss / n, grad

    @njit
    def softmax_rows(scores):
        n, k = scores.shape
        out = np.empty((n, k))
        for i in range(n):
            top = scores[i, 0]
            for j in range(1, k):
                if scores[i, j] > top:
                    top = scores[i, j]
            norm = 0.0
            for j in range(k):
                e = math.exp(scores[i, j] - top)
                out[i, j] = e
                norm += e
            for j in range(k):
                out[i, j] /= norm
        return out

    @njit
    def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
        p = param.ravel()
        g = grad.ravel()
        mm = m.ravel()
        vv = v.ravel()
        for i in range(p.size):
            gi = g[i]
            mm[i] = beta1 * mm[i] + (1.0 - beta1) * gi
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * gi * gi
            p[i] -= lr * (mm[i] / bc1) / (math.sqrt(vv[i] / bc2) + eps)

    @njit
    def kmeans_assign(Z, C):
        n, dim = Z.shape
        k = C.shape[0]
        labels = np.empty(n, dtype=np.int64)
        best = np.empty(n)
        for i in range(n):
            lab = 0
            low = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(dim):
                    diff = Z[i, j] - C[c, j]
                    acc += diff * diff
                if acc < low:
                    low = acc
                    lab = c
            labels[i] = lab
            best[i] = low
        return labels, best

    @njit
    def kmeans_sums(Z, labels, k):
        n, dim = Z.shape
        sums = np.zeros((k, dim))
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            for j in range(dim):
                sums[c, j] += Z[i, j]
        return sums, counts

    def _contiguous(fn):
        # numba's ravel on a non-contiguous view silently copies, which would
        # drop in-place updates; insist on C-contiguous inputs
        def wrapper(param, grad, m, v, *args):
            for arr in (param, m, v):
                if not arr.flags.c_contiguous:
                    raise ValueError("adam_update needs C-contiguous arrays")
            fn(param, np.ascontiguousarray(grad), m, v, *args)

        return wrapper

    return SimpleNamespace(
        name="numba",
        softmax_xent=softmax_xent,
        softmax_rows=softmax_rows,
        adam_update=_contiguous(adam_update),
        kmeans_assign=kmeans_assign,
        kmeans_sums=kmeans_sums,
    )


numba_kernels = _build_numba_kernels() if numba is not None else None


def _select():
    choice = os.environ.get("COGFACTOR_BACKEND", "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"COGFACTOR_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and numba_kernels is not None:
        return numba_kernels
    return numpy_kernels


kernels = _select()
BACKEND = kernels.name
