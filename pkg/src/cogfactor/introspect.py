"""Collapsed per-condition maps and k-means templates of the latent space."""

import os
from dataclasses import dataclass

import numpy as np

from cogfactor._kernels import kernels
from cogfactor.data.datasets import write_json
from cogfactor.data.ndt import write_tensor
from cogfactor.errors import ShapeMismatch, TooFewSamples
from cogfactor.model import softmax_probs
from cogfactor.projection import reconstruct


@dataclass(frozen=True)
class ClassificationMaps:
    """Voxel-space multinomial model equivalent to one study's pipeline."""

    study: str
    maps: np.ndarray
    bias: np.ndarray
    condition_names: list

    def scores(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.maps.shape[0]:
            raise ShapeMismatch(f"expected {self.maps.shape[0]} voxels, got shape {X.shape}")
        return X @ self.maps + self.bias


def collapse(model, op, study):
    """``maps = W_g (E W_d)``: scores of raw ``x`` equal the model's scores of
    ``W_g^T x`` (up to rounding)."""
    head = model.head(study)
    if op.total_dim != model.input_dim:
        raise ShapeMismatch(f"projection has {op.total_dim} loadings, model expects {model.input_dim}")
    maps = op.matrix @ (model.embedding @ head.weight)
    return ClassificationMaps(study, maps, head.bias.copy(), list(head.condition_names))


# ---------------------------------------------------------------------------
# k-means


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    history: tuple


def _plus_plus(Z, k, rng):
    n = Z.shape[0]
    centres = np.empty((k, Z.shape[1]))
    centres[0] = Z[rng.integers(n)]
    d2 = np.sum((Z - centres[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        # all remaining points coincide with chosen centres: any choice is as good
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres[j] = Z[i]
        d2 = np.minimum(d2, np.sum((Z - centres[j]) ** 2, axis=1))
    return centres


def _lloyd(Z, centres, max_iter):
    k = centres.shape[0]
    labels, d2 = kernels.kmeans_assign(Z, centres)
    history = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        sums, counts = kernels.kmeans_sums(Z, labels, k)
        centres = centres.copy()
        filled = counts > 0
        centres[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            # reseed an empty cluster at the point currently worst served
            far = int(np.argmax(d2))
            centres[j] = Z[far]
            labels[far] = j
            d2[far] = 0.0
        new_labels, d2 = kernels.kmeans_assign(Z, centres)
        history.append(float(d2.sum()))
        if history[-1] > history[-2] * (1 + 1e-12) + 1e-12:
            raise AssertionError("k-means objective increased")
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centres, labels, history, n_iter


def kmeans(Z, k, seed=0, max_iter=300, n_init=10):
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts.

    Stops when no assignment changes or after ``max_iter`` updates.
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D sample matrix, got shape {Z.shape}")
    if k < 1 or Z.shape[0] < k:
        raise TooFewSamples(f"need at least k={k} samples, got {Z.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centres, labels, history, n_iter = _lloyd(Z, _plus_plus(Z, k, rng), max_iter)
        if best is None or history[-1] < best.inertia:
            best = KMeansResult(centres, labels, history[-1], n_iter, tuple(history))
    return best


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class LatentTemplate:
    cluster: int
    centroid: np.ndarray
    template: np.ndarray
    probabilities: dict
    size: int

    def ranked(self, condition_names, top=None):
        """``{study: [(condition, probability), ...]}`` sorted by probability."""
        out = {}
        for study, probs in self.probabilities.items():
            order = np.argsort(-probs, kind="stable")[:top]
            out[study] = [(condition_names[study][i], float(probs[i])) for i in order]
        return out


def make_templates(model, op, centroids, sizes=None, dictionaries=None):
    """One template per centroid, largest clusters first (ties by index)."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[1] != op.total_dim or op.total_dim != model.input_dim:
        raise ShapeMismatch(f"centroids must be (k, {op.total_dim}) and match the model input")
    sizes = np.zeros(len(centroids), dtype=int) if sizes is None else np.asarray(sizes, dtype=int)
    if sizes.shape != (len(centroids),):
        raise ShapeMismatch("one size per centroid")
    H = centroids @ model.embedding
    probs = {name: softmax_probs(H @ head.weight + head.bias) for name, head in model.heads.items()}
    order = sorted(range(len(centroids)), key=lambda j: (-sizes[j], j))
    return [LatentTemplate(j, centroids[j].copy(), reconstruct(op, centroids[j], dictionaries),
                           {name: p[j] for name, p in probs.items()}, int(sizes[j])) for j in order]


def save_templates(path, templates, model, top=10):
    """``templates.json`` with ranked probability tables plus one NDT file per
    template and centroid."""
    os.makedirs(path, exist_ok=True)
    names = {name: head.condition_names for name, head in model.heads.items()}
    entries = []
    for rank, t in enumerate(templates):
        files = {"template": f"template_{rank:03d}.ndt", "centroid": f"centroid_{rank:03d}.ndt"}
        write_tensor(os.path.join(path, files["template"]), t.template)
        write_tensor(os.path.join(path, files["centroid"]), t.centroid)
        entries.append({"rank": rank, "cluster": t.cluster, "size": t.size, "files": files,
                        "top_conditions": {s: [[c, p] for c, p in rows]
                                           for s, rows in t.ranked(names, top).items()}})
    write_json(os.path.join(path, "templates.json"), {"templates": entries})


def save_maps(path, maps):
    os.makedirs(path, exist_ok=True)
    write_tensor(os.path.join(path, f"{maps.study}_maps.ndt"), maps.maps)
    write_tensor(os.path.join(path, f"{maps.study}_bias.ndt"), maps.bias)
