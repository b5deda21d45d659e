"""Factored multinomial classifiers and their analytic gradients.

A :class:`FactoredModel` scores a reduced sample ``z`` (length g) for study
``d`` as ``W_d^T (mask * scale * (E^T z)) + b_d`` where ``E`` (g x l) is
the shared embedding and ``(W_d, b_d)`` the study's head. Dropout is
inverted: kept latent units are scaled by ``1/(1-r)`` during training and
inference uses no mask at all.

:class:`PlainModel` is the unfactored ``W^T x + b`` classifier used by the
ablation baselines.
"""

from dataclasses import dataclass, field

import numpy as np

from cogfactor._kernels import kernels
from cogfactor.errors import InvalidRate, LabelOutOfRange, ShapeMismatch, UnknownStudy


def glorot_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")


@dataclass
class Head:
    weight: np.ndarray
    bias: np.ndarray
    condition_names: list = field(default_factory=list)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)

    @property
    def n_classes(self):
        return self.bias.shape[0]


@dataclass
class FactoredModel:
    embedding: np.ndarray
    heads: dict
    dropout_rate: float = 0.75

    def __post_init__(self):
        _check_rate(self.dropout_rate)
        self.embedding = np.ascontiguousarray(self.embedding, dtype=np.float64)
        if self.embedding.ndim != 2:
            raise ShapeMismatch("embedding must be a (g x l) matrix")
        for name, head in self.heads.items():
            if head.weight.shape[0] != self.latent_dim:
                raise ShapeMismatch(f"head {name!r} has {head.weight.shape[0]} rows, expected {self.latent_dim}")
            if head.bias.shape != (head.weight.shape[1],):
                raise ShapeMismatch(f"head {name!r} bias does not match its class count")

    @classmethod
    def initialize(cls, input_dim, latent_dim, studies, dropout_rate=0.75, rng=None):
        """Random model. ``studies`` maps study name to class count or to a
        list of condition names."""
        rng = np.random.default_rng(rng)
        embedding = glorot_uniform(rng, input_dim, latent_dim)
        heads = {}
        for name, spec in studies.items():
            names = list(spec) if not isinstance(spec, (int, np.integer)) else [str(i) for i in range(spec)]
            k = len(names)
            heads[name] = Head(glorot_uniform(rng, latent_dim, k), np.zeros(k), names)
        return cls(embedding, heads, dropout_rate)

    @property
    def input_dim(self):
        return self.embedding.shape[0]

    @property
    def latent_dim(self):
        return self.embedding.shape[1]

    def head(self, study):
        try:
            return self.heads[study]
        except KeyError:
            raise UnknownStudy(f"no head registered for study {study!r}") from None

    def parameters(self):
        """Flat name -> array mapping. Arrays are the model's own storage."""
        params = {"embedding": self.embedding}
        for name, head in self.heads.items():
            params[f"head/{name}/weight"] = head.weight
            params[f"head/{name}/bias"] = head.bias
        return params

    def study_parameters(self, study):
        """Names of the parameters a gradient step on ``study`` touches."""
        self.head(study)
        return ["embedding", f"head/{study}/weight", f"head/{study}/bias"]

    def copy(self):
        heads = {n: Head(h.weight.copy(), h.bias.copy(), list(h.condition_names))
                 for n, h in self.heads.items()}
        return FactoredModel(self.embedding.copy(), heads, self.dropout_rate)


@dataclass(frozen=True)
class DropoutMask:
    keep: np.ndarray
    scale: float

    @property
    def multiplier(self):
        return self.keep * self.scale


def sample_mask(latent_dim, rate, rng):
    """Independent Bernoulli(1 - rate) keep flags, with inverted scaling."""
    _check_rate(rate)
    keep = (rng.random(latent_dim) >= rate).astype(np.float64)
    return DropoutMask(keep, 1.0 / (1.0 - rate))


def softmax_probs(scores):
    """Row-wise softmax of a score vector or (n x k) matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        return kernels.softmax_rows(np.ascontiguousarray(scores[None, :]))[0]
    return kernels.softmax_rows(np.ascontiguousarray(scores))


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return labels.astype(np.int64, copy=False)


def cross_entropy(probs, labels):
    """Mean of ``-log probs[i, labels[i]]``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(picked)))


def _check_input(model, Z):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.input_dim:
        raise ShapeMismatch(f"expected reduced samples with {model.input_dim} columns, got shape {Z.shape}")
    return Z


def latent(model, Z, mask=None):
    """Latent representation, Dropout-corrupted when ``mask`` is given."""
    H = _check_input(model, Z) @ model.embedding
    if mask is not None:
        H = H * mask.multiplier
    return H


def scores(model, study, Z, mask=None):
    head = model.head(study)
    return latent(model, Z, mask) @ head.weight + head.bias


def forward(model, study, Z, mask=None):
    """Class probabilities (n x k_d) for study ``study``."""
    return softmax_probs(scores(model, study, Z, mask))


def loss_and_grad(model, study, Z, labels, mask=None, l2=0.0):
    """Batch-mean cross-entropy (+ ``l2/2 * |weights|^2``) and its gradient.

    The penalty covers the embedding and the active head's weight matrix, not
    the bias. Gradients are returned for every parameter of the model; heads
    of other studies get zeros.
    """
    head = model.head(study)
    Z = _check_input(model, Z)
    labels = _check_labels(labels, Z.shape[0], head.n_classes)
    H = Z @ model.embedding
    mult = mask.multiplier if mask is not None else None
    Hm = H * mult if mult is not None else H
    S = Hm @ head.weight + head.bias
    loss, dS = kernels.softmax_xent(np.ascontiguousarray(S), labels)

    d_weight = Hm.T @ dS
    d_bias = dS.sum(axis=0)
    dH = dS @ head.weight.T
    if mult is not None:
        dH *= mult
    d_embedding = Z.T @ dH
    if l2:
        loss += 0.5 * l2 * (np.sum(model.embedding ** 2) + np.sum(head.weight ** 2))
        d_embedding += l2 * model.embedding
        d_weight += l2 * head.weight

    grads = {}
    for name, other in model.heads.items():
        grads[f"head/{name}/weight"] = np.zeros_like(other.weight)
        grads[f"head/{name}/bias"] = np.zeros_like(other.bias)
    grads["embedding"] = d_embedding
    grads[f"head/{study}/weight"] = d_weight
    grads[f"head/{study}/bias"] = d_bias
    return float(loss), grads


@dataclass
class PlainModel:
    """Unfactored multinomial classifier ``softmax(W^T x + b)``."""

    weight: np.ndarray
    bias: np.ndarray
    condition_names: list = field(default_factory=list)

    @classmethod
    def zeros(cls, input_dim, n_classes, condition_names=None):
        names = list(condition_names) if condition_names is not None else [str(i) for i in range(n_classes)]
        return cls(np.zeros((input_dim, n_classes)), np.zeros(n_classes), names)

    @property
    def input_dim(self):
        return self.weight.shape[0]

    @property
    def n_classes(self):
        return self.bias.shape[0]

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def scores(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeMismatch(f"expected samples with {self.input_dim} columns, got shape {X.shape}")
        return X @ self.weight + self.bias

    def predict_proba(self, X):
        return softmax_probs(self.scores(X))


def plain_loss_and_grad(model, X, labels, variant="l2", l2=0.0, rate=0.0, rng=None):
    """Loss and gradient of a plain model under one of two regularizers.

    ``variant="l2"`` adds ``l2/2 * |W|^2``. ``variant="input_dropout"``
    multiplies every entry of ``X`` by an independent inverted-dropout factor
    (drawn from ``rng``) before scoring.
    """
    X = np.asarray(X, dtype=np.float64)
    if variant == "l2":
        if l2 < 0:
            raise ValueError(f"l2 strength must be nonnegative, got {l2}")
    elif variant == "input_dropout":
        _check_rate(rate)
        if rate > 0:
            if rng is None:
                raise ValueError("input dropout needs an rng")
            X = X * ((rng.random(X.shape) >= rate) / (1.0 - rate))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    S = model.scores(X)
    labels = _check_labels(labels, X.shape[0], model.n_classes)
    loss, dS = kernels.softmax_xent(np.ascontiguousarray(S), labels)
    d_weight = X.T @ dS
    d_bias = dS.sum(axis=0)
    if variant == "l2" and l2:
        loss += 0.5 * l2 * np.sum(model.weight ** 2)
        d_weight += l2 * model.weight
    return float(loss), {"weight": d_weight, "bias": d_bias}
