"""Adam and the study-cycling minibatch trainer."""

import logging
from dataclasses import dataclass, field

import numpy as np

from cogfactor._kernels import kernels
from cogfactor.errors import EmptyStudy, InvalidConfig, NonFiniteGradient, ShapeMismatch
from cogfactor.model import loss_and_grad, plain_loss_and_grad, sample_mask

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates keyed by parameter name.

    ``t`` counts calls to :func:`adam_step`. Bias correction uses
    ``steps[name]``, the number of updates a given parameter has received,
    so a study head that is only stepped every few iterations is corrected
    for its own history.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Apply one Adam update in place to every array in ``params`` that has an
    entry in ``grads``. Returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient of {name!r} has non-finite entries")
        if g.shape != params[name].shape:
            raise ShapeMismatch(f"gradient of {name!r} has shape {g.shape}, parameter {params[name].shape}")
    state.t += 1
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.steps[name] = 0
        state.steps[name] += 1
        k = state.steps[name]
        kernels.adam_update(p, np.asarray(g, dtype=np.float64), state.m[name], state.v[name],
                            state.lr, state.beta1, state.beta2, state.eps,
                            1.0 - state.beta1 ** k, 1.0 - state.beta2 ** k)
    return params


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_iterations: int = 3000
    lr: float = 1e-3
    seed: int = 0
    dropout_rate: float = 0.75
    l2: float = 0.0
    log_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be at least 1")
        if self.max_iterations < 0:
            raise InvalidConfig("max_iterations must be nonnegative")


class CyclicScheduler:
    """Round-robin over studies, each with its own reshuffled index stream.

    Studies with fewer samples than a batch are sampled with replacement.
    When a stream runs out mid-batch, the batch is completed from a fresh
    permutation of the same study.
    """

    def __init__(self, sizes, batch_size, rng):
        if isinstance(sizes, dict):
            self.studies = list(sizes)
            sizes = list(sizes.values())
        else:
            self.studies = list(range(len(sizes)))
        if not self.studies:
            raise EmptyStudy("scheduler needs at least one study")
        for name, n in zip(self.studies, sizes):
            if n < 1:
                raise EmptyStudy(f"study {name!r} has no samples")
        self.sizes = [int(n) for n in sizes]
        self.batch_size = int(batch_size)
        self.rng = rng
        self._streams = [rng.permutation(n) for n in self.sizes]
        self._cursors = [0] * len(self.sizes)
        self._turn = 0

    def _take(self, pos, count):
        out = []
        while count:
            stream = self._streams[pos]
            cur = self._cursors[pos]
            chunk = stream[cur:cur + count]
            out.append(chunk)
            count -= len(chunk)
            self._cursors[pos] = cur + len(chunk)
            if self._cursors[pos] == len(stream):
                self._streams[pos] = self.rng.permutation(self.sizes[pos])
                self._cursors[pos] = 0
        return np.concatenate(out)

    def next_batch(self):
        pos = self._turn
        self._turn = (self._turn + 1) % len(self.sizes)
        n = self.sizes[pos]
        if n < self.batch_size:
            idx = self.rng.integers(0, n, size=self.batch_size)
        else:
            idx = self._take(pos, self.batch_size)
        return self.studies[pos], idx


def train(model, datasets, cfg, rng=None):
    """Fit ``model`` in place on ``datasets`` (name -> (Z, labels)).

    Each iteration draws one batch from the next study in turn, samples a
    fresh latent Dropout mask and steps the embedding plus that study's head.
    Returns ``(model, trace)`` with ``trace`` a list of
    ``(iteration, study, loss)``.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    for name in datasets:
        model.head(name)
    data = {name: (np.ascontiguousarray(Z, dtype=np.float64), np.asarray(y, dtype=np.int64))
            for name, (Z, y) in datasets.items()}
    sched = CyclicScheduler({n: len(y) for n, (_, y) in data.items()}, cfg.batch_size, rng)
    state = AdamState(lr=cfg.lr)
    params = model.parameters()
    trace = []
    for it in range(cfg.max_iterations):
        study, idx = sched.next_batch()
        Z, y = data[study]
        mask = sample_mask(model.latent_dim, model.dropout_rate, rng)
        loss, grads = loss_and_grad(model, study, Z[idx], y[idx], mask, cfg.l2)
        active = {name: grads[name] for name in model.study_parameters(study)}
        adam_step(state, params, active)
        trace.append((it, study, loss))
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iteration %d study %s loss %.4f", it + 1, study, loss)
    return model, trace


def train_plain(model, X, labels, cfg, variant="l2", l2=0.0, rate=0.0, rng=None):
    """Adam on a :class:`PlainModel` with single-study minibatches."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sched = CyclicScheduler([len(labels)], cfg.batch_size, rng)
    state = AdamState(lr=cfg.lr)
    params = model.parameters()
    trace = []
    for it in range(cfg.max_iterations):
        _, idx = sched.next_batch()
        loss, grads = plain_loss_and_grad(model, X[idx], labels[idx], variant, l2=l2, rate=rate, rng=rng)
        adam_step(state, params, grads)
        trace.append((it, 0, loss))
    return model, trace


def write_trace_csv(path_or_file, trace):
    import csv

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "study", "loss"])
        for it, study, loss in trace:
            w.writerow([it, study, repr(float(loss))])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)
