"""Held-out accuracy, the six-model ablation, learning curves and the
multi-scale benchmark.

Every fold draws a fresh subject split of *every* study (half of the
subjects held out, by default). All variants, grid points or projections
compared within a fold share that split and are scored on the target's
held-out subjects. Randomness for fold ``f`` derives only from
``(seed + f, purpose)``, so adding folds never changes earlier ones.

Ablation variants:

1. multinomial on raw samples, l2 penalty chosen by nested CV
2. multinomial on projected samples, l2 penalty chosen by nested CV
3. multinomial on projected samples with input Dropout, rate chosen by nested CV
4. factored model trained on the target study alone
5. factored model trained on the target plus the largest other study
6. factored model trained on every study
"""

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize

from cogfactor.data.datasets import split_by_subject, subsample_subjects
from cogfactor.errors import InvalidConfig, MissingAuxiliary, ShapeMismatch, TooFewSubjects
from cogfactor.model import FactoredModel, PlainModel, plain_loss_and_grad, scores
from cogfactor.optim import TrainConfig, train, train_plain
from cogfactor.projection import project

log = logging.getLogger(__name__)

VARIANT_NAMES = {
    1: "raw_l2",
    2: "projected_l2",
    3: "projected_input_dropout",
    4: "factored_single",
    5: "factored_pair",
    6: "factored_all",
}

RECORD_FIELDS = ("kind", "variant", "target_study", "projection", "train_subjects",
                 "fold", "fold_seed", "test_accuracy")


@dataclass(frozen=True)
class EvalConfig:
    """Settings shared by every experiment harness.

    ``iterations`` counts gradient steps *per study*: a factored model trained
    on ``m`` studies runs ``m * iterations`` steps, so every head receives the
    same number of updates whatever the number of studies.
    """

    latent_dim: int = 100
    dropout_rate: float = 0.75
    batch_size: int = 256
    iterations: int = 1500
    lr: float = 1e-3
    seed: int = 0
    test_fraction: float = 0.5
    l2_grid: tuple = tuple(float(x) for x in np.logspace(-6, 2, 9))
    input_dropout_grid: tuple = (0.25, 0.5, 0.75)
    inner_folds: int = 3
    lbfgs_iterations: int = 500

    def __post_init__(self):
        if self.latent_dim < 1 or self.iterations < 0 or self.batch_size < 1:
            raise InvalidConfig("latent_dim, batch_size must be positive and iterations nonnegative")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidConfig("test_fraction must lie in (0, 1)")
        if self.inner_folds < 2:
            raise InvalidConfig("inner_folds must be at least 2")
        object.__setattr__(self, "l2_grid", tuple(float(x) for x in self.l2_grid))
        object.__setattr__(self, "input_dropout_grid", tuple(float(x) for x in self.input_dropout_grid))

    def train_config(self, n_studies, seed):
        return TrainConfig(batch_size=self.batch_size, max_iterations=self.iterations * n_studies,
                           lr=self.lr, seed=seed, dropout_rate=self.dropout_rate)

    def to_dict(self):
        d = asdict(self)
        d["l2_grid"] = list(self.l2_grid)
        d["input_dropout_grid"] = list(self.input_dropout_grid)
        return d


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentReport:
    """Long-format accuracy records plus provenance metadata.

    ``wall_time`` is kept on each record in memory but is left out of the
    written files unless asked for, so that reports of identical runs are
    byte-identical.
    """

    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sorted_records(self):
        def key(r):
            return (r["kind"], r["target_study"], r["projection"], r["variant"],
                    r["train_subjects"], r["fold"])
        return sorted(self.records, key=key)

    def _rows(self, include_timing):
        fields = RECORD_FIELDS + (("wall_time",) if include_timing else ())
        return fields, [{f: r[f] for f in fields} for r in self.sorted_records()]

    def to_csv(self, include_timing=False):
        fields, rows = self._rows(include_timing)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def to_json(self, include_timing=False):
        _, rows = self._rows(include_timing)
        return json.dumps({"metadata": self.metadata, "records": rows}, indent=2, sort_keys=True) + "\n"

    def extend(self, other):
        self.records.extend(other.records)
        return self

    def accuracies(self, **where):
        """Test accuracies of matching records, ordered by fold."""
        rows = [r for r in self.sorted_records() if all(r[k] == v for k, v in where.items())]
        return np.array([r["test_accuracy"] for r in sorted(rows, key=lambda r: r["fold"])])

    def summary(self):
        """Mean, standard deviation and fold count per (kind, target, projection, variant, size)."""
        groups = {}
        for r in self.sorted_records():
            k = (r["kind"], r["target_study"], r["projection"], r["variant"], r["train_subjects"])
            groups.setdefault(k, []).append(r["test_accuracy"])
        return [{"kind": k[0], "target_study": k[1], "projection": k[2], "variant": k[3],
                 "train_subjects": k[4], "mean": float(np.mean(v)), "std": float(np.std(v)),
                 "folds": len(v)} for k, v in groups.items()]


def accuracy(model, X, labels, study=None):
    """Fraction of argmax predictions equal to ``labels`` (ties go to the
    lowest class index)."""
    labels = np.asarray(labels)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or labels.shape != (X.shape[0],):
        raise ShapeMismatch(f"{X.shape[0] if X.ndim else 0} samples but labels of shape {labels.shape}")
    # softmax is monotone, and scores keep distinctions that underflow in probabilities
    S = model.scores(X) if isinstance(model, PlainModel) else scores(model, study, X)
    return float(np.mean(np.argmax(S, axis=1) == labels))


# ---------------------------------------------------------------------------
# baseline fitting


def fit_plain_lbfgs(X, labels, n_classes, l2, max_iter=500):
    """Full-batch L-BFGS for the l2-penalized multinomial model (convex)."""
    model = PlainModel.zeros(X.shape[1], n_classes)
    shapes = [model.weight.shape, model.bias.shape]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(theta):
        model.weight[...] = theta[:sizes[0]].reshape(shapes[0])
        model.bias[...] = theta[sizes[0]:]

    def fun(theta):
        unpack(theta)
        loss, grads = plain_loss_and_grad(model, X, labels, "l2", l2=l2)
        return loss, np.concatenate([grads["weight"].ravel(), grads["bias"]])

    res = scipy.optimize.minimize(fun, np.zeros(sum(sizes)), jac=True, method="L-BFGS-B",
                                  options={"maxiter": max_iter})
    unpack(res.x)
    return model


def _inner_splits(subjects, n_folds, rng):
    ids = rng.permutation(np.unique(subjects))
    n_folds = min(n_folds, len(ids))
    for chunk in np.array_split(ids, n_folds):
        held = np.isin(subjects, chunk)
        yield ~held, held


def _select_by_cv(X, labels, subjects, grid, fit, n_folds, rng):
    if len(grid) == 1 or len(np.unique(subjects)) < 2:
        return grid[0]
    splits = list(_inner_splits(subjects, n_folds, rng))
    scores = []
    for value in grid:
        accs = [accuracy(fit(X[tr], labels[tr], value), X[te], labels[te]) for tr, te in splits]
        scores.append(np.mean(accs))
    return grid[int(np.argmax(scores))]


def fit_l2_baseline(X, labels, subjects, n_classes, cfg, rng):
    def fit(Xa, ya, lam):
        return fit_plain_lbfgs(Xa, ya, n_classes, lam, cfg.lbfgs_iterations)

    lam = _select_by_cv(X, labels, subjects, cfg.l2_grid, fit, cfg.inner_folds, rng)
    return fit(X, labels, lam), {"l2": lam}


def fit_input_dropout_baseline(X, labels, subjects, n_classes, cfg, rng):
    seed = int(rng.integers(2**63))

    def fit(Xa, ya, rate):
        model = PlainModel.zeros(Xa.shape[1], n_classes)
        tcfg = cfg.train_config(1, seed)
        train_plain(model, Xa, ya, tcfg, variant="input_dropout", rate=rate)
        return model

    rate = _select_by_cv(X, labels, subjects, cfg.input_dropout_grid, fit, cfg.inner_folds, rng)
    return fit(X, labels, rate), {"rate": rate}


def fit_factored(train_sets, input_dim, cfg, seed):
    """Train a factored model on ``{name: StudyDataset}`` of reduced samples."""
    rng = np.random.default_rng(seed)
    model = FactoredModel.initialize(input_dim, cfg.latent_dim,
                                     {n: ds.condition_names for n, ds in train_sets.items()},
                                     cfg.dropout_rate, rng=rng)
    data = {n: (ds.X, ds.labels) for n, ds in train_sets.items()}
    train(model, data, cfg.train_config(len(train_sets), int(rng.integers(2**63))))
    return model


# ---------------------------------------------------------------------------
# fold machinery


def _fold_rng(fold_seed, *purpose):
    return np.random.default_rng([fold_seed, *purpose])


def _split_all(datasets, fold_seed, fraction):
    return {ds.name: split_by_subject(ds, fraction, seed=_fold_rng(fold_seed, 0, i))
            for i, ds in enumerate(datasets)}


def _reduce(ds, op):
    return ds if ds.reduced else ds.with_samples(project(op, ds.X))


def _largest_other(datasets, target):
    others = [ds for ds in datasets if ds.name != target]
    if not others:
        raise MissingAuxiliary(f"no auxiliary study besides {target!r}")
    return max(others, key=lambda ds: (ds.n_subjects, ds.n_samples)).name


def _record(kind, variant, target, fold, fold_seed, acc, n_subj, wall, projection=""):
    return {"kind": kind, "variant": variant, "target_study": target, "projection": projection,
            "train_subjects": int(n_subj), "fold": fold, "fold_seed": fold_seed,
            "test_accuracy": acc, "wall_time": wall}


def _factored_studies(variant, datasets, target):
    if variant == 4:
        return [target]
    if variant == 5:
        return [target, _largest_other(datasets, target)]
    names = [ds.name for ds in datasets]
    if len(names) < 2:
        raise MissingAuxiliary("variant 6 needs at least two studies")
    return [target] + [n for n in names if n != target]


def _ablation_fold(args):
    datasets, op, cfg, variants, targets, fold = args
    fold_seed = cfg.seed + fold
    splits = _split_all(datasets, fold_seed, cfg.test_fraction)
    reduced = {n: (_reduce(tr, op), _reduce(te, op)) for n, (tr, te) in splits.items()}
    records = []
    for ti, target in enumerate(targets):
        train_raw, test_raw = splits[target]
        train_red, test_red = reduced[target]
        for variant in variants:
            t0 = time.perf_counter()
            rng = _fold_rng(fold_seed, 1, ti, variant)
            if variant == 1:
                model, _ = fit_l2_baseline(train_raw.X, train_raw.labels, train_raw.subjects,
                                           train_raw.n_classes, cfg, rng)
                acc = accuracy(model, test_raw.X, test_raw.labels)
            elif variant in (2, 3):
                fit = fit_l2_baseline if variant == 2 else fit_input_dropout_baseline
                model, _ = fit(train_red.X, train_red.labels, train_red.subjects, train_red.n_classes, cfg, rng)
                acc = accuracy(model, test_red.X, test_red.labels)
            else:
                names = _factored_studies(variant, datasets, target)
                model = fit_factored({n: reduced[n][0] for n in names}, op.total_dim, cfg,
                                     int(rng.integers(2**63)))
                acc = accuracy(model, test_red.X, test_red.labels, study=target)
            records.append(_record("ablation", variant, target, fold, fold_seed, acc,
                                   train_raw.n_subjects, time.perf_counter() - t0))
            log.info("fold %d target %s variant %d accuracy %.4f", fold, target, variant, acc)
    return records


def _run(worker, jobs, n_jobs):
    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(worker, jobs))
    else:
        results = [worker(j) for j in jobs]
    return [r for chunk in results for r in chunk]


def _check_datasets(datasets, op):
    datasets = list(datasets)
    names = [ds.name for ds in datasets]
    if len(set(names)) != len(names):
        raise InvalidConfig("study names must be distinct")
    for ds in datasets:
        dim = op.total_dim if ds.reduced else op.n_voxels
        if ds.dim != dim:
            raise ShapeMismatch(f"study {ds.name!r} has dimension {ds.dim}, expected {dim}")
    return datasets


def default_targets(datasets):
    """Every study except the largest, which plays the auxiliary role."""
    if len(datasets) == 1:
        return [datasets[0].name]
    big = max(datasets, key=lambda ds: (ds.n_subjects, ds.n_samples)).name
    return [ds.name for ds in datasets if ds.name != big]


def run_ablation(datasets, op, cfg, variants=(1, 2, 3, 4, 5, 6), folds=20, targets=None, n_jobs=1):
    """Train every requested variant on every fold; one record per
    (variant, target, fold)."""
    datasets = _check_datasets(datasets, op)
    variants = sorted(set(variants))
    if any(v not in VARIANT_NAMES for v in variants):
        raise InvalidConfig(f"variants must be drawn from 1..6, got {variants}")
    if 1 in variants and any(ds.reduced for ds in datasets):
        raise InvalidConfig("variant 1 needs raw (unprojected) samples")
    targets = list(targets) if targets is not None else default_targets(datasets)
    for t in targets:
        if t not in {ds.name for ds in datasets}:
            raise InvalidConfig(f"unknown target study {t!r}")
        for v in variants:
            if v >= 5:
                _factored_studies(v, datasets, t)
    jobs = [(datasets, op, cfg, variants, targets, f) for f in range(folds)]
    records = _run(_ablation_fold, jobs, n_jobs)
    meta = {"kind": "ablation", "config_hash": config_hash(
        {"cfg": cfg.to_dict(), "variants": variants, "folds": folds, "targets": targets,
         "studies": [ds.name for ds in datasets]})}
    return ExperimentReport(records, meta)


def _curve_fold(args):
    datasets, op, cfg, target, grid, fold = args
    fold_seed = cfg.seed + fold
    splits = _split_all(datasets, fold_seed, cfg.test_fraction)
    reduced = {n: (_reduce(tr, op), _reduce(te, op)) for n, (tr, te) in splits.items()}
    train_t, test_t = reduced[target]
    records = []
    for n_subj in grid:
        if n_subj > train_t.n_subjects:
            raise TooFewSubjects(f"{target!r} has {train_t.n_subjects} training subjects, grid asks {n_subj}")
        sub = subsample_subjects(train_t, n_subj, seed=_fold_rng(fold_seed, 2, n_subj))
        for variant in (4, 6):
            t0 = time.perf_counter()
            names = _factored_studies(variant, datasets, target)
            sets = {n: (sub if n == target else reduced[n][0]) for n in names}
            model = fit_factored(sets, op.total_dim, cfg, int(_fold_rng(fold_seed, 3, n_subj, variant).integers(2**63)))
            acc = accuracy(model, test_t.X, test_t.labels, study=target)
            records.append(_record("curve", variant, target, fold, fold_seed, acc, n_subj,
                                   time.perf_counter() - t0))
            log.info("fold %d %s subjects %d variant %d accuracy %.4f", fold, target, n_subj, variant, acc)
    return records


def learning_curve(datasets, op, target, subject_grid, cfg, folds=20, n_jobs=1):
    """Single-study (variant 4) vs all-study (variant 6) accuracy as the
    number of target training subjects varies."""
    datasets = _check_datasets(datasets, op)
    if target not in {ds.name for ds in datasets}:
        raise InvalidConfig(f"unknown target study {target!r}")
    grid = sorted({int(n) for n in subject_grid})
    if grid and grid[0] < 1:
        raise TooFewSubjects("grid values must be positive")
    meta = {"kind": "curve", "config_hash": config_hash(
        {"cfg": cfg.to_dict(), "grid": grid, "folds": folds, "target": target,
         "studies": [ds.name for ds in datasets]})}
    if not grid:
        return ExperimentReport([], meta)
    jobs = [(datasets, op, cfg, target, grid, f) for f in range(folds)]
    return ExperimentReport(_run(_curve_fold, jobs, n_jobs), meta)


def _multiscale_fold(args):
    datasets, ops, cfg, targets, fold = args
    fold_seed = cfg.seed + fold
    splits = _split_all(datasets, fold_seed, cfg.test_fraction)
    records = []
    for pname, op in ops.items():
        reduced = {n: (_reduce(tr, op), _reduce(te, op)) for n, (tr, te) in splits.items()}
        for ti, target in enumerate(targets):
            t0 = time.perf_counter()
            names = _factored_studies(6, datasets, target)
            # the same seed for both projections keeps the pairing tight
            seed = int(_fold_rng(fold_seed, 4, ti).integers(2**63))
            model = fit_factored({n: reduced[n][0] for n in names}, op.total_dim, cfg, seed)
            acc = accuracy(model, reduced[target][1].X, reduced[target][1].labels, study=target)
            records.append(_record("multiscale", 6, target, fold, fold_seed, acc,
                                   splits[target][0].n_subjects, time.perf_counter() - t0, pname))
            log.info("fold %d %s projection %s accuracy %.4f", fold, target, pname, acc)
    return records


def multiscale_benchmark(datasets, ops, cfg, folds=20, targets=None, n_jobs=1):
    """Variant 6 under each projection in ``ops`` (name -> operator), paired
    by fold."""
    ops = dict(ops)
    if not ops:
        raise InvalidConfig("need at least one projection")
    p = {op.n_voxels for op in ops.values()}
    if len(p) != 1:
        raise ShapeMismatch("all projections must share their voxel count")
    datasets = list(datasets)
    if any(ds.reduced for ds in datasets):
        raise InvalidConfig("the multi-scale benchmark needs raw samples")
    datasets = _check_datasets(datasets, next(iter(ops.values())))
    targets = list(targets) if targets is not None else default_targets(datasets)
    jobs = [(datasets, ops, cfg, targets, f) for f in range(folds)]
    meta = {"kind": "multiscale", "config_hash": config_hash(
        {"cfg": cfg.to_dict(), "projections": list(ops), "folds": folds, "targets": targets,
         "studies": [ds.name for ds in datasets]})}
    return ExperimentReport(_run(_multiscale_fold, jobs, n_jobs), meta)
