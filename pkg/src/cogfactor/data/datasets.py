"""Per-study sample containers, subject-level splits and directory storage."""

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from cogfactor.data.ndt import atomic_open, read_tensor, write_tensor
from cogfactor.errors import InvalidConfig, LabelOutOfRange, ShapeMismatch, TooFewSubjects


@dataclass(frozen=True)
class StudyDataset:
    name: str
    X: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    condition_names: list = field(default_factory=list)
    reduced: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        subjects = np.asarray(self.subjects, dtype=np.int64)
        if X.ndim != 2:
            raise ShapeMismatch(f"samples of {self.name!r} must be a 2-D array")
        if labels.shape != (X.shape[0],) or subjects.shape != (X.shape[0],):
            raise ShapeMismatch(f"{self.name!r}: labels and subjects need one entry per sample")
        k = len(self.condition_names)
        if len(labels) and (labels.min() < 0 or labels.max() >= k):
            raise LabelOutOfRange(f"{self.name!r}: labels must lie in [0, {k})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "condition_names", list(self.condition_names))

    @property
    def n_samples(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return len(self.condition_names)

    @property
    def subject_ids(self):
        return np.unique(self.subjects)

    @property
    def n_subjects(self):
        return len(self.subject_ids)

    def select(self, mask):
        return replace(self, X=self.X[mask], labels=self.labels[mask], subjects=self.subjects[mask])

    def with_samples(self, X, reduced=True):
        return replace(self, X=X, reduced=reduced)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def split_by_subject(ds, fraction=0.5, seed=None):
    """Partition ``ds`` by subject into ``(train, test)``.

    The test side receives ``ceil(fraction * n_subjects)`` subjects. Sample
    order is preserved on both sides.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig(f"fraction must lie in (0, 1), got {fraction}")
    ids = ds.subject_ids
    if len(ids) < 2:
        raise TooFewSubjects(f"{ds.name!r} has {len(ids)} subject(s); a split needs at least 2")
    n_test = min(math.ceil(fraction * len(ids)), len(ids) - 1)
    test_ids = _rng(seed).permutation(ids)[:n_test]
    in_test = np.isin(ds.subjects, test_ids)
    return ds.select(~in_test), ds.select(in_test)


def subsample_subjects(ds, n_subjects, seed=None):
    """Keep every sample of ``n_subjects`` uniformly chosen subjects."""
    ids = ds.subject_ids
    if n_subjects < 1 or n_subjects > len(ids):
        raise TooFewSubjects(f"{ds.name!r} has {len(ids)} subjects, asked for {n_subjects}")
    if n_subjects == len(ids):
        return ds
    keep = _rng(seed).choice(ids, size=n_subjects, replace=False)
    return ds.select(np.isin(ds.subjects, keep))


def save_dataset(path, ds):
    os.makedirs(path, exist_ok=True)
    files = {"X": "X.ndt", "labels": "labels.ndt", "subjects": "subjects.ndt"}
    write_tensor(os.path.join(path, files["X"]), ds.X)
    write_tensor(os.path.join(path, files["labels"]), ds.labels)
    write_tensor(os.path.join(path, files["subjects"]), ds.subjects)
    manifest = {
        "name": ds.name,
        "n": ds.n_samples,
        "dim": ds.dim,
        "kind": "reduced" if ds.reduced else "raw",
        "condition_names": ds.condition_names,
        "files": files,
    }
    write_json(os.path.join(path, "manifest.json"), manifest)


def load_dataset(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    files = manifest["files"]
    X = read_tensor(os.path.join(path, files["X"]))
    ds = StudyDataset(
        name=manifest["name"],
        X=X,
        labels=read_tensor(os.path.join(path, files["labels"])),
        subjects=read_tensor(os.path.join(path, files["subjects"])),
        condition_names=manifest["condition_names"],
        reduced=manifest["kind"] == "reduced",
    )
    if ds.n_samples != manifest["n"] or ds.dim != manifest["dim"]:
        raise ShapeMismatch(f"{path}: tensor shapes disagree with manifest.json")
    return ds


def save_collection(path, datasets):
    """Write several studies under ``path``, keeping their order in index.json."""
    os.makedirs(path, exist_ok=True)
    for ds in datasets:
        save_dataset(os.path.join(path, ds.name), ds)
    write_json(os.path.join(path, "index.json"), {"studies": [ds.name for ds in datasets]})


def load_collection(path):
    index = os.path.join(path, "index.json")
    if os.path.exists(index):
        with open(index) as fh:
            names = json.load(fh)["studies"]
    else:
        names = sorted(d for d in os.listdir(path)
                       if os.path.exists(os.path.join(path, d, "manifest.json")))
    return [load_dataset(os.path.join(path, n)) for n in names]


def write_json(path, obj):
    with atomic_open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
