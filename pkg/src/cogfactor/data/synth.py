"""Synthetic multi-study corpora with a known shared latent structure.

Voxels sit on a line. Spatial dictionaries are overlapping positive bumps at
several scales (each voxel is covered by at most two atoms of a scale). The
signal basis ``U`` (voxels x g_true, orthonormal columns) spans ``g_true``
signal directions, each built from ``atoms_per_scale`` atoms of a single
scale; directions cycle through the scales listed in ``signal_scales``, so
the signal has structure at every one of those scales. By default the signal
comes from the two coarsest scales, so the finest dictionary alone spans it
only approximately.

For condition ``c`` of study ``d`` and subject ``s``::

    x = sqrt(p) * (U (v_c + o_{s,d}) + e)

with ``|v_c| = 1``, subject offsets ``o ~ N(0, subject_noise^2 / g_true)``
living in the latent space, and voxel noise ``e ~ N(0, trial_noise^2 /
g_true)``. Both noise levels are therefore measured against one latent
coordinate of a condition vector; the ``sqrt(p)`` factor gives condition
means unit root-mean-square per voxel.

Condition vectors are drawn uniformly on the unit sphere of a random
``condition_dim``-dimensional subspace of the latent space, while subject
offsets and noise fill all of it. A fraction ``shared_fraction`` of every
study's condition vectors comes from a pool common to all studies; the rest
are private to the study.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from cogfactor.data.datasets import StudyDataset
from cogfactor.errors import InvalidConfig
from cogfactor.projection import Dictionary


@dataclass(frozen=True)
class StudySpec:
    n_classes: int
    n_subjects: int
    samples_per_condition: int = 1
    name: str = ""


def _default_studies():
    return (
        StudySpec(23, 60, 1, "large"),
        StudySpec(8, 20, 1, "alpha"),
        StudySpec(12, 24, 1, "beta"),
        StudySpec(16, 30, 1, "gamma"),
    )


@dataclass(frozen=True)
class SynthConfig:
    p: int = 2000
    g_true: int = 20
    studies: tuple = field(default_factory=_default_studies)
    subject_noise: float = 1.0
    trial_noise: float = 1.5
    shared_fraction: float = 0.7
    condition_dim: int = 8
    dictionary_sizes: tuple = (16, 64, 128)
    signal_scales: tuple = (0, 1)
    atoms_per_scale: int = 2
    seed: int = 0

    def __post_init__(self):
        studies = tuple(s if isinstance(s, StudySpec) else StudySpec(**s) for s in self.studies)
        object.__setattr__(self, "studies", studies)
        object.__setattr__(self, "dictionary_sizes", tuple(int(s) for s in self.dictionary_sizes))
        object.__setattr__(self, "signal_scales", tuple(int(s) for s in self.signal_scales))
        if self.p < 1 or self.g_true < 1:
            raise InvalidConfig("p and g_true must be positive")
        if not studies:
            raise InvalidConfig("need at least one study")
        for s in studies:
            if s.n_classes < 1 or s.n_subjects < 1 or s.samples_per_condition < 1:
                raise InvalidConfig(f"study sizes must be positive: {s}")
        if self.subject_noise < 0 or self.trial_noise < 0:
            raise InvalidConfig("noise levels must be nonnegative")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise InvalidConfig("shared_fraction must lie in [0, 1]")
        if not self.dictionary_sizes or min(self.dictionary_sizes) < 1:
            raise InvalidConfig("dictionary sizes must be positive")
        if max(self.dictionary_sizes) * 2 > self.p:
            raise InvalidConfig("dictionaries need at least two voxels per atom")
        if not self.signal_scales or any(not 0 <= i < len(self.dictionary_sizes) for i in self.signal_scales):
            raise InvalidConfig("signal_scales must index dictionary_sizes")
        if not 0 <= self.condition_dim <= self.g_true:
            raise InvalidConfig("condition_dim must lie in [0, g_true]; 0 means g_true")
        if self.atoms_per_scale < 1:
            raise InvalidConfig("atoms_per_scale must be positive")
        names = [s.name or f"study{i}" for i, s in enumerate(studies)]
        if len(set(names)) != len(names):
            raise InvalidConfig("study names must be distinct")

    @property
    def study_names(self):
        return [s.name or f"study{i}" for i, s in enumerate(self.studies)]

    def to_dict(self):
        out = asdict(self)
        out["studies"] = [asdict(s) for s in self.studies]
        out["dictionary_sizes"] = list(self.dictionary_sizes)
        out["signal_scales"] = list(self.signal_scales)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SynthTruth:
    basis: np.ndarray
    condition_vectors: dict
    shared_pool: np.ndarray
    subject_offsets: dict
    dictionaries: list


def bump_dictionary(p, n_atoms, rng, name=""):
    """Overlapping Hann bumps tiling ``[0, p)``; centres are jittered."""
    spacing = p / n_atoms
    centres = (np.arange(n_atoms) + 0.5) * spacing + rng.uniform(-0.25, 0.25, n_atoms) * spacing
    half = 0.75 * spacing
    pos = np.arange(p)[:, None]
    rel = (pos - centres[None, :]) / half
    atoms = np.where(np.abs(rel) < 1.0, 0.5 * (1.0 + np.cos(np.pi * rel)), 0.0)
    # guarantee every atom touches at least one voxel even for tiny spacings
    nearest = np.clip(np.round(centres).astype(int), 0, p - 1)
    atoms[nearest, np.arange(n_atoms)] = np.maximum(atoms[nearest, np.arange(n_atoms)], 1.0)
    return Dictionary(atoms, name=name or f"bumps{n_atoms}")


def _unit(rng, size):
    v = rng.standard_normal(size)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg):
    """Return ``(datasets, truth)`` for ``cfg``; fully determined by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    dicts = [bump_dictionary(cfg.p, s, rng, name=f"scale{s}") for s in cfg.dictionary_sizes]

    raw = np.zeros((cfg.p, cfg.g_true))
    for j in range(cfg.g_true):
        atoms = dicts[cfg.signal_scales[j % len(cfg.signal_scales)]].components
        picked = rng.choice(atoms.shape[1], size=min(cfg.atoms_per_scale, atoms.shape[1]), replace=False)
        raw[:, j] = atoms[:, picked] @ rng.uniform(0.5, 1.5, size=len(picked))
    basis, _ = np.linalg.qr(raw)

    cdim = cfg.condition_dim or cfg.g_true
    cond_basis, _ = np.linalg.qr(rng.standard_normal((cfg.g_true, cdim)))

    def draw_condition():
        return cond_basis @ _unit(rng, cdim)

    n_shared = [int(round(cfg.shared_fraction * s.n_classes)) for s in cfg.studies]
    pool = np.array([draw_condition() for _ in range(max(n_shared, default=0))]).reshape(-1, cfg.g_true)

    amp = np.sqrt(cfg.p)
    subj_sd = cfg.subject_noise / np.sqrt(cfg.g_true)
    trial_sd = cfg.trial_noise / np.sqrt(cfg.g_true)
    datasets, cond_vectors, offsets = [], {}, {}
    for name, spec, n_sh in zip(cfg.study_names, cfg.studies, n_shared):
        pool_idx = np.sort(rng.choice(len(pool), size=n_sh, replace=False)) if n_sh else np.array([], int)
        vectors = [pool[i] for i in pool_idx]
        cond_names = [f"shared{i:02d}" for i in pool_idx]
        for j in range(spec.n_classes - n_sh):
            vectors.append(draw_condition())
            cond_names.append(f"{name}_c{j:02d}")
        V = np.array(vectors)
        subj = rng.standard_normal((spec.n_subjects, cfg.g_true)) * subj_sd

        per_subject = spec.n_classes * spec.samples_per_condition
        labels = np.tile(np.repeat(np.arange(spec.n_classes), spec.samples_per_condition), spec.n_subjects)
        subjects = np.repeat(np.arange(spec.n_subjects), per_subject)
        noise = rng.standard_normal((len(labels), cfg.p)) * trial_sd
        X = (V @ basis.T)[labels] + (subj @ basis.T)[subjects] + noise
        X *= amp
        datasets.append(StudyDataset(name, X, labels, subjects, cond_names, reduced=False))
        cond_vectors[name] = V
        offsets[name] = subj
    return datasets, SynthTruth(basis, cond_vectors, pool, offsets, dicts)
