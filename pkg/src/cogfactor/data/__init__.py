from cogfactor.data.datasets import (
    StudyDataset,
    load_collection,
    load_dataset,
    save_collection,
    save_dataset,
    split_by_subject,
    subsample_subjects,
)
from cogfactor.data.ndt import read_tensor, write_tensor
from cogfactor.data.synth import StudySpec, SynthConfig, SynthTruth, bump_dictionary, generate_synthetic

__all__ = [
    "StudyDataset",
    "StudySpec",
    "SynthConfig",
    "SynthTruth",
    "bump_dictionary",
    "generate_synthetic",
    "load_collection",
    "load_dataset",
    "read_tensor",
    "save_collection",
    "save_dataset",
    "split_by_subject",
    "subsample_subjects",
    "write_tensor",
]
