import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cogfactor.data import (
    StudyDataset,
    StudySpec,
    SynthConfig,
    generate_synthetic,
    load_collection,
    load_dataset,
    read_tensor,
    save_collection,
    save_dataset,
    split_by_subject,
    subsample_subjects,
    write_tensor,
)
from cogfactor.data.ndt import decode, encode
from cogfactor.errors import (
    BadMagic,
    InvalidConfig,
    LabelOutOfRange,
    TooFewSubjects,
    TruncatedFile,
    UnsupportedDtype,
)
from cogfactor.projection import assemble_multiscale


def toy_dataset(n_subjects=4, k=3, per=2, name="toy"):
    subjects = np.repeat(np.arange(n_subjects), k * per)
    labels = np.tile(np.arange(k).repeat(per), n_subjects)
    X = np.arange(len(labels) * 2, dtype=float).reshape(-1, 2)
    return StudyDataset(name, X, labels, subjects, [f"c{i}" for i in range(k)])


class TestNDT:
    def test_2x3_float64_is_70_bytes(self, tmp_path):
        path = tmp_path / "a.ndt"
        write_tensor(path, np.arange(6, dtype=np.float64).reshape(2, 3))
        # 4 magic + 1 dtype + 1 ndim + 2 * 8 dims + 6 * 8 payload
        assert os.path.getsize(path) == 4 + 1 + 1 + 2 * 8 + 6 * 8 == 70

    def test_header_layout(self):
        buf = encode(np.zeros((2, 3), dtype=np.int64))
        assert buf[:4] == b"NDT1"
        assert buf[4] == 3 and buf[5] == 2
        assert struct.unpack("<2Q", buf[6:22]) == (2, 3)

    @pytest.mark.parametrize("dtype", [np.float64, np.float32, np.int64])
    @pytest.mark.parametrize("shape", [(0,), (0, 5), (1,), (1, 1), (), (3, 4, 2)])
    def test_round_trip_edge_cases(self, tmp_path, dtype, shape):
        arr = (np.arange(int(np.prod(shape))) * 1.5 - 2).astype(dtype).reshape(shape)
        write_tensor(tmp_path / "t.ndt", arr)
        back = read_tensor(tmp_path / "t.ndt")
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(st.sampled_from([np.float64, np.float32, np.int64]),
                      hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)))
    def test_round_trip_bit_exact(self, arr):
        back = decode(encode(arr))
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_big_endian_input(self):
        arr = np.arange(4, dtype=">f8")
        np.testing.assert_array_equal(decode(encode(arr)), arr)

    def test_non_contiguous_input(self):
        arr = np.arange(12.0).reshape(3, 4)[:, ::2]
        np.testing.assert_array_equal(decode(encode(arr)), arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ndt"
        path.write_bytes(b"NPY1" + bytes(10))
        with pytest.raises(BadMagic):
            read_tensor(path)

    def test_truncated(self):
        buf = encode(np.ones((4, 4)))
        with pytest.raises(TruncatedFile):
            decode(buf[:-1])
        with pytest.raises(TruncatedFile):
            decode(buf[:10])
        with pytest.raises(TruncatedFile):
            decode(buf + b"\0")

    def test_unsupported_dtype(self):
        with pytest.raises(UnsupportedDtype):
            encode(np.zeros(3, dtype=np.int32))
        with pytest.raises(UnsupportedDtype):
            decode(b"NDT1" + bytes([9, 0]))


class TestSplits:
    def test_two_subjects(self):
        train, test = split_by_subject(toy_dataset(n_subjects=2), 0.5, seed=0)
        assert train.n_subjects == 1 and test.n_subjects == 1

    def test_79_subjects(self):
        ds = toy_dataset(n_subjects=79, k=2, per=1)
        train, test = split_by_subject(ds, 0.5, seed=3)
        assert (train.n_subjects, test.n_subjects) == (39, 40)

    def test_same_seed_same_partition(self):
        ds = toy_dataset(n_subjects=10)
        a = split_by_subject(ds, 0.5, seed=7)
        b = split_by_subject(ds, 0.5, seed=7)
        np.testing.assert_array_equal(a[1].subjects, b[1].subjects)

    def test_order_preserved(self):
        ds = toy_dataset(n_subjects=6)
        train, test = split_by_subject(ds, 0.5, seed=1)
        for side in (train, test):
            rows = side.X[:, 0] // 2
            assert np.all(np.diff(rows) > 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
    def test_no_leakage(self, n_subj, fraction, seed):
        ds = toy_dataset(n_subjects=n_subj, k=2, per=1)
        train, test = split_by_subject(ds, fraction, seed=seed)
        assert not set(train.subjects) & set(test.subjects)
        assert set(train.subjects) | set(test.subjects) == set(ds.subjects)
        assert train.n_samples + test.n_samples == ds.n_samples

    def test_too_few(self):
        with pytest.raises(TooFewSubjects):
            split_by_subject(toy_dataset(n_subjects=1), 0.5, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(InvalidConfig):
            split_by_subject(toy_dataset(), 1.0, seed=0)

    def test_subsample(self):
        ds = toy_dataset(n_subjects=8, k=3, per=2)
        assert subsample_subjects(ds, 8, seed=0) is ds
        one = subsample_subjects(ds, 1, seed=0)
        assert len(np.unique(one.subjects)) == 1
        with pytest.raises(TooFewSubjects):
            subsample_subjects(ds, 9, seed=0)

    def test_subsample_synthetic_bookkeeping(self):
        cfg = SynthConfig(p=100, g_true=4, condition_dim=2, studies=[StudySpec(5, 12, 2, "s")],
                          dictionary_sizes=(4, 10), signal_scales=(0, 1))
        (ds,), _ = generate_synthetic(cfg)
        assert subsample_subjects(ds, 5, seed=1).n_samples == 5 * 5 * 2

    def test_label_range_checked(self):
        with pytest.raises(LabelOutOfRange):
            StudyDataset("x", np.zeros((2, 1)), [0, 2], [0, 1], ["a", "b"])


class TestStorage:
    def test_dataset_round_trip(self, tmp_path):
        ds = toy_dataset()
        save_dataset(tmp_path / "toy", ds)
        back = load_dataset(tmp_path / "toy")
        assert back.name == ds.name and back.condition_names == ds.condition_names
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert not back.reduced

    def test_collection_keeps_order(self, tmp_path):
        sets = [toy_dataset(name=n) for n in ("zeta", "alpha", "mid")]
        save_collection(tmp_path, sets)
        assert [d.name for d in load_collection(tmp_path)] == ["zeta", "alpha", "mid"]


class TestSynthetic:
    small = SynthConfig(p=300, g_true=6, studies=[StudySpec(4, 5, 2, "a"), StudySpec(6, 4, 1, "b")],
                        dictionary_sizes=(6, 20, 40), condition_dim=4)

    def test_noiseless_conditions_identical(self):
        cfg = SynthConfig(**{**self.small.to_dict(), "subject_noise": 0.0, "trial_noise": 0.0})
        datasets, _ = generate_synthetic(cfg)
        for ds in datasets:
            for c in range(ds.n_classes):
                rows = ds.X[ds.labels == c]
                np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))

    def test_seed_reproducible(self):
        a, _ = generate_synthetic(self.small)
        b, _ = generate_synthetic(self.small)
        for x, y in zip(a, b):
            assert x.X.tobytes() == y.X.tobytes()
            assert x.condition_names == y.condition_names

    def test_shared_fraction(self):
        cfg = SynthConfig(**{**self.small.to_dict(), "shared_fraction": 0.0})
        datasets, truth = generate_synthetic(cfg)
        assert not any(n.startswith("shared") for ds in datasets for n in ds.condition_names)
        va, vb = truth.condition_vectors["a"], truth.condition_vectors["b"]
        assert not np.any(np.all(np.isclose(va[:, None, :], vb[None, :, :]), axis=2))

        full = SynthConfig(**{**self.small.to_dict(), "shared_fraction": 1.0})
        datasets, truth = generate_synthetic(full)
        for ds in datasets:
            for name, v in zip(ds.condition_names, truth.condition_vectors[ds.name]):
                np.testing.assert_array_equal(v, truth.shared_pool[int(name[len("shared"):])])

    def test_signal_in_dictionary_span(self):
        _, truth = generate_synthetic(self.small)
        op = assemble_multiscale(truth.dictionaries)
        D = np.hstack([d.dense() for d in truth.dictionaries])
        coef, *_ = np.linalg.lstsq(D, truth.basis, rcond=None)
        np.testing.assert_allclose(D @ coef, truth.basis, atol=1e-8)
        assert op.total_dim == 66

    def test_condition_vectors_in_condition_subspace(self):
        _, truth = generate_synthetic(self.small)
        V = np.vstack(list(truth.condition_vectors.values()))
        assert np.linalg.matrix_rank(V, tol=1e-10) <= 4
        np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0)

    def test_means_uncorrelated_with_noise(self):
        pvals = []
        from scipy import stats

        for seed in range(20):
            cfg = SynthConfig(**{**self.small.to_dict(), "seed": seed, "subject_noise": 0.0})
            datasets, truth = generate_synthetic(cfg)
            ds = datasets[0]
            means = np.sqrt(cfg.p) * truth.condition_vectors[ds.name][ds.labels] @ truth.basis.T
            noise = ds.X - means
            pvals.append(stats.pearsonr(means.ravel(), noise.ravel()).pvalue)
        # each test is at level 0.01; a couple of rejections in 20 would still be plausible
        assert sum(p < 0.01 for p in pvals) <= 2

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(subject_noise=-1.0)
        with pytest.raises(InvalidConfig):
            SynthConfig(studies=[])
        with pytest.raises(InvalidConfig):
            SynthConfig(shared_fraction=1.5)
