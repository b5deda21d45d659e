"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script with
``python3 tests/test_acceptance.py``. The lines are also repeated in the
pytest terminal summary. Criteria 5 to 7 train many models and take several
minutes each.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from cogfactor._kernels import kernels
from cogfactor.cli import main as cli_main
from cogfactor.data import SynthConfig, generate_synthetic, read_tensor, write_tensor
from cogfactor.data.synth import bump_dictionary
from cogfactor.evaluation import EvalConfig, learning_curve, multiscale_benchmark, run_ablation
from cogfactor.introspect import collapse, kmeans
from cogfactor.model import (
    FactoredModel,
    cross_entropy,
    latent,
    loss_and_grad,
    sample_mask,
    scores,
    softmax_probs,
)
from cogfactor.projection import Dictionary, assemble_multiscale, compute_projection, project

RESULTS = []


def report(number, title, passed, detail):
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert passed, line


@pytest.fixture(scope="module")
def default_corpus():
    datasets, truth = generate_synthetic(SynthConfig())
    return datasets, truth.dictionaries


def smallest_target(datasets):
    # the largest study is the auxiliary one; the target is the smallest of the rest
    big = max(datasets, key=lambda ds: ds.n_subjects).name
    return min((ds for ds in datasets if ds.name != big), key=lambda ds: (ds.n_subjects, ds.name)).name


# 1 -------------------------------------------------------------------------


def _block_rel_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else np.linalg.norm(analytic - numeric) / scale


def test_01_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, h = 0.0, 1e-6
    for _ in range(50):
        g, l, n = int(rng.integers(1, 31)), int(rng.integers(1, 11)), int(rng.integers(1, 9))
        ks = [int(k) for k in rng.integers(2, 6, size=int(rng.integers(1, 4)))]
        model = FactoredModel.initialize(g, l, {f"s{i}": k for i, k in enumerate(ks)},
                                         dropout_rate=float(rng.uniform(0, 0.9)), rng=rng)
        for head in model.heads.values():
            head.bias[:] = rng.standard_normal(head.n_classes)
        study = f"s{int(rng.integers(len(ks)))}"
        Z = rng.standard_normal((n, g))
        y = rng.integers(0, model.heads[study].n_classes, n)
        mask = sample_mask(l, model.dropout_rate, rng)
        _, grads = loss_and_grad(model, study, Z, y, mask)
        for name, param in model.parameters().items():
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + h
                up = loss_and_grad(model, study, Z, y, mask)[0]
                param[idx] = old - h
                down = loss_and_grad(model, study, Z, y, mask)[0]
                param[idx] = old
                numeric[idx] = (up - down) / (2 * h)
            worst = max(worst, _block_rel_error(grads[name], numeric))
    elapsed = time.perf_counter() - start
    report(1, "gradient correctness", worst < 1e-5 and elapsed < 30,
           f"worst block relative error {worst:.2e} (< 1e-5) over 50 models in {elapsed:.1f}s (< 30s)")


# 2 -------------------------------------------------------------------------


def test_02_projection_algebra():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(50):
        p, g = int(rng.integers(40, 400)), int(rng.integers(1, 31))
        D = rng.uniform(0.0, 1.0, (p, g)) * (rng.random((p, g)) < 0.5) + np.eye(p, g)
        worst = max(worst, np.abs(D.T @ compute_projection(Dictionary(D)) - np.eye(g)).max())
    brng = np.random.default_rng(7)
    op = assemble_multiscale([bump_dictionary(2048, s, brng) for s in (16, 64, 512)])
    report(2, "projection algebra", worst < 1e-8 and op.total_dim == 592,
           f"max |D^T W - I| = {worst:.2e} (< 1e-8); widths 16/64/512 give g = {op.total_dim}")


# 3 -------------------------------------------------------------------------


def test_03_softmax_identities():
    rng = np.random.default_rng(303)
    def losses(S, y):
        # the public loss on probabilities and the fused loss used in training
        return np.array([cross_entropy(softmax_probs(S), y), kernels.softmax_xent(np.ascontiguousarray(S), y)[0]])

    uniform_err = max(np.abs(losses(np.full((3, k), c), np.array([0, k - 1, k // 2])) - math.log(k)).max()
                      for k in range(1, 30) for c in (-5.0, 0.0, 7.5))
    S = rng.standard_normal((10_000, 9)) * rng.uniform(0.1, 30.0, (10_000, 1))
    shift = rng.standard_normal((10_000, 1)) * 10
    y = rng.integers(0, 9, 10_000)
    shift_err = max(np.abs(softmax_probs(S + shift) - softmax_probs(S)).max(),
                    np.abs(losses(S + shift, y) - losses(S, y)).max())
    sum_err = np.abs(softmax_probs(S).sum(axis=1) - 1.0).max()
    ok = uniform_err <= 1e-12 and shift_err <= 1e-12 and sum_err <= 1e-12
    report(3, "softmax and loss identities", ok,
           f"|loss - ln k| {uniform_err:.1e}, shift {shift_err:.1e}, row sums {sum_err:.1e} (all <= 1e-12)")


# 4 -------------------------------------------------------------------------


def test_04_dropout_contract():
    rng = np.random.default_rng(404)
    keep_rate = sample_mask(1_000_000, 0.75, rng).keep.mean()
    model = FactoredModel.initialize(50, 100, {"s": 10}, dropout_rate=0.75, rng=rng)
    model.heads["s"].bias[:] = rng.standard_normal(10)
    Z = rng.standard_normal((20, 50))
    n_masks = 10_000
    lat_sum, score_sum = np.zeros((20, 100)), np.zeros((20, 10))
    # every sample gets its own stream of masks, so the 20 averages are independent
    for i in range(20):
        mult = np.array([sample_mask(100, 0.75, rng).multiplier for _ in range(n_masks)])
        h = latent(model, Z[i:i + 1])[0]
        lat_sum[i] = (h * mult).sum(axis=0)
        score_sum[i] = ((h * mult) @ model.heads["s"].weight + model.heads["s"].bias).sum(axis=0)
    lat_err = np.linalg.norm(lat_sum / n_masks - latent(model, Z)) / np.linalg.norm(latent(model, Z))
    clean = scores(model, "s", Z)
    score_err = np.linalg.norm(score_sum / n_masks - clean) / np.linalg.norm(clean)
    expected = math.sqrt(0.75 / 0.25 / n_masks)
    ok = abs(keep_rate - 0.25) <= 0.002 and lat_err < 0.02 and score_err < 0.02
    report(4, "dropout contract", ok,
           f"keep rate {keep_rate:.4f} (0.25 +/- 0.002); mean over 1e4 masks vs unmasked: latent "
           f"{lat_err:.2%}, head scores {score_err:.2%} (< 2%; Monte-Carlo scale {expected:.2%})")


# 5 -------------------------------------------------------------------------


def test_05_transfer_effect(default_corpus):
    datasets, dicts = default_corpus
    target = smallest_target(datasets)
    start = time.perf_counter()
    rep = run_ablation(datasets, assemble_multiscale(dicts), EvalConfig(), variants=(1, 4, 5, 6),
                       folds=20, targets=[target])
    elapsed = time.perf_counter() - start
    acc = {v: rep.accuracies(variant=v, target_study=target) for v in (1, 4, 5, 6)}
    mean = {v: a.mean() for v, a in acc.items()}
    wins = int(np.sum(acc[6] > acc[4]))
    ok = (mean[6] >= mean[5] >= mean[4] > mean[1] and wins >= 15 and elapsed < 600
          and all(len(a) == 20 for a in acc.values()))
    report(5, "transfer effect", ok,
           f"target {target}: mean v6 {mean[6]:.4f} >= v5 {mean[5]:.4f} >= v4 {mean[4]:.4f} > v1 {mean[1]:.4f}; "
           f"v6 > v4 in {wins}/20 folds (>= 15); {elapsed:.0f}s (< 600s)")


# 6 -------------------------------------------------------------------------


def test_06_learning_curve(default_corpus):
    datasets, dicts = default_corpus
    target = smallest_target(datasets)
    n_train = next(ds for ds in datasets if ds.name == target).n_subjects // 2
    rep = learning_curve(datasets, assemble_multiscale(dicts), target, [5, n_train], EvalConfig(), folds=20)
    gain = {n: (rep.accuracies(variant=6, train_subjects=n) - rep.accuracies(variant=4, train_subjects=n)).mean()
            for n in (5, n_train)}
    report(6, "learning-curve trend", gain[5] > gain[n_train],
           f"target {target}: mean gain v6 - v4 at 5 subjects {gain[5]:+.4f} > at {n_train} subjects "
           f"{gain[n_train]:+.4f}")


# 7 -------------------------------------------------------------------------


def test_07_multiscale(default_corpus):
    datasets, dicts = default_corpus
    target = smallest_target(datasets)
    finest = max(dicts, key=lambda d: d.n_components)
    ops = {"single": assemble_multiscale([finest]), "multiscale": assemble_multiscale(dicts)}
    rep = multiscale_benchmark(datasets, ops, EvalConfig(), folds=20, targets=[target])
    single, multi = rep.accuracies(projection="single"), rep.accuracies(projection="multiscale")
    report(7, "multi-scale trend", len(single) == len(multi) == 20 and multi.mean() >= single.mean(),
           f"target {target}: multiscale ({'/'.join(str(d.n_components) for d in dicts)}) mean {multi.mean():.4f} "
           f">= single ({finest.n_components}) {single.mean():.4f}; higher in {int(np.sum(multi > single))}/20 folds")


# 8 -------------------------------------------------------------------------


def test_08_collapse(default_corpus):
    datasets, dicts = default_corpus
    rng = np.random.default_rng(808)
    op = assemble_multiscale(dicts)
    model = FactoredModel.initialize(op.total_dim, 100, {ds.name: ds.condition_names for ds in datasets}, rng=rng)
    for head in model.heads.values():
        head.bias[:] = rng.standard_normal(head.n_classes)
    worst = 0.0
    for study in model.heads:
        X = rng.standard_normal((100, op.n_voxels)) * math.sqrt(op.n_voxels)
        via_maps = collapse(model, op, study).scores(X)
        worst = max(worst, np.abs(via_maps - scores(model, study, project(op, X))).max())
    report(8, "collapse consistency", worst <= 1e-10,
           f"max |maps score - pipeline score| = {worst:.2e} (<= 1e-10) over {len(model.heads)} studies x 100 inputs")


# 9 -------------------------------------------------------------------------


def _brute_force(Z):
    best = np.inf
    for assign in itertools.product((0, 1), repeat=len(Z)):
        a = np.array(assign)
        if a.min() == a.max():
            continue
        best = min(best, sum(((Z[a == c] - Z[a == c].mean(0)) ** 2).sum() for c in (0, 1)))
    return best


def test_09_kmeans_oracle():
    rng = np.random.default_rng(909)
    gaps = []
    for i in range(20):
        Z = rng.standard_normal((int(rng.integers(2, 11)), int(rng.integers(1, 4))))
        # Lloyd converges to local optima; restarts from k-means++ seeds recover the global one
        gaps.append(kmeans(Z, 2, seed=i, n_init=50).inertia - _brute_force(Z))
    worst = max(gaps)
    report(9, "k-means oracle", worst <= 1e-10,
           f"max (Lloyd WCSS - brute force) over 20 instances = {worst:.1e} (ties allowed)")


# 10 ------------------------------------------------------------------------


def test_10_determinism(tmp_path):
    synth = {"p": 300, "g_true": 6, "condition_dim": 4, "dictionary_sizes": [8, 24], "signal_scales": [0, 1],
             "studies_spec": [{"n_classes": 5, "n_subjects": 10, "name": "big"},
                              {"n_classes": 3, "n_subjects": 6, "samples_per_condition": 2, "name": "small"}]}
    (tmp_path / "synth.json").write_text(json.dumps(synth))
    fast = ["--iterations", "40", "--latent-dim", "8", "--batch-size", "32", "--folds", "3", "--inner-folds", "2"]
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        cli_main(["gen-synth", "--out", str(root / "gen"), "--config", str(tmp_path / "synth.json"), "--seed", "5"])
        cli_main(["project", "--out", str(root / "proj"), "--data", str(root / "gen/datasets"),
                  "--dicts", str(root / "gen/dictionaries")])
        cli_main(["train", "--out", str(root / "train"), "--data", str(root / "proj/datasets"),
                  "--iterations", "60", "--seed", "5"])
        cli_main(["ablate", "--out", str(root / "ablate"), "--data", str(root / "gen/datasets"),
                  "--dicts", str(root / "gen/dictionaries"), "--seed", "5"] + fast)
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
                      if p.is_file() and p.name != "config.json"})
    a, b = trees
    rows = (tmp_path / "a" / "ablate" / "report.csv").read_text().splitlines()[1:]
    ok = a == b and len(rows) == 6 * 3 and any(k.startswith("train/checkpoint/") for k in a)
    report(10, "determinism", ok,
           f"{len(a)} output files (datasets, reduced data, checkpoint, trace, reports) byte-identical across "
           f"two runs: {a == b}; report rows {len(rows)} = 6 variants x 3 folds")


# 11 ------------------------------------------------------------------------


def test_11_ndt_round_trip(tmp_path):
    failures = []
    for dtype in (np.float32, np.float64, np.int64):
        for shape in [(0,), (0, 3), (1,), (1, 1), (), (2, 3), (4, 0, 2), (3, 5, 2)]:
            arr = (np.random.default_rng(1).standard_normal(shape) * 1e3).astype(dtype)
            path = tmp_path / f"{np.dtype(dtype).name}_{'x'.join(map(str, shape))}.ndt"
            write_tensor(path, arr)
            back = read_tensor(path)
            if back.dtype != arr.dtype or back.shape != arr.shape or back.tobytes() != arr.tobytes():
                failures.append(path.name)
    write_tensor(tmp_path / "six.ndt", np.arange(6, dtype=np.float64).reshape(2, 3))
    size = (tmp_path / "six.ndt").stat().st_size
    report(11, "NDT round trip", not failures and size == 70,
           f"24 tensors bit-exact ({len(failures)} failures); 2x3 float64 file is {size} bytes (70)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
