import json
import math
import os

import numpy as np
import pytest

from triage.gnnlayers import init_params, model_forward, model_spec
from triage.harness import (DEFAULT_GRID, RunConfig, ablation_specs,
                            config_hash, evaluate, grid_cells, load_results,
                            run_ablation, run_grid, split_masks, train_model)
from triage.ingest import Dataset, PreprocessReport, save_dataset
from triage.simnet import SimilarityMetric, build_graph


def toy_dataset(n_per_class=30, seed=0, d=16):
    """Four Gaussian-ish clusters in [0,1]^16, linearly separated enough to
    learn but noisy enough to be non-trivial."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    centers = rng.random((4, d)) * 0.5 + 0.25
    for c in range(4):
        pts = centers[c] + rng.normal(scale=0.08, size=(n_per_class, d))
        rows.append(np.clip(pts, 0, 1))
        labels += [c] * n_per_class
    X = np.vstack(rows)
    y = np.array(labels, dtype=np.int32)
    return X, y


def toy_graph(n_per_class=30, seed=0, threshold=0.12):
    X, y = toy_dataset(n_per_class, seed)
    g = build_graph(X, y, SimilarityMetric("euclidean"), threshold)
    g.train_mask, g.eval_mask, g.test_mask = split_masks(y, seed)
    return g


def toy_dataset_file(tmp_path, n_per_class=30, seed=0):
    X, y = toy_dataset(n_per_class, seed)
    ds = Dataset(X, y, [f"f{i}" for i in range(16)], ["numeric"] * 16,
                 np.zeros(16), np.ones(16), {}, seed, PreprocessReport())
    path = str(tmp_path / "toy.bin")
    save_dataset(ds, path)
    return path


# ---------------------------------------------------------------------------
# splits


def test_split_masks_ratios_balanced_400():
    labels = np.repeat(np.arange(4), 100)
    train, ev, test = split_masks(labels, seed=0)
    assert int(train.sum()) == 280
    assert int(test.sum()) == 84
    assert int(ev.sum()) == 36


def test_split_masks_disjoint_exhaustive():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 4, 237)
    train, ev, test = split_masks(labels, seed=3)
    combined = train.astype(int) + ev.astype(int) + test.astype(int)
    np.testing.assert_array_equal(combined, 1)


def test_split_masks_stratified_within_one():
    labels = np.repeat(np.arange(4), 50)
    train, ev, test = split_masks(labels, seed=5)
    for c in range(4):
        cls = labels == c
        assert abs(int((train & cls).sum()) - 35) <= 1
        assert abs(int((test & cls).sum()) - 10.5) <= 1
        assert abs(int((ev & cls).sum()) - 4.5) <= 1


def test_split_masks_deterministic_and_seed_sensitive():
    labels = np.repeat(np.arange(4), 25)
    a = split_masks(labels, seed=7)
    b = split_masks(labels, seed=7)
    c = split_masks(labels, seed=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_split_masks_class_too_small():
    with pytest.raises(ValueError):
        split_masks(np.array([0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]), seed=0)


# ---------------------------------------------------------------------------
# training


def test_evaluate_perfect_and_constant_predictors():
    g = toy_graph()
    spec = model_spec("gcn4")

    class Oracle:
        layers = spec.layers

    # perfect predictor: logits one-hot on the true label
    logits = np.zeros((g.n, 4))
    logits[np.arange(g.n), g.node_labels] = 10.0

    from triage.harness import _score
    acc, confusion = _score(logits.argmax(axis=1), g.node_labels, g.test_mask)
    assert acc == 1.0
    confusion = np.asarray(confusion)
    assert np.all(confusion == np.diag(np.diag(confusion)))

    # constant predictor on a balanced mask is right 1/4 of the time
    acc_const, conf_const = _score(np.zeros(g.n, dtype=int), g.node_labels,
                                   np.ones(g.n, dtype=bool))
    assert abs(acc_const - 0.25) < 1e-12
    assert np.asarray(conf_const)[:, 0].sum() == g.n


def test_confusion_rows_sum_to_class_counts():
    g = toy_graph()
    spec = model_spec("sage5")
    params = init_params(spec, 0)
    acc, confusion = evaluate(params, spec, g, g.test_mask)
    confusion = np.asarray(confusion)
    idx = np.flatnonzero(g.test_mask)
    for c in range(4):
        assert confusion[c].sum() == int((g.node_labels[idx] == c).sum())
    assert 0.0 <= acc <= 1.0


def test_first_epoch_loss_near_ln4():
    g = toy_graph()
    for name in ("gcn4", "sage5"):
        config = RunConfig(seed=1, model=name, epochs=1, patience=5)
        _, result = train_model(g, model_spec(name), config)
        assert abs(result.train_losses[0] - math.log(4)) < 0.3


def test_lr_zero_keeps_parameters():
    g = toy_graph()
    spec = model_spec("gcn4")
    config = RunConfig(seed=2, model="gcn4", lr=0.0, epochs=3, patience=5)
    params, result = train_model(g, spec, config)
    fresh_seed, _, _ = __import__("triage.harness", fromlist=["_rng_streams"])._rng_streams(2, 0)
    fresh = init_params(spec, fresh_seed)
    for k in params:
        np.testing.assert_array_equal(params[k].data, fresh[k].data)


def test_train_model_learns_toy_graph():
    g = toy_graph()
    config = RunConfig(seed=3, model="gcn4", epochs=60, patience=15)
    _, result = train_model(g, model_spec("gcn4"), config)
    assert result.test_accuracy >= 0.6
    assert result.epochs_run <= 60
    assert len(result.eval_accuracies) == result.epochs_run


def test_train_model_deterministic():
    g = toy_graph()
    config = RunConfig(seed=4, model="sage5", epochs=8, patience=8,
                       batch_size=40)
    _, r1 = train_model(g, model_spec("sage5"), config)
    _, r2 = train_model(g, model_spec("sage5"), config)
    assert r1.to_payload() == r2.to_payload()


def test_early_stopping_respects_patience():
    g = toy_graph()
    config = RunConfig(seed=5, model="gcn4", epochs=200, patience=3)
    _, result = train_model(g, model_spec("gcn4"), config)
    assert result.epochs_run < 200
    best = max(result.eval_accuracies)
    assert result.eval_accuracies[result.best_epoch] == best
    # no improvement in the last `patience` epochs
    tail = result.eval_accuracies[result.best_epoch + 1:]
    assert all(a <= best for a in tail)


# ---------------------------------------------------------------------------
# grid


def test_grid_cells_default_matches_published_thresholds():
    cells = grid_cells()
    got = {}
    for cell in cells:
        got.setdefault(cell["metric"], set()).add(cell["threshold"])
    assert got["cosine"] == {0.90, 0.92, 0.94, 0.95, 0.98}
    assert got["euclidean"] == {0.20, 0.23, 0.25, 0.28, 0.31, 0.38}
    assert got["manhattan"] == {0.10, 0.13, 0.22, 0.31, 0.33}
    assert got["minkowski10"] == {0.20, 0.25, 0.30, 0.35, 0.40}
    assert got["minkowski4"] == {0.20, 0.25}
    # gcn assignment: gcn5 on cosine/manhattan, gcn4 on euclidean
    models = {m: set() for m in ("cosine", "euclidean", "manhattan")}
    for cell in cells:
        if cell["metric"] in models:
            models[cell["metric"]].add(cell["model"])
    assert "gcn5" in models["cosine"] and "gcn5" in models["manhattan"]
    assert "gcn4" in models["euclidean"] and "gcn5" not in models["euclidean"]


def test_grid_cardinality_small():
    grid = {"cosine": ([0.95, 0.98], ["gcn5", "sage5"])}
    assert len(grid_cells(grid)) == 4


def test_run_grid_writes_results_and_resumes(tmp_path):
    path = toy_dataset_file(tmp_path)
    out = str(tmp_path / "results")
    grid = {"euclidean": ([0.12], ["knn", "svm", "gcn4"])}
    config = RunConfig(dataset=path, epochs=5, patience=5)
    paths = run_grid(path, out, seed=1, grid=grid, base_config=config)
    assert all(os.path.exists(p) for p in paths)
    with open(os.path.join(out, "results.csv")) as f:
        csv1 = f.read()
    assert csv1.count("\n") == 4  # header + 3 cells
    mtimes = {p: os.path.getmtime(p) for p in paths}
    # resume: nothing is recomputed, final table identical
    paths2 = run_grid(path, out, seed=1, grid=grid, base_config=config)
    assert paths2 == paths
    assert {p: os.path.getmtime(p) for p in paths} == mtimes
    with open(os.path.join(out, "results.csv")) as f:
        assert f.read() == csv1


def test_run_grid_byte_stable_across_directories(tmp_path):
    path = toy_dataset_file(tmp_path)
    grid = {"euclidean": ([0.12], ["gcn4", "knn"])}
    config = RunConfig(dataset=path, epochs=4, patience=4)
    outs = []
    for sub in ("a", "b"):
        out = str(tmp_path / sub)
        run_grid(path, out, seed=2, grid=grid, base_config=config)
        with open(os.path.join(out, "results.csv")) as f:
            outs.append(f.read())
    assert outs[0] == outs[1]
    for name in os.listdir(os.path.join(str(tmp_path / "a"), "cells")):
        with open(os.path.join(str(tmp_path / "a"), "cells", name)) as fa, \
             open(os.path.join(str(tmp_path / "b"), "cells", name)) as fb:
            assert fa.read() == fb.read()


def test_run_grid_parallel_matches_serial(tmp_path):
    path = toy_dataset_file(tmp_path)
    grid = {"euclidean": ([0.12], ["gcn4", "svm"])}
    config = RunConfig(dataset=path, epochs=3, patience=3)
    out_serial = str(tmp_path / "serial")
    out_par = str(tmp_path / "par")
    run_grid(path, out_serial, seed=3, grid=grid, base_config=config, workers=1)
    run_grid(path, out_par, seed=3, grid=grid, base_config=config, workers=2)
    for name in sorted(os.listdir(os.path.join(out_serial, "cells"))):
        with open(os.path.join(out_serial, "cells", name)) as fa, \
             open(os.path.join(out_par, "cells", name)) as fb:
            assert fa.read() == fb.read()


def test_results_roundtrip_parse(tmp_path):
    path = toy_dataset_file(tmp_path)
    out = str(tmp_path / "res")
    grid = {"euclidean": ([0.12], ["knn"])}
    run_grid(path, out, seed=4, grid=grid,
             base_config=RunConfig(dataset=path, epochs=2, patience=2))
    rows = load_results(out)
    assert len(rows) == 1
    with open(os.path.join(out, "results.csv")) as f:
        lines = f.read().strip().split("\n")
    assert len(lines) == 2
    header = lines[0].split(",")
    values = lines[1].split(",")
    rec = dict(zip(header, values))
    assert rec["model"] == "knn"
    assert abs(float(rec["test_accuracy"]) - rows[0]["test_accuracy"]) < 1e-6


# ---------------------------------------------------------------------------
# ablation


def test_ablation_variant_set():
    specs = ablation_specs()
    assert len(specs) == 9  # base + 4 removals x 2 widths
    names = [s.name for s in specs]
    assert names[0] == "sage5"
    assert "sage_rm234_w8" in names and "sage_rm234_w64" in names
    for spec in specs:
        assert spec.layers[0].in_dim == 16
        assert spec.layers[-1].out_dim == 4
        for a, b in zip(spec.layers, spec.layers[1:]):
            assert a.out_dim == b.in_dim
    rm234_w8 = next(s for s in specs if s.name == "sage_rm234_w8")
    assert len(rm234_w8.layers) == 2


def test_run_ablation_produces_all_variants(tmp_path):
    path = toy_dataset_file(tmp_path, n_per_class=20)
    out = str(tmp_path / "abl")
    config = RunConfig(dataset=path, epochs=3, patience=3, batch_size=40)
    paths = run_ablation(path, out, seed=0, base_config=config)
    assert len(paths) == 9
    rows = load_results(out)
    assert len(rows) == 9
    models = {r["model"] for r in rows}
    assert models == {s.name for s in ablation_specs()}


def test_config_hash_sensitivity():
    a = RunConfig(seed=1, model="gcn5", threshold=0.95)
    b = RunConfig(seed=1, model="gcn5", threshold=0.95)
    c = RunConfig(seed=2, model="gcn5", threshold=0.95)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(epochs=0)
    assert RunConfig(model="gat2").resolved_lr() == 0.005
    assert RunConfig(model="gcn5").resolved_lr() == 0.01
    assert RunConfig(model="gcn5", lr=0.2).resolved_lr() == 0.2
